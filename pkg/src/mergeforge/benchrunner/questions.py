"""Question banks: CSV or JSON-lines with the same field names.

Columns: ``id,question,qtype,answer,category,assessment_area,reference``.
"""
from __future__ import annotations

import csv
import enum
import json
import os
from dataclasses import dataclass
from pathlib import Path

from ..errors import SchemaError

FIELDS = ("id", "question", "qtype", "answer", "category", "assessment_area", "reference")


class QType(enum.Enum):
    MC = "MC"
    TF = "TF"

    @property
    def letters(self) -> frozenset[str]:
        return _LETTERS[self]


_LETTERS = {QType.MC: frozenset("ABCD"), QType.TF: frozenset("TF")}
_TF_WORDS = {"TRUE": "T", "FALSE": "F"}


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    qtype: QType
    answer_key: str
    category: str = ""
    assessment_area: str = ""
    reference: str | None = None

    def __post_init__(self):
        if self.answer_key not in self.qtype.letters:
            raise ValueError(f"{self.qtype.value} answer key must be one of {sorted(self.qtype.letters)}")

    def to_row(self) -> dict[str, str]:
        return {
            "id": self.id,
            "question": self.text,
            "qtype": self.qtype.value,
            "answer": self.answer_key,
            "category": self.category,
            "assessment_area": self.assessment_area,
            "reference": self.reference or "",
        }


def _question_from_row(row: dict, rownum: int) -> Question:
    def get(name: str, required: bool = True) -> str:
        value = row.get(name)
        if value is None or (required and str(value).strip() == ""):
            if required:
                raise SchemaError(rownum, name, "missing")
            return ""
        return str(value)

    qid = get("id").strip()
    qtype_raw = get("qtype").strip().upper()
    try:
        qtype = QType(qtype_raw)
    except ValueError:
        raise SchemaError(rownum, "qtype", f"expected MC or TF, got {qtype_raw!r}") from None
    answer = get("answer").strip().upper()
    if qtype is QType.TF:
        answer = _TF_WORDS.get(answer, answer)
    if answer not in qtype.letters:
        raise SchemaError(rownum, "answer", f"{answer!r} is not a valid {qtype.value} key")
    ref = get("reference", required=False).strip()
    return Question(
        id=qid,
        text=get("question", required=False),
        qtype=qtype,
        answer_key=answer,
        category=get("category", required=False).strip(),
        assessment_area=get("assessment_area", required=False).strip(),
        reference=ref or None,
    )


def load_questions(path: str | os.PathLike) -> list[Question]:
    """Load a bank; rows are numbered from 1 (the CSV header is not a row)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, "<line>", f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise SchemaError(lineno, "<line>", "expected an object")
            rows.append((lineno, obj))
    else:
        if not text.strip():
            return []
        reader = csv.DictReader(text.splitlines())
        rows = list(enumerate(reader, 1))
    questions = [_question_from_row(row, n) for n, row in rows]
    seen: set[str] = set()
    for (n, _), q in zip(rows, questions):
        if q.id in seen:
            raise SchemaError(n, "id", f"duplicate id {q.id!r}")
        seen.add(q.id)
    return questions


def write_questions(questions, path: str | os.PathLike) -> None:
    path = Path(path)
    if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        path.write_text("".join(json.dumps(q.to_row()) + "\n" for q in questions), encoding="utf-8")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIELDS)
        writer.writeheader()
        for q in questions:
            writer.writerow(q.to_row())
