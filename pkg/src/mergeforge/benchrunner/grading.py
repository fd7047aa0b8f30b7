"""Answer normalization, transcripts and score reports."""
from __future__ import annotations

import csv
import math
import io
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..errors import EmptyInput, UnknownQuestionId, ZeroBaseline
from .questions import QType, Question

INVALID = None
_STRIP = " \t\r\n.():\"'"
_WORDS = {"TRUE": "T", "FALSE": "F"}


def normalize_answer(raw: str | None, qtype: QType | str) -> str | None:
    """Reduce a response to one option letter, or ``None`` when ambiguous.

    Surrounding whitespace and the characters ``. ( ) : " '`` are stripped,
    the text is upper-cased and only the leading token is considered: an
    option letter valid for ``qtype`` is returned as is, TRUE/FALSE map to
    T/F for true/false questions. Anything else is invalid.
    """
    if raw is None:
        return INVALID
    qtype = QType(qtype) if isinstance(qtype, str) else qtype
    text = raw.strip(_STRIP).upper()
    if not text:
        return INVALID
    token = text.split()[0].strip(_STRIP)
    if token in qtype.letters:
        return token
    if qtype is QType.TF and token in _WORDS:
        return _WORDS[token]
    return INVALID


@dataclass
class Transcript:
    model_id: str
    entries: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for qid, _ in self.entries:
            if qid in seen:
                raise ValueError(f"duplicate question id {qid!r} in transcript")
            seen.add(qid)

    def responses(self) -> dict[str, str]:
        return dict(self.entries)

    def dumps(self) -> str:
        lines = [json.dumps({"model_id": self.model_id})]
        lines += [json.dumps({"id": qid, "response": r}) for qid, r in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Transcript":
        model_id = ""
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "id" not in obj:
                if "model_id" in obj and not entries and lineno == 1:
                    model_id = str(obj["model_id"])
                    continue
                raise ValueError(f"transcript line {lineno}: missing 'id'")
            entries.append((str(obj["id"]), "" if obj.get("response") is None else str(obj["response"])))
        return cls(model_id, entries)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Transcript":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Tally:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.correct, self.total) if self.total else Fraction(0)


@dataclass
class ScoreReport:
    model_id: str
    overall: Tally
    per_category: dict[str, Tally]
    per_qtype: dict[str, Tally]
    invalid_count: int

    @property
    def overall_accuracy(self) -> float:
        return self.overall.accuracy

    def rows(self) -> list[dict]:
        """Flat ``(model_id, category, correct, total, accuracy)`` rows.

        Category names ``__overall__`` and ``__qtype_MC__``/``__qtype_TF__``
        carry the aggregate tallies.
        """
        out = [("__overall__", self.overall)]
        out += sorted(self.per_category.items())
        out += [(f"__qtype_{k}__", v) for k, v in sorted(self.per_qtype.items())]
        return [
            {"model_id": self.model_id, "category": k, "correct": v.correct, "total": v.total, "accuracy": v.accuracy}
            for k, v in out
        ]

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "overall": {"correct": self.overall.correct, "total": self.overall.total, "accuracy": self.overall.accuracy},
            "per_category": {k: vars(v) | {"accuracy": v.accuracy} for k, v in sorted(self.per_category.items())},
            "per_qtype": {k: vars(v) | {"accuracy": v.accuracy} for k, v in sorted(self.per_qtype.items())},
            "invalid_count": self.invalid_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreReport":
        def tally(x):
            return Tally(int(x["correct"]), int(x["total"]))

        return cls(
            d["model_id"],
            tally(d["overall"]),
            {k: tally(v) for k, v in d["per_category"].items()},
            {k: tally(v) for k, v in d["per_qtype"].items()},
            int(d["invalid_count"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["model_id", "category", "correct", "total", "accuracy"], lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow(row | {"accuracy": repr(row["accuracy"])})
        return buf.getvalue()


def grade(tr: Transcript, bank: Sequence[Question]) -> ScoreReport:
    by_id = {q.id: q for q in bank}
    responses = tr.responses()
    for qid in responses:
        if qid not in by_id:
            raise UnknownQuestionId(qid)
    correct = 0
    invalid = 0
    cat: dict[str, list[int]] = {}
    qt: dict[str, list[int]] = {}
    for q in bank:
        letter = normalize_answer(responses.get(q.id), q.qtype)
        if letter is INVALID:
            invalid += 1
        hit = int(letter == q.answer_key)
        correct += hit
        for table, key in ((cat, q.category), (qt, q.qtype.value)):
            slot = table.setdefault(key, [0, 0])
            slot[0] += hit
            slot[1] += 1
    return ScoreReport(
        model_id=tr.model_id,
        overall=Tally(correct, len(bank)),
        per_category={k: Tally(*v) for k, v in cat.items()},
        per_qtype={k: Tally(*v) for k, v in qt.items()},
        invalid_count=invalid,
    )


def relative_improvement(p: float, baseline: float) -> float:
    if baseline <= 0:
        raise ZeroBaseline(f"baseline must be positive, got {baseline}")
    return (p - baseline) / baseline


def average_scores(scores: Iterable[float]) -> float:
    scores = list(scores)
    if not scores:
        raise EmptyInput("no scores to average")
    return math.fsum(scores) / len(scores)
