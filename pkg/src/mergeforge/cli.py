"""Command-line entry point: ``mergeforge {merge,score,analyze,render-chat}``.

Exit status: 0 success, 1 validation or data errors, 2 usage errors,
3 I/O or network failures. Progress goes to stderr; paths of written
artifacts go to stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis, mergecore
from .benchrunner import client as bench_client
from .benchrunner.grading import Transcript, grade
from .benchrunner.prompts import ChatFamily, render_chat
from .benchrunner.questions import load_questions
from .errors import (
    CheckpointError,
    EndpointError,
    IoFailure,
    MergeError,
    MergeForgeError,
    RecipeError,
    SchemaError,
)
from .recipe import load_recipe, validate
from .tensorstore import atomic_write_bytes, read_checkpoint, write_checkpoint

OK, INVALID, USAGE, IO = 0, 1, 2, 3

log = logging.getLogger("mergeforge")


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _env(name: str, default=None):
    return os.environ.get(f"MERGEFORGE_{name}", default)


# --- merge ----------------------------------------------------------------

def cmd_merge(args) -> int:
    recipe = load_recipe(args.recipe)
    if args.sources:
        if len(args.sources) != 2:
            raise UsageError("give exactly two source checkpoints (or none to use the recipe's model paths)")
        paths = [Path(p) for p in args.sources]
    else:
        base = Path(args.recipe).parent
        paths = [Path(m) if Path(m).is_absolute() else base / m for m in recipe.sources]
    A, B = read_checkpoint(paths[0]), read_checkpoint(paths[1])

    report = validate(recipe, A, B)
    if not report.ok:
        for v in report.violations:
            _err(str(v))
        return INVALID

    if args.dry_run:
        plan = mergecore.plan_merge(recipe, A, B)
        width = max((len(e.out_name) for e in plan), default=4)
        print(f"{'tensor':<{width}}  t")
        for e in plan:
            print(f"{e.out_name:<{width}}  {'copy' if e.t is None else format(e.t, '.10g')}")
        return OK

    if not args.out:
        raise UsageError("--out is required unless --dry-run is given")
    merged = mergecore.merge_checkpoints(recipe, A, B, workers=args.workers)
    write_checkpoint(merged, args.out)
    _err(f"merged {len(merged)} tensors ({recipe.method.value}, {recipe.out_dtype.value})")
    print(args.out)
    return OK


# --- score ----------------------------------------------------------------

def cmd_score(args) -> int:
    endpoint = args.endpoint
    if args.transcript and endpoint:
        raise UsageError("--transcript and --endpoint are mutually exclusive")
    if not args.transcript and not endpoint:
        endpoint = _env("ENDPOINT")
    if not args.transcript and not endpoint:
        raise UsageError("one of --transcript or --endpoint is required")

    bank = load_questions(args.questions)
    if args.transcript:
        transcript = Transcript.load(args.transcript)
    else:
        if not args.model:
            raise UsageError("--model is required with --endpoint")
        _err(f"querying {endpoint} for {len(bank)} questions")
        transcript = bench_client.collect_transcript(
            endpoint, args.model, bank,
            template=args.template, system=args.system, concurrency=args.concurrency,
        )
        if args.save_transcript:
            transcript.save(args.save_transcript)
            print(args.save_transcript)

    report = grade(transcript, bank)
    o = report.overall
    _err(f"accuracy {o.accuracy:.6f} ({o.correct}/{o.total}), invalid {report.invalid_count}")
    if args.out:
        out = Path(args.out)
        text = report.to_csv() if out.suffix.lower() == ".csv" else report.to_json()
        atomic_write_bytes(out, text.encode("utf-8"))
        print(out)
    return OK


# --- analyze --------------------------------------------------------------

def cmd_analyze(args) -> int:
    records = analysis.load_table(args.table)
    if not records:
        _err("warning: score table is empty")
    seed = args.seed if args.seed is not None else int(_env("SEED", "0"))
    report = analysis.build_report(records, k=args.k, seed=seed)
    for w in report.warnings:
        _err(f"warning: {w}")
    for i, row in enumerate(report.deviation_ranking, 1):
        _err(f"{i:3d}. {row['model_id']}  {row['deviation']:+.4f}")
    for path in analysis.write_report(report, args.out):
        print(path)
    return OK


# --- render-chat ----------------------------------------------------------

def cmd_render_chat(args) -> int:
    turns = list(args.turns)
    if args.turns_file:
        data = json.loads(Path(args.turns_file).read_text(encoding="utf-8"))
        if not isinstance(data, list):
            raise UsageError("--turns-file must hold a JSON list of strings")
        turns.extend(data)
    sys.stdout.write(render_chat(ChatFamily(args.family), args.system, turns))
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mergeforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("merge", help="merge two checkpoints per a recipe")
    m.add_argument("recipe")
    m.add_argument("sources", nargs="*", help="source1 and source2 checkpoint files")
    m.add_argument("--out")
    m.add_argument("--dry-run", action="store_true", help="print the per-tensor t table and exit")
    m.add_argument("--workers", type=int, default=1)
    m.set_defaults(func=cmd_merge)

    s = sub.add_parser("score", help="grade a model on a question bank")
    s.add_argument("--questions", required=True)
    s.add_argument("--transcript")
    s.add_argument("--endpoint", help="chat-completions server (env MERGEFORGE_ENDPOINT)")
    s.add_argument("--model")
    s.add_argument("--template", choices=["raw"] + [f.value for f in ChatFamily], default="raw")
    s.add_argument("--system", default="")
    s.add_argument("--concurrency", type=int, default=bench_client.DEFAULT_CONCURRENCY)
    s.add_argument("--save-transcript")
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    a = sub.add_parser("analyze", help="merge-synergy analysis of a score table")
    a.add_argument("--table", required=True)
    a.add_argument("--k", type=int, default=2)
    a.add_argument("--seed", type=int, default=None, help="k-means seed (env MERGEFORGE_SEED, default 0)")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("render-chat", help="render a conversation with a chat template")
    r.add_argument("--family", choices=[f.value for f in ChatFamily], required=True)
    r.add_argument("--system", default="")
    r.add_argument("--turns-file")
    r.add_argument("turns", nargs="*")
    r.set_defaults(func=cmd_render_chat)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _err(f"error: {exc}")
        return USAGE
    except (IoFailure, EndpointError, OSError) as exc:
        _err(f"error: {exc}")
        return IO
    except (MergeError, RecipeError, SchemaError, CheckpointError, MergeForgeError, ValueError) as exc:
        _err(f"error: {type(exc).__name__}: {exc}")
        return INVALID


if __name__ == "__main__":
    sys.exit(main())
