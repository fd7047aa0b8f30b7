"""Merge-synergy analytics over experiment score tables.

For each merged model with parent accuracies ``P1``, ``P2`` and merged
accuracy ``P_merged``:

* expected score ``E = (P1 + P2) / 2`` and actual score ``A = P_merged``
* performance improvement ``P_merged - max(P1, P2)`` (negative: the merge is
  worse than its best parent)
* diversity ``|P1 - P2|``

``E`` and ``A`` are z-standardized (population standard deviation) and
clustered with k-means and single-linkage agglomeration; strategy flags are
correlated with the scores using Pearson's r.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BadK, MissingParentScores, OutOfRange, SchemaError, TooFew, ZeroVariance
from .tensorstore import atomic_write_bytes

TABLE_FIELDS = (
    "model_id", "parent1_id", "parent2_id", "p_merged", "p1", "p2",
    "sft", "dpo", "orpo", "merged", "instruct_base",
)
DEFAULT_ATTRIBUTES = ("diversity", "improvement", "sft", "dpo_orpo", "instruct_base", "p_merged")


def _check_unit(**values: float | None) -> None:
    for name, v in values.items():
        if v is not None and not (0.0 <= v <= 1.0):
            raise OutOfRange(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class ExperimentRecord:
    model_id: str
    p_merged: float
    parent1_id: str | None = None
    parent2_id: str | None = None
    p1: float | None = None
    p2: float | None = None
    sft: bool = False
    dpo: bool = False
    orpo: bool = False
    merged: bool = False
    instruct_base: bool = False

    def __post_init__(self):
        _check_unit(p_merged=self.p_merged, p1=self.p1, p2=self.p2)
        if self.merged and not self.has_parents:
            raise MissingParentScores(self.model_id)

    @property
    def has_parents(self) -> bool:
        return self.p1 is not None and self.p2 is not None

    @property
    def expected(self) -> float:
        self._need_parents()
        return expected_score(self.p1, self.p2)

    @property
    def improvement(self) -> float:
        self._need_parents()
        return performance_improvement(self.p_merged, self.p1, self.p2)

    @property
    def diversity(self) -> float:
        self._need_parents()
        return diversity(self.p1, self.p2)

    def _need_parents(self):
        if not self.has_parents:
            raise MissingParentScores(self.model_id)

    def attribute(self, name: str) -> float:
        if name == "dpo_orpo":
            return float(self.dpo or self.orpo)
        if name in ("diversity", "improvement", "expected"):
            return getattr(self, name)
        value = getattr(self, name)
        if value is None:
            raise MissingParentScores(self.model_id)
        return float(value)


# --- per-record formulas --------------------------------------------------

def expected_score(p1: float, p2: float) -> float:
    _check_unit(p1=p1, p2=p2)
    return (p1 + p2) / 2


def performance_improvement(p_merged: float, p1: float, p2: float) -> float:
    _check_unit(p_merged=p_merged, p1=p1, p2=p2)
    return p_merged - max(p1, p2)


def diversity(p1: float, p2: float) -> float:
    _check_unit(p1=p1, p2=p2)
    return abs(p1 - p2)


def deviation_ranking(records: Iterable[ExperimentRecord]) -> list[tuple[str, float]]:
    """Records ordered from largest improvement to worst underperformance."""
    ranked = [(r.model_id, r.improvement) for r in records]
    ranked.sort(key=lambda item: (-item[1], item[0]))
    return ranked


def standardize(values: Sequence[float]) -> list[float]:
    values = [float(v) for v in values]
    n = len(values)
    if n < 2:
        raise TooFew(f"need at least 2 values, got {n}")
    mu = math.fsum(values) / n
    sigma = math.sqrt(math.fsum((v - mu) ** 2 for v in values) / n)
    if sigma == 0.0:
        raise ZeroVariance("all values are equal")
    return [(v - mu) / sigma for v in values]


# --- k-means --------------------------------------------------------------

@dataclass
class KMeansResult:
    assignments: list[int]
    centroids: list[list[float]]
    inertia: float
    history: list[float]  # inertia after each Lloyd iteration of the chosen run
    n_iter: int


def _as_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("points must be a list of coordinate tuples")
    return X


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [int(rng.integers(n))]
    d2 = ((X - X[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.choice([i for i in range(n) if i not in centers]))
        centers.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[centers].copy()


def _lloyd(X: np.ndarray, C: np.ndarray, max_iter: int):
    k = len(C)
    d = _sq_dists(X, C)
    labels = d.argmin(axis=1)
    history = [float(d[np.arange(len(X)), labels].sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        C = C.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                C[j] = X[members].mean(axis=0)
        empty = [j for j in range(k) if not (labels == j).any()]
        if empty:
            # re-seed empty clusters at the points farthest from their centroids
            own = ((X - C[labels]) ** 2).sum(axis=1)
            order = np.argsort(-own, kind="stable")
            for j, idx in zip(empty, order):
                C[j] = X[idx]
        d = _sq_dists(X, C)
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(len(X)), new].sum()))
        if np.array_equal(new, labels) and not empty:
            break
        labels = new
    return labels, C, history, n_iter


EXACT_LIMIT = 4096  # labellings searched exhaustively before falling back to Lloyd


def _exact_centroids(X: np.ndarray, k: int) -> np.ndarray | None:
    """Centroids of the SSE-optimal partition, found by enumeration when that is cheap."""
    n = len(X)
    if k ** (n - 1) > EXACT_LIMIT:
        return None
    best, best_sse = None, math.inf
    for tail in itertools.product(range(k), repeat=n - 1):
        labels = np.array((0, *tail))
        if len(set(labels.tolist())) != k:
            continue
        C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        sse = float(((X - C[labels]) ** 2).sum())
        if sse < best_sse:
            best, best_sse = C, sse
    return best


def kmeans(points, k: int = 2, seed: int = 0, *, n_init: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from seeded k-means++ starts; the best of ``n_init`` runs is kept.

    Small inputs also get a Lloyd run started from the exhaustively found
    optimum, so tiny fixtures always reach the global minimum. Cluster ids
    are renumbered in order of first appearance so results compare cleanly.
    """
    X = _as_points(points)
    n = len(X)
    if not 1 <= k <= n:
        raise BadK(f"k={k} with {n} points")
    rng = np.random.default_rng(seed)
    starts = [_kmeanspp(X, k, rng) for _ in range(max(1, n_init))]
    exact = _exact_centroids(X, k)
    if exact is not None:
        starts.append(exact)
    best = None
    for start in starts:
        labels, C, history, n_iter = _lloyd(X, start, max_iter)
        inertia = history[-1]
        if best is None or inertia < best[2][-1]:
            best = (labels, C, history, n_iter)
    labels, C, history, n_iter = best
    remap: dict[int, int] = {}
    for lab in labels:
        remap.setdefault(int(lab), len(remap))
    for j in range(k):
        remap.setdefault(j, len(remap))
    order = sorted(remap, key=remap.get)
    return KMeansResult(
        assignments=[remap[int(lab)] for lab in labels],
        centroids=[[float(v) for v in C[j]] for j in order],
        inertia=history[-1],
        history=history,
        n_iter=n_iter,
    )


# --- hierarchical clustering -----------------------------------------------

@dataclass(frozen=True)
class DendrogramNode:
    id: int
    left: "DendrogramNode | int"
    right: "DendrogramNode | int"
    height: float
    size: int

    def leaves(self) -> list[int]:
        out = []
        for child in (self.left, self.right):
            out.extend([child] if isinstance(child, int) else child.leaves())
        return out

    def merges(self) -> list[tuple[int, int, float, int]]:
        """``(left_id, right_id, height, size)`` rows in merge order (leaves are ``0..n-1``)."""
        rows = []

        def walk(node):
            if isinstance(node, int):
                return
            walk(node.left)
            walk(node.right)
            rows.append((node.id, _id(node.left), _id(node.right), node.height, node.size))

        walk(self)
        rows.sort()
        return [r[1:] for r in rows]


def _id(node) -> int:
    return node if isinstance(node, int) else node.id


def hcluster(points) -> DendrogramNode:
    """Single-linkage agglomeration on Euclidean distance.

    Ties go to the pair whose smallest leaf indices are lowest.
    """
    X = _as_points(points)
    n = len(X)
    if n < 2:
        raise TooFew(f"need at least 2 points, got {n}")
    dist = np.sqrt(_sq_dists(X, X))
    # active clusters keyed by their smallest leaf index
    active: dict[int, DendrogramNode | int] = {i: i for i in range(n)}
    sizes = {i: 1 for i in range(n)}
    link = {(i, j): float(dist[i, j]) for i in range(n) for j in range(i + 1, n)}
    next_id = n
    while len(active) > 1:
        (a, b), height = min(link.items(), key=lambda kv: (kv[1], kv[0]))
        node = DendrogramNode(next_id, active[a], active[b], height, sizes[a] + sizes[b])
        next_id += 1
        del active[b]
        active[a] = node
        sizes[a] += sizes.pop(b)
        for c in active:
            if c == a:
                continue
            ka, kb = (min(a, c), max(a, c)), (min(b, c), max(b, c))
            link[ka] = min(link[ka], link.pop(kb))
        for key in [key for key in link if b in key]:
            del link[key]
    return next(iter(active.values()))


# --- correlations ---------------------------------------------------------

def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson's r, or ``None`` when either column is constant."""
    if len(x) != len(y):
        raise ValueError("columns differ in length")
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(v * v for v in dx)
    syy = math.fsum(v * v for v in dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass
class CorrelationMatrix:
    labels: list[str]
    values: list[list[float | None]]

    def get(self, a: str, b: str) -> float | None:
        return self.values[self.labels.index(a)][self.labels.index(b)]


def correlation_matrix(records: Sequence[ExperimentRecord], attributes: Sequence[str] = DEFAULT_ATTRIBUTES) -> CorrelationMatrix:
    if len(records) < 3:
        raise TooFew(f"need at least 3 records, got {len(records)}")
    cols = [[r.attribute(a) for r in records] for a in attributes]
    m = len(cols)
    values: list[list[float | None]] = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(i, m):
            if i == j:
                r = 1.0 if len(set(cols[i])) > 1 else None
            else:
                r = pearson(cols[i], cols[j])
            values[i][j] = values[j][i] = r
    return CorrelationMatrix(list(attributes), values)


# --- reports --------------------------------------------------------------

@dataclass
class AnalysisReport:
    rows: list[dict] = field(default_factory=list)
    standardized: list[dict] = field(default_factory=list)
    clusters: dict | None = None
    dendrogram: list[dict] = field(default_factory=list)
    correlation: dict | None = None
    deviation_ranking: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def csv_files(self) -> dict[str, str]:
        files = {}
        z = {s["model_id"]: s for s in self.standardized}
        labels = dict(zip([r["model_id"] for r in self.rows], self.clusters["assignments"])) if self.clusters else {}
        files["scatter.csv"] = _csv(
            ["model_id", "expected", "actual", "improvement", "diversity", "z_expected", "z_actual", "cluster"],
            [
                [r["model_id"], r["expected"], r["actual"], r["improvement"], r["diversity"],
                 z.get(r["model_id"], {}).get("z_expected"), z.get(r["model_id"], {}).get("z_actual"),
                 labels.get(r["model_id"])]
                for r in self.rows
            ],
        )
        files["deviation_ranking.csv"] = _csv(
            ["rank", "model_id", "deviation"],
            [[i + 1, d["model_id"], d["deviation"]] for i, d in enumerate(self.deviation_ranking)],
        )
        if self.correlation:
            lab = self.correlation["labels"]
            files["correlation.csv"] = _csv([""] + lab, [[a] + row for a, row in zip(lab, self.correlation["values"])])
        else:
            files["correlation.csv"] = _csv([""], [])
        files["dendrogram.csv"] = _csv(
            ["step", "left", "right", "height", "size"],
            [[i + 1, m["left"], m["right"], m["height"], m["size"]] for i, m in enumerate(self.dendrogram)],
        )
        return files


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header: list, rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def build_report(records: Sequence[ExperimentRecord], k: int = 2, seed: int = 0) -> AnalysisReport:
    """Assemble every analysis over the records that have parent scores.

    Sections that need more data than is available (clustering with fewer
    than ``k`` points or zero spread, correlations with fewer than three
    records) are left empty and noted in ``warnings``.
    """
    report = AnalysisReport()
    merged = [r for r in records if r.has_parents]
    skipped = len(records) - len(merged)
    if skipped:
        report.warnings.append(f"{skipped} record(s) without parent scores excluded")
    if not merged:
        return report

    for r in merged:
        report.rows.append(
            {"model_id": r.model_id, "expected": r.expected, "actual": r.p_merged,
             "improvement": r.improvement, "diversity": r.diversity}
        )
    report.deviation_ranking = [{"model_id": m, "deviation": d} for m, d in deviation_ranking(merged)]

    try:
        ze = standardize([r.expected for r in merged])
        za = standardize([r.p_merged for r in merged])
    except (TooFew, ZeroVariance) as exc:
        report.warnings.append(f"clustering skipped: {exc}")
    else:
        report.standardized = [
            {"model_id": r.model_id, "z_expected": e, "z_actual": a} for r, e, a in zip(merged, ze, za)
        ]
        pts = list(zip(ze, za))
        if len(pts) >= k:
            km = kmeans(pts, k, seed)
            report.clusters = {"k": k, "seed": seed, "assignments": km.assignments,
                               "centroids": km.centroids, "inertia": km.inertia}
        else:
            report.warnings.append(f"k-means skipped: {len(pts)} point(s) for k={k}")
        report.dendrogram = [
            {"left": left, "right": right, "height": h, "size": s} for left, right, h, s in hcluster(pts).merges()
        ]

    if len(merged) >= 3:
        cm = correlation_matrix(merged)
        report.correlation = {"labels": cm.labels, "values": cm.values}
    else:
        report.warnings.append("correlation matrix skipped: fewer than 3 records")
    return report


def write_report(report: AnalysisReport, out_dir: str | os.PathLike) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    payloads = {"report.json": report.to_json(), **report.csv_files()}
    for name, text in payloads.items():
        path = out_dir / name
        atomic_write_bytes(path, text.encode("utf-8"))
        written.append(path)
    return written


def read_report(path: str | os.PathLike) -> AnalysisReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return AnalysisReport.from_dict(json.loads(path.read_text(encoding="utf-8")))


# --- score tables ---------------------------------------------------------

_TRUE = {"1", "true", "yes"}
_FALSE = {"0", "false", "no", ""}


def _parse_bool(raw: str, row: int, name: str) -> bool:
    v = (raw or "").strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise SchemaError(row, name, f"expected 0/1, got {raw!r}")


def _parse_score(raw: str | None, row: int, name: str, required: bool) -> float | None:
    v = (raw or "").strip()
    if not v:
        if required:
            raise SchemaError(row, name, "missing")
        return None
    try:
        x = float(v)
    except ValueError:
        raise SchemaError(row, name, f"not a number: {raw!r}") from None
    if not 0.0 <= x <= 1.0:
        raise SchemaError(row, name, f"{x} outside [0, 1]")
    return x


def parse_table(text: str) -> list[ExperimentRecord]:
    if not text.strip():
        return []
    reader = csv.DictReader(io.StringIO(text))
    missing = [f for f in ("model_id", "p_merged") if f not in (reader.fieldnames or [])]
    if missing:
        raise SchemaError(0, missing[0], "column absent from header")
    records = []
    seen = set()
    for n, row in enumerate(reader, 1):
        mid = (row.get("model_id") or "").strip()
        if not mid:
            raise SchemaError(n, "model_id", "missing")
        if mid in seen:
            raise SchemaError(n, "model_id", f"duplicate {mid!r}")
        seen.add(mid)
        flags = {f: _parse_bool(row.get(f), n, f) for f in ("sft", "dpo", "orpo", "merged", "instruct_base")}
        p1 = _parse_score(row.get("p1"), n, "p1", flags["merged"])
        p2 = _parse_score(row.get("p2"), n, "p2", flags["merged"])
        records.append(
            ExperimentRecord(
                model_id=mid,
                p_merged=_parse_score(row.get("p_merged"), n, "p_merged", True),
                parent1_id=(row.get("parent1_id") or "").strip() or None,
                parent2_id=(row.get("parent2_id") or "").strip() or None,
                p1=p1,
                p2=p2,
                **flags,
            )
        )
    return records


def load_table(path: str | os.PathLike) -> list[ExperimentRecord]:
    return parse_table(Path(path).read_text(encoding="utf-8"))


def format_table(records: Iterable[ExperimentRecord]) -> str:
    rows = []
    for r in records:
        rows.append([r.model_id, r.parent1_id or "", r.parent2_id or "", r.p_merged, r.p1, r.p2,
                     int(r.sft), int(r.dpo), int(r.orpo), int(r.merged), int(r.instruct_base)])
    return _csv(list(TABLE_FIELDS), rows)
