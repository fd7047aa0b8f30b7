"""Spherical and linear interpolation of checkpoints.

Each tensor is flattened and interpolated as one vector::

    slerp(a, b, t) = |a|^(1-t) |b|^t * (sin((1-t)w)/sin(w) * a/|a| + sin(tw)/sin(w) * b/|b|)

where ``cos w`` is the cosine similarity of ``a`` and ``b``. The interpolation
parameter for a tensor comes from a :class:`ParameterPolicy`: the first
filter whose pattern occurs in the tensor name supplies a piecewise-linear
schedule over normalized layer depth.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import _backend
from .errors import EmptyAnchors, LengthMismatch, MissingTensorInBase, NameMismatch, ShapeMismatch
from .tensorstore import Checkpoint, DType, TensorRecord, cast, decode_f64

if TYPE_CHECKING:
    from .recipe import MergeRecipe

# |cos w| at or above this is treated as colinear and merged linearly
DOT_THRESHOLD = 0.9995

_LAYER_RE = re.compile(r"(?:^|\.)layers\.(\d+)\.")


class MergeMethod(enum.Enum):
    SLERP = "slerp"
    LERP = "lerp"


@dataclass(frozen=True)
class TSchedule:
    anchors: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(float(a) for a in self.anchors))
        if not self.anchors:
            raise EmptyAnchors("a schedule needs at least one anchor")
        for a in self.anchors:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"anchor {a} outside [0, 1]")

    @classmethod
    def constant(cls, value: float) -> "TSchedule":
        return cls((value,))

    def __call__(self, x: float) -> float:
        return schedule_eval(self, x)


@dataclass(frozen=True)
class FilterRule:
    pattern: str
    schedule: TSchedule

    def __post_init__(self):
        if not self.pattern:
            raise ValueError("filter pattern must be non-empty")


@dataclass(frozen=True)
class ParameterPolicy:
    rules: tuple[FilterRule, ...] = ()
    default: TSchedule = field(default_factory=lambda: TSchedule.constant(0.5))

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    def schedule_for(self, tensor_name: str) -> TSchedule:
        for rule in self.rules:
            if rule.pattern in tensor_name:
                return rule.schedule
        return self.default


# --- vector interpolation -------------------------------------------------

def _as_flat(v) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(v, dtype=np.float64).ravel())


def lerp_vec(theta1, theta2, t: float) -> np.ndarray:
    a, b = _as_flat(theta1), _as_flat(theta2)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths {a.size} and {b.size} differ")
    return _backend.axpby(a, b, 1.0 - t, t)


def slerp_vec(theta1, theta2, t: float) -> np.ndarray:
    """Spherical interpolation with magnitude re-scaling.

    Falls back to :func:`lerp_vec` on the raw vectors when either vector is
    zero or when the two are (anti)parallel to within ``DOT_THRESHOLD``.
    ``t == 0`` and ``t == 1`` return copies of the endpoints exactly.
    """
    a, b = _as_flat(theta1), _as_flat(theta2)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths {a.size} and {b.size} differ")
    if a.size == 0:
        raise LengthMismatch("cannot interpolate empty vectors")
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    dot, aa, bb = _backend.dot_norms(a, b)
    na, nb = math.sqrt(aa), math.sqrt(bb)
    if na == 0.0 or nb == 0.0 or not (math.isfinite(na) and math.isfinite(nb)):
        return _backend.axpby(a, b, 1.0 - t, t)
    cos_w = min(1.0, max(-1.0, dot / (na * nb)))
    if abs(cos_w) >= DOT_THRESHOLD:
        return _backend.axpby(a, b, 1.0 - t, t)
    w = math.acos(cos_w)
    sin_w = math.sin(w)
    scale = na ** (1.0 - t) * nb**t
    ca = scale * math.sin((1.0 - t) * w) / (sin_w * na)
    cb = scale * math.sin(t * w) / (sin_w * nb)
    return _backend.axpby(a, b, ca, cb)


# --- schedules ------------------------------------------------------------

def schedule_eval(s: TSchedule, x: float) -> float:
    """Piecewise-linear interpolation of equally spaced anchors at depth ``x``."""
    anchors = s.anchors
    if not anchors:
        raise EmptyAnchors("a schedule needs at least one anchor")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"depth {x} outside [0, 1]")
    k = len(anchors)
    if k == 1:
        return anchors[0]
    pos = x * (k - 1)
    i = min(int(pos), k - 2)
    frac = pos - i
    if frac == 0.0:
        return anchors[i]
    if frac == 1.0:
        return anchors[i + 1]
    if frac == 0.5:
        return (anchors[i] + anchors[i + 1]) / 2
    return (1.0 - frac) * anchors[i] + frac * anchors[i + 1]


def layer_index(tensor_name: str) -> int | None:
    m = _LAYER_RE.search(tensor_name)
    return int(m.group(1)) if m else None


def resolve_t(tensor_name: str, n_layers: int, policy: ParameterPolicy) -> float:
    if n_layers < 1:
        raise ValueError("n_layers must be positive")
    schedule = policy.schedule_for(tensor_name)
    idx = layer_index(tensor_name)
    if idx is None:
        return schedule_eval(policy.default, 0.5)
    x = 0.0 if n_layers == 1 else idx / (n_layers - 1)
    return schedule_eval(schedule, min(max(x, 0.0), 1.0))


# --- tensors and checkpoints ---------------------------------------------

def merge_tensor(a: TensorRecord, b: TensorRecord, t: float, method: MergeMethod) -> TensorRecord:
    """Merge two same-shaped tensors; the result is float64."""
    if a.name != b.name:
        raise NameMismatch(f"{a.name!r} vs {b.name!r}")
    if a.shape != b.shape:
        raise ShapeMismatch(a.name, a.shape, b.shape)
    va, vb = decode_f64(a), decode_f64(b)
    if va.size == 0:
        merged = va
    elif method is MergeMethod.SLERP:
        merged = slerp_vec(va, vb, t)
    else:
        merged = lerp_vec(va, vb, t)
    return TensorRecord(a.name, DType.F64, a.shape, merged.astype("<f8").tobytes())


def _rename_layer(name: str, old: int, new: int) -> str:
    return re.sub(rf"(^|\.)layers\.{old}\.", rf"\g<1>layers.{new}.", name, count=1)


@dataclass(frozen=True)
class MergePlanEntry:
    """One output tensor: where its operands come from and with which t."""

    out_name: str
    name_a: str | None
    name_b: str | None
    t: float | None  # None: copied from the base source

    @property
    def merged(self) -> bool:
        return self.t is not None


def slice_names(ckpt: Checkpoint, begin: int, end: int) -> dict[str, str]:
    """Map output name -> source name for tensors kept by a layer slice."""
    out = {}
    for name in ckpt.names():
        idx = layer_index(name)
        if idx is None:
            out[name] = name
        elif begin <= idx < end:
            out[_rename_layer(name, idx, idx - begin)] = name
    return out


def plan_merge(recipe: "MergeRecipe", A: Checkpoint, B: Checkpoint) -> list[MergePlanEntry]:
    """Resolve every output tensor and its interpolation parameter."""
    (b1, e1), (b2, e2) = recipe.layer_ranges
    n_layers = e1 - b1
    names_a = slice_names(A, b1, e1)
    names_b = slice_names(B, b2, e2)
    base_names = names_a if recipe.base == 0 else names_b
    plan = []
    for out in sorted(set(names_a) | set(names_b)):
        na, nb = names_a.get(out), names_b.get(out)
        if na is not None and nb is not None:
            plan.append(MergePlanEntry(out, na, nb, resolve_t(out, n_layers, recipe.policy)))
        elif out in base_names:
            plan.append(MergePlanEntry(out, na, nb, None))
        else:
            raise MissingTensorInBase(out)
    return plan


def recipe_fingerprint(recipe: "MergeRecipe") -> str:
    payload = json.dumps(recipe.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def merge_checkpoints(
    recipe: "MergeRecipe",
    A: Checkpoint,
    B: Checkpoint,
    *,
    workers: int = 1,
) -> Checkpoint:
    """Merge ``A`` (first source) with ``B`` (second source) per ``recipe``.

    Tensors are independent, so ``workers > 1`` only changes wall time; the
    result is identical to the sequential merge.
    """
    plan = plan_merge(recipe, A, B)
    bad = [e for e in plan if e.merged and A[e.name_a].shape != B[e.name_b].shape]
    if bad:
        first = bad[0]
        raise ShapeMismatch(
            first.out_name, A[first.name_a].shape, B[first.name_b].shape, tuple(e.out_name for e in bad[1:])
        )

    def run(entry: MergePlanEntry) -> TensorRecord:
        if entry.merged:
            ra, rb = A[entry.name_a], B[entry.name_b]
            ra = TensorRecord(entry.out_name, ra.dtype, ra.shape, ra.data)
            rb = TensorRecord(entry.out_name, rb.dtype, rb.shape, rb.data)
            out = merge_tensor(ra, rb, entry.t, recipe.method)
        else:
            src = A[entry.name_a] if recipe.base == 0 else B[entry.name_b]
            out = TensorRecord(entry.out_name, src.dtype, src.shape, src.data)
        return cast(out, recipe.out_dtype)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, plan))
    else:
        records = [run(e) for e in plan]
    metadata = {
        "merge_method": recipe.method.value,
        "recipe_sha256": recipe_fingerprint(recipe),
    }
    return Checkpoint.from_records(records, metadata)

