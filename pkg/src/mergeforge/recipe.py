"""Merge recipes in the MergeKit YAML shape.

Example::

    slices:
      - sources:
          - model: org/finetuned
            layer_range: [0, 32]
          - model: org/instruct
            layer_range: [0, 32]
    merge_method: slerp
    base_model: org/instruct
    parameters:
      t:
        - filter: self_attn
          value: [0, 0.5, 0.3, 0.7, 1]
        - filter: mlp
          value: [1, 0.5, 0.7, 0.3, 0]
        - value: 0.5
    dtype: bfloat16

The JSON spelling of the same document is accepted too. Only one slice with
exactly two sources is supported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

from .errors import InvalidAnchor, MissingField, ParseError, UnknownMethod
from .mergecore import FilterRule, MergeMethod, ParameterPolicy, TSchedule, layer_index, slice_names
from .tensorstore import Checkpoint, DType

DTYPE_NAMES = {
    "bfloat16": DType.BF16,
    "bf16": DType.BF16,
    "float16": DType.F16,
    "fp16": DType.F16,
    "half": DType.F16,
    "float32": DType.F32,
    "fp32": DType.F32,
    "float": DType.F32,
    "float64": DType.F64,
    "fp64": DType.F64,
    "double": DType.F64,
}
_CANONICAL_DTYPE = {DType.BF16: "bfloat16", DType.F16: "float16", DType.F32: "float32", DType.F64: "float64"}


@dataclass(frozen=True)
class MergeRecipe:
    sources: tuple[str, str]
    layer_ranges: tuple[tuple[int, int], tuple[int, int]]
    method: MergeMethod
    base: int  # index into sources
    policy: ParameterPolicy
    out_dtype: DType

    def __post_init__(self):
        (b1, e1), (b2, e2) = self.layer_ranges
        if e1 - b1 != e2 - b2:
            raise ValueError("source layer ranges differ in length")
        if self.base not in (0, 1):
            raise ValueError("base must be 0 or 1")

    @property
    def base_model(self) -> str:
        return self.sources[self.base]

    @property
    def n_layers(self) -> int:
        begin, end = self.layer_ranges[0]
        return end - begin

    def to_dict(self) -> dict:
        def value(s: TSchedule):
            return s.anchors[0] if len(s.anchors) == 1 else list(s.anchors)

        t = [{"filter": r.pattern, "value": value(r.schedule)} for r in self.policy.rules]
        t.append({"value": value(self.policy.default)})
        return {
            "slices": [
                {
                    "sources": [
                        {"model": m, "layer_range": list(r)}
                        for m, r in zip(self.sources, self.layer_ranges)
                    ]
                }
            ],
            "merge_method": self.method.value,
            "base_model": self.base_model,
            "parameters": {"t": t},
            "dtype": _CANONICAL_DTYPE[self.out_dtype],
        }


def emit_recipe(recipe: MergeRecipe) -> str:
    return yaml.safe_dump(recipe.to_dict(), sort_keys=False, default_flow_style=None)


# --- parsing over the YAML node graph (keeps line numbers) -----------------

_constructor = yaml.SafeLoader("")


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node, what: str):
    if not isinstance(node, yaml.ScalarNode):
        raise ParseError(_line(node), f"{what} must be a scalar")
    try:
        return _constructor.construct_object(node, deep=True)
    except yaml.YAMLError as exc:
        raise ParseError(_line(node), f"{what}: {exc}") from None


def _string(node, what: str) -> str:
    value = _scalar(node, what)
    if not isinstance(value, str) or not value:
        raise ParseError(_line(node), f"{what} must be a non-empty string")
    return value


def _mapping(node, what: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise ParseError(_line(node), f"{what} must be a mapping")
    out = {}
    for knode, vnode in node.value:
        key = _scalar(knode, f"key in {what}")
        if not isinstance(key, str):
            raise ParseError(_line(knode), f"non-string key {key!r} in {what}")
        if key in out:
            raise ParseError(_line(knode), f"duplicate key {key!r} in {what}")
        out[key] = vnode
    return out


def _sequence(node, what: str) -> list:
    if not isinstance(node, yaml.SequenceNode):
        raise ParseError(_line(node), f"{what} must be a list")
    return list(node.value)


def _require(m: dict, key: str, path: str):
    if key not in m:
        raise MissingField(path)
    return m[key]


def _number(node, what: str) -> float:
    value = _scalar(node, what)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(_line(node), f"{what} must be a number, got {value!r}")
    return float(value)


def _schedule(node, what: str) -> TSchedule:
    if isinstance(node, yaml.SequenceNode):
        items = [_number(n, what) for n in node.value]
    else:
        items = [_number(node, what)]
    if not items:
        raise InvalidAnchor(f"line {_line(node)}: {what} has no anchors")
    for a in items:
        if not (0.0 <= a <= 1.0) or math.isnan(a):
            raise InvalidAnchor(f"line {_line(node)}: anchor {a} in {what} outside [0, 1]")
    return TSchedule(tuple(items))


def _layer_range(node, what: str) -> tuple[int, int]:
    items = _sequence(node, what)
    if len(items) != 2:
        raise ParseError(_line(node), f"{what} must be [begin, end]")
    bounds = []
    for n in items:
        v = _scalar(n, what)
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ParseError(_line(n), f"{what} entries must be non-negative integers")
        bounds.append(v)
    if bounds[0] >= bounds[1]:
        raise ParseError(_line(node), f"{what} is empty: {bounds}")
    return bounds[0], bounds[1]


def _policy(node) -> ParameterPolicy:
    if isinstance(node, yaml.ScalarNode):
        return ParameterPolicy((), _schedule(node, "parameters.t"))
    rules = []
    default = None
    for i, entry in enumerate(_sequence(node, "parameters.t")):
        m = _mapping(entry, f"parameters.t[{i}]")
        sched = _schedule(_require(m, "value", f"parameters.t[{i}].value"), f"parameters.t[{i}].value")
        if "filter" in m:
            rules.append(FilterRule(_string(m["filter"], f"parameters.t[{i}].filter"), sched))
        elif default is not None:
            raise ParseError(_line(entry), "more than one unfiltered t entry")
        else:
            default = sched
    if default is None:
        raise MissingField("parameters.t (unfiltered default value)")
    return ParameterPolicy(tuple(rules), default)


def _parse_tree(root) -> MergeRecipe:
    if root is None:
        raise MissingField("slices")
    top = _mapping(root, "recipe")

    slices = _sequence(_require(top, "slices", "slices"), "slices")
    if len(slices) != 1:
        raise ParseError(_line(top["slices"]), f"exactly one slice is supported, got {len(slices)}")
    sl = _mapping(slices[0], "slices[0]")
    srcs_node = _require(sl, "sources", "slices[0].sources")
    srcs = _sequence(srcs_node, "slices[0].sources")
    if len(srcs) != 2:
        raise ParseError(_line(srcs_node), f"exactly two sources are supported, got {len(srcs)}")
    models, ranges = [], []
    for i, s in enumerate(srcs):
        path = f"slices[0].sources[{i}]"
        m = _mapping(s, path)
        models.append(_string(_require(m, "model", f"{path}.model"), f"{path}.model"))
        ranges.append(_layer_range(_require(m, "layer_range", f"{path}.layer_range"), f"{path}.layer_range"))
    if ranges[0][1] - ranges[0][0] != ranges[1][1] - ranges[1][0]:
        raise ParseError(_line(srcs_node), f"layer ranges {ranges[0]} and {ranges[1]} differ in length")

    method_node = _require(top, "merge_method", "merge_method")
    method_name = _string(method_node, "merge_method").lower()
    try:
        method = MergeMethod(method_name)
    except ValueError:
        raise UnknownMethod(f"line {_line(method_node)}: unsupported merge_method {method_name!r}") from None

    base_node = _require(top, "base_model", "base_model")
    base_model = _string(base_node, "base_model")
    if base_model not in models:
        raise ParseError(_line(base_node), f"base_model {base_model!r} is not one of the sources")
    base = models.index(base_model)

    params = _mapping(_require(top, "parameters", "parameters"), "parameters")
    policy = _policy(_require(params, "t", "parameters.t"))

    dtype_node = _require(top, "dtype", "dtype")
    dtype_name = _string(dtype_node, "dtype").lower()
    if dtype_name not in DTYPE_NAMES:
        raise ParseError(_line(dtype_node), f"unsupported dtype {dtype_name!r}")

    return MergeRecipe(
        sources=(models[0], models[1]),
        layer_ranges=(ranges[0], ranges[1]),
        method=method,
        base=base,
        policy=policy,
        out_dtype=DTYPE_NAMES[dtype_name],
    )


def parse_recipe(text: str) -> MergeRecipe:
    """Parse recipe text. Raises only :class:`~mergeforge.errors.RecipeError` subclasses."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ParseError(mark.line + 1 if mark else None, exc.problem or str(exc)) from None
    except yaml.YAMLError as exc:
        raise ParseError(None, str(exc)) from None
    except RecursionError:
        raise ParseError(None, "document nested too deeply") from None
    return _parse_tree(root)


def load_recipe(path) -> MergeRecipe:
    with open(path, encoding="utf-8") as fh:
        return parse_recipe(fh.read())


# --- validation against checkpoints ---------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str  # MissingTensor | ShapeMismatch | LayerCount
    name: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(recipe: MergeRecipe, A: Checkpoint, B: Checkpoint) -> ValidationReport:
    """Check two checkpoints against a recipe, collecting every violation."""
    report = ValidationReport()
    labels = ("source1", "source2")
    views = []
    for label, ckpt, (begin, end) in zip(labels, (A, B), recipe.layer_ranges):
        present = {layer_index(n) for n in ckpt.names()} - {None}
        missing = [i for i in range(begin, end) if i not in present]
        if missing:
            report.violations.append(
                Violation("LayerCount", label, f"{label} lacks layers {missing} of range [{begin}, {end})")
            )
        views.append(slice_names(ckpt, begin, end))
    va, vb = views
    for out in sorted(set(va) | set(vb)):
        if out not in va or out not in vb:
            lacking, having = ("source1", vb[out]) if out not in va else ("source2", va[out])
            report.violations.append(Violation("MissingTensor", having, f"{lacking} has no tensor {having}"))
            continue
        sa, sb = A[va[out]].shape, B[vb[out]].shape
        if sa != sb:
            report.violations.append(
                Violation("ShapeMismatch", out, f"{out}: {list(sa)} vs {list(sb)}")
            )
    return report
