"""Reading and writing checkpoints in the safetensors container layout.

File layout::

    [u64 little-endian N][N bytes UTF-8 JSON header][data buffer]

The header maps each tensor name to ``{"dtype", "shape", "data_offsets"}``
with offsets relative to the start of the data buffer, plus an optional
``"__metadata__"`` object of string pairs. Tensors are stored raw, row-major
and little-endian. Files written here carry no alignment padding and list
tensors in lexicographic order, so identical checkpoints serialize to
identical bytes.
"""
from __future__ import annotations

import enum
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import _backend
from .errors import IoFailure, MalformedHeader, OverlappingTensors, TruncatedData, UnknownDType

METADATA_KEY = "__metadata__"


class DType(enum.Enum):
    F64 = "F64"
    F32 = "F32"
    F16 = "F16"
    BF16 = "BF16"

    @property
    def width(self) -> int:
        return _WIDTH[self]

    @property
    def storage(self) -> np.dtype:
        """Little-endian numpy dtype used for the raw bytes."""
        return _STORAGE[self]

    @classmethod
    def parse(cls, tag: str) -> "DType":
        try:
            return cls(tag)
        except ValueError:
            raise UnknownDType(f"unsupported dtype {tag!r}") from None


_WIDTH = {DType.F64: 8, DType.F32: 4, DType.F16: 2, DType.BF16: 2}
_STORAGE = {
    DType.F64: np.dtype("<f8"),
    DType.F32: np.dtype("<f4"),
    DType.F16: np.dtype("<f2"),
    DType.BF16: np.dtype("<u2"),
}
# canonical quiet NaN bit patterns written by cast()
_QNAN = {
    DType.F64: np.array([0x7FF8000000000000], dtype="<u8"),
    DType.F32: np.array([0x7FC00000], dtype="<u4"),
    DType.F16: np.array([0x7E00], dtype="<u2"),
    DType.BF16: np.array([0x7FC0], dtype="<u2"),
}


def numel(shape: Iterable[int]) -> int:
    return math.prod(shape)


@dataclass(frozen=True)
class TensorRecord:
    name: str
    dtype: DType
    shape: tuple[int, ...]
    data: bytes = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 0 for d in self.shape):
            raise ValueError(f"{self.name}: negative dimension in {self.shape}")
        expected = numel(self.shape) * self.dtype.width
        if len(self.data) != expected:
            raise ValueError(
                f"{self.name}: {len(self.data)} data bytes, expected {expected} "
                f"for {self.dtype.value}{list(self.shape)}"
            )

    @property
    def nbytes(self) -> int:
        return len(self.data)

    @classmethod
    def from_array(cls, name: str, values, dtype: DType = DType.F32) -> "TensorRecord":
        """Encode real values into ``dtype`` with round-to-nearest-even."""
        arr = np.asarray(values, dtype=np.float64)
        return cls(name, dtype, arr.shape, _encode(arr.ravel(), dtype))

    def to_array(self) -> np.ndarray:
        """Values widened to float64, in the tensor's shape."""
        return decode_f64(self).reshape(self.shape)


@dataclass
class Checkpoint:
    tensors: dict[str, TensorRecord] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for key, rec in self.tensors.items():
            if key != rec.name:
                raise ValueError(f"tensor stored under {key!r} is named {rec.name!r}")
        self.tensors = dict(sorted(self.tensors.items()))
        self.metadata = {str(k): str(v) for k, v in self.metadata.items()}

    @classmethod
    def from_records(cls, records: Iterable[TensorRecord], metadata: Mapping[str, str] | None = None):
        tensors: dict[str, TensorRecord] = {}
        for rec in records:
            if rec.name in tensors:
                raise ValueError(f"duplicate tensor name {rec.name!r}")
            tensors[rec.name] = rec
        return cls(tensors, dict(metadata or {}))

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self):
        return iter(self.tensors.values())

    def __getitem__(self, name: str) -> TensorRecord:
        return self.tensors[name]

    def __contains__(self, name: object) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)


# --- serialization ---------------------------------------------------------

def serialize(ckpt: Checkpoint) -> bytes:
    header: dict = {}
    if ckpt.metadata:
        header[METADATA_KEY] = dict(sorted(ckpt.metadata.items()))
    offset = 0
    chunks = []
    for name in sorted(ckpt.tensors):
        rec = ckpt.tensors[name]
        header[name] = {
            "dtype": rec.dtype.value,
            "shape": list(rec.shape),
            "data_offsets": [offset, offset + rec.nbytes],
        }
        offset += rec.nbytes
        chunks.append(rec.data)
    blob = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise MalformedHeader(f"duplicate header key {k!r}")
        out[k] = v
    return out


def _is_uint(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and x >= 0


def deserialize(buf: bytes) -> Checkpoint:
    if len(buf) < 8:
        raise MalformedHeader("file shorter than the 8-byte length prefix")
    (n,) = struct.unpack_from("<Q", buf, 0)
    if n > len(buf) - 8:
        raise TruncatedData(f"header length {n} exceeds remaining {len(buf) - 8} bytes")
    try:
        header = json.loads(buf[8 : 8 + n].decode("utf-8"), object_pairs_hook=_no_duplicates)
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
        raise MalformedHeader(f"unparseable header: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeader("header is not a JSON object")
    data = memoryview(buf)[8 + n :]

    meta = header.pop(METADATA_KEY, None) or {}
    if not isinstance(meta, dict) or not all(isinstance(v, str) for v in meta.values()):
        raise MalformedHeader("__metadata__ must map strings to strings")

    spans = []
    records = []
    for name, entry in header.items():
        if not isinstance(entry, dict) or not {"dtype", "shape", "data_offsets"} <= entry.keys():
            raise MalformedHeader(f"{name}: entry needs dtype, shape and data_offsets")
        if not isinstance(entry["dtype"], str):
            raise MalformedHeader(f"{name}: dtype must be a string")
        dtype = DType.parse(entry["dtype"])
        shape, offsets = entry["shape"], entry["data_offsets"]
        if not isinstance(shape, list) or not all(_is_uint(d) for d in shape):
            raise MalformedHeader(f"{name}: bad shape {shape!r}")
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(_is_uint(o) for o in offsets)
            or offsets[0] > offsets[1]
        ):
            raise MalformedHeader(f"{name}: bad data_offsets {offsets!r}")
        begin, end = offsets
        if end - begin != numel(shape) * dtype.width:
            raise MalformedHeader(f"{name}: offsets span {end - begin} bytes, shape needs {numel(shape) * dtype.width}")
        if end > len(data):
            raise TruncatedData(f"{name}: data ends at {end}, buffer holds {len(data)} bytes")
        spans.append((begin, end, name))
        records.append(TensorRecord(name, dtype, tuple(shape), bytes(data[begin:end])))

    spans.sort()
    cursor = 0
    for begin, end, name in spans:
        if begin < cursor:
            raise OverlappingTensors(f"{name} starts at {begin}, inside the previous tensor ending at {cursor}")
        if begin > cursor:
            raise MalformedHeader(f"gap in data buffer before {name} ({cursor}..{begin})")
        cursor = end
    if cursor != len(data):
        raise MalformedHeader(f"{len(data) - cursor} trailing bytes after the last tensor")
    return Checkpoint.from_records(records, meta)


def read_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return deserialize(buf)


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def write_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, serialize(ckpt))


# --- dtype conversion ------------------------------------------------------

def decode_f64(t: TensorRecord) -> np.ndarray:
    """Flat float64 view of a tensor's values. Widening is exact."""
    raw = np.frombuffer(t.data, dtype=t.dtype.storage)
    with np.errstate(invalid="ignore"):  # signalling NaNs widen quietly
        if t.dtype is DType.BF16:
            return (raw.astype(np.uint32) << 16).view(np.float32).astype(np.float64)
        return raw.astype(np.float64)


def _encode(values: np.ndarray, dtype: DType) -> bytes:
    values = np.ascontiguousarray(values, dtype=np.float64)
    if dtype is DType.BF16:
        out = _backend.f64_to_bf16_bits(values).astype("<u2")
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            out = values.astype(dtype.storage)
        nan = np.isnan(values)
        if nan.any():
            out = out.view(_QNAN[dtype].dtype)
            out[nan] = _QNAN[dtype][0]
    return out.tobytes()


def cast(t: TensorRecord, target: DType) -> TensorRecord:
    """Convert to ``target`` with round-to-nearest-even; NaNs become the canonical quiet NaN."""
    if t.dtype is target:
        return t
    return TensorRecord(t.name, target, t.shape, _encode(decode_f64(t), target))
