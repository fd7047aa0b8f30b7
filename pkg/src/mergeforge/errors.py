"""Exception hierarchy shared by all mergeforge modules."""
from __future__ import annotations


class MergeForgeError(Exception):
    """Base class for every error raised by this package."""


# tensor container ---------------------------------------------------------

class CheckpointError(MergeForgeError):
    pass


class MalformedHeader(CheckpointError):
    pass


class OverlappingTensors(CheckpointError):
    pass


class TruncatedData(CheckpointError):
    pass


class UnknownDType(CheckpointError):
    pass


class IoFailure(CheckpointError, OSError):
    pass


# merging ------------------------------------------------------------------

class MergeError(MergeForgeError, ValueError):
    pass


class LengthMismatch(MergeError):
    pass


class EmptyAnchors(MergeError):
    pass


class ShapeMismatch(MergeError):
    def __init__(self, name: str, shape_a=None, shape_b=None, others: tuple[str, ...] = ()):
        self.name = name
        self.shape_a = shape_a
        self.shape_b = shape_b
        self.names = (name, *others)
        detail = f": {list(shape_a)} vs {list(shape_b)}" if shape_a is not None else ""
        also = f" (also {', '.join(others)})" if others else ""
        super().__init__(f"shape mismatch for {name}{detail}{also}")


class NameMismatch(MergeError):
    pass


class MissingTensorInBase(MergeError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"tensor {name} is absent from the base model")


# recipes ------------------------------------------------------------------

class RecipeError(MergeForgeError, ValueError):
    pass


class ParseError(RecipeError):
    def __init__(self, line: int | None, message: str):
        self.line = line
        self.message = message
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class UnknownMethod(RecipeError):
    pass


class MissingField(RecipeError):
    def __init__(self, field: str):
        self.field = field
        super().__init__(f"missing field: {field}")


class InvalidAnchor(RecipeError):
    pass


# benchmarks ---------------------------------------------------------------

class BenchError(MergeForgeError):
    pass


class SchemaError(BenchError, ValueError):
    def __init__(self, row: int, field: str, message: str = ""):
        self.row = row
        self.field = field
        super().__init__(f"row {row}, field {field!r}" + (f": {message}" if message else ""))


class RoleOrderError(BenchError, ValueError):
    pass


class UnknownQuestionId(BenchError, KeyError):
    def __str__(self) -> str:
        return f"unknown question id: {self.args[0]}"


class ZeroBaseline(BenchError, ZeroDivisionError):
    pass


class EmptyInput(MergeForgeError, ValueError):
    pass


class EndpointError(BenchError):
    pass


class NetworkError(EndpointError, OSError):
    pass


class HttpError(EndpointError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}")


class MalformedResponse(EndpointError, ValueError):
    pass


# analysis -----------------------------------------------------------------

class AnalysisError(MergeForgeError, ValueError):
    pass


class OutOfRange(AnalysisError):
    pass


class MissingParentScores(AnalysisError):
    def __init__(self, model_id: str):
        self.model_id = model_id
        super().__init__(f"record {model_id} has no parent scores")


class ZeroVariance(AnalysisError):
    pass


class TooFew(AnalysisError):
    pass


class BadK(AnalysisError):
    pass
