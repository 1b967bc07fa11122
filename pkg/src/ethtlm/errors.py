"""Exception hierarchy.  The CLI maps DataError -> exit 2, NumericError -> exit 3."""
from __future__ import annotations


class PipelineError(Exception):
    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self),
                **{k: v for k, v in vars(self).items() if not k.startswith("_")}}


class DataError(PipelineError):
    pass


class NumericError(PipelineError):
    pass


class InvalidConfig(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line: int, field: str, value: str = ""):
        super().__init__(f"line {line}: cannot parse field {field!r} from {value!r}")
        self.line = line
        self.field = field


class MissingColumn(DataError):
    def __init__(self, name: str):
        super().__init__(f"required column {name!r} is missing")
        self.name = name


class EmptyCorpus(DataError):
    pass


class UnknownEntity(DataError):
    def __init__(self, entity):
        super().__init__(f"unknown entity {entity!r}")
        self.entity = entity


class ExhaustedCandidates(DataError):
    pass


class SequenceTooLong(DataError):
    pass


class DictMissing(DataError):
    def __init__(self, account):
        super().__init__(f"no alignment entry for account {account!r}")
        self.account = account


class NoMaskedPositions(DataError):
    pass


class LayoutMismatch(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class NonConvergence(NumericError):
    def __init__(self, metric: str, iterations: int):
        super().__init__(f"{metric}: power iteration did not converge in {iterations} iterations")
        self.metric = metric
        self.iterations = iterations


class NonFinite(NumericError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite loss at step {step}" + (f": {detail}" if detail else ""))
        self.step = step
