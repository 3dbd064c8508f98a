"""Exception types shared across the package."""

from __future__ import annotations


class HiercauseError(Exception):
    """Base class for all package-specific errors."""


class MalformedSpecError(HiercauseError):
    """Graph spec is syntactically broken (duplicate ids, dangling edges, bad dims).

    Distinct from structural-condition violations, which are reported as data,
    not raised.
    """


class NumericOverflowError(HiercauseError):
    """A generator produced non-finite values."""

    def __init__(self, node_id: str, message: str | None = None):
        self.node_id = node_id
        super().__init__(message or f"non-finite values produced at node {node_id!r}")


class TrainingDivergenceError(HiercauseError):
    """Training hit a non-finite loss or gradient."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


class NotApplicableError(HiercauseError):
    """Requested estimator cannot be applied to the given configuration."""


class DegenerateTargetError(HiercauseError):
    """Regression target has zero variance (SST = 0)."""


class PartialResultError(HiercauseError):
    """Search did not converge; carries the graph discovered so far."""

    def __init__(self, graph, message: str):
        self.graph = graph
        super().__init__(message)


class ConfigError(HiercauseError):
    """Experiment config failed schema validation.

    ``pointers`` holds JSON-pointer-style paths to the offending fields.
    """

    def __init__(self, pointers: list[str], message: str):
        self.pointers = pointers
        super().__init__(message)
