"""Kernel-regression R-squared and the threshold predicates built on it.

The equivalence metric throughout the package: fit a Gaussian-kernel
Nadaraya-Watson regression from one variable's samples to another's on a
train split, score 1 - SSE/SST per target column on a held-out split, and
average the columns. Prediction tests ("a perfectly predicts b", mutual
equivalence, independence) are thresholded versions of that score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateTargetError

#: Default threshold above which a score counts as "perfect prediction".
DEFAULT_TAU = 0.6
#: Default ceiling below which variables count as independent.
DEFAULT_EPS = 0.1
#: Held-out evaluation budget (points), and cap on the regression design.
EVAL_BUDGET = 8192
#: Scale factor applied to the median distance; tuned so that identity
#: targets score > 0.999 while independent targets stay within a few
#: hundredths of zero at the default evaluation budget.
BANDWIDTH_SCALE = 0.35
#: Points used for the median pairwise-distance estimate.
MEDIAN_POINTS = 2048


@dataclass(frozen=True)
class R2Score:
    """Held-out coefficient of determination of one kernel regression."""

    value: float
    n_train: int
    n_eval: int
    bandwidth: float

    def __post_init__(self):
        if self.value > 1.0 + 1e-12:
            raise ValueError("R^2 cannot exceed 1")


def median_distance(x: np.ndarray, cap: int = MEDIAN_POINTS) -> float:
    """Median pairwise Euclidean distance over (at most cap) rows."""
    if x.shape[0] > cap:
        stride = max(1, x.shape[0] // cap)
        x = x[::stride][:cap]
    if x.shape[0] < 2:
        return 0.0
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    iu = np.triu_indices(x.shape[0], k=1)
    return float(np.median(np.sqrt(d2[iu])))


def auto_bandwidth(x_train: np.ndarray) -> float:
    """Median-heuristic bandwidth with a sample-size correction.

    h = BANDWIDTH_SCALE * median_dist * n^(-1/(4+p)). The median term adapts
    to scale and dimension, the n term shrinks the window as data grows so
    self-prediction approaches 1.
    """
    n, p = x_train.shape
    med = median_distance(x_train)
    h = BANDWIDTH_SCALE * med * float(n) ** (-1.0 / (4.0 + p))
    return max(h, 1e-12)


def nw_predict(x_train: np.ndarray, y_train: np.ndarray, x_eval: np.ndarray,
               bandwidth: float, chunk: int = 1024) -> np.ndarray:
    """Nadaraya-Watson prediction with a Gaussian kernel.

    Weights are computed in a numerically safe softmax form, so distant
    query points degrade to the nearest training neighborhood instead of
    dividing by zero.
    """
    sq_tr = (x_train * x_train).sum(axis=1)
    out = np.empty((x_eval.shape[0], y_train.shape[1]))
    inv = -0.5 / (bandwidth * bandwidth)
    for lo in range(0, x_eval.shape[0], chunk):
        xe = x_eval[lo:lo + chunk]
        d2 = (xe * xe).sum(axis=1)[:, None] + sq_tr[None, :] - 2.0 * (xe @ x_train.T)
        logk = inv * np.maximum(d2, 0.0)
        logk -= logk.max(axis=1, keepdims=True)
        w = np.exp(logk)
        out[lo:lo + chunk] = (w @ y_train) / w.sum(axis=1, keepdims=True)
    return out


def kernel_r2(x: np.ndarray, y: np.ndarray,
              bandwidth: float | str = "auto",
              split_seed: int = 0) -> R2Score:
    """Held-out kernel-regression R^2 for predicting y from x.

    Rows are split 50/50 into regression/evaluation halves (deterministic
    permutation per split_seed); both halves are capped at EVAL_BUDGET
    points. The score is 1 - SSE/SST per target column, averaged over
    columns. Raises DegenerateTargetError when a target column is constant
    on the evaluation half.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x and y must be 2-d with equal row counts")
    n = x.shape[0]
    if n < 50:
        raise ValueError(f"need at least 50 samples, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in regression inputs")

    perm = np.random.default_rng(split_seed).permutation(n)
    train = perm[: n // 2][:EVAL_BUDGET]
    evals = perm[n // 2:][:EVAL_BUDGET]
    x_tr, y_tr, x_ev, y_ev = x[train], y[train], x[evals], y[evals]

    h = auto_bandwidth(x_tr) if bandwidth == "auto" else float(bandwidth)
    pred = nw_predict(x_tr, y_tr, x_ev, h)

    sst = ((y_ev - y_ev.mean(axis=0)) ** 2).sum(axis=0)
    if np.any(sst == 0.0):
        cols = np.flatnonzero(sst == 0.0).tolist()
        raise DegenerateTargetError(f"target columns {cols} have zero variance")
    sse = ((y_ev - pred) ** 2).sum(axis=0)
    value = float(np.mean(1.0 - sse / sst))
    return R2Score(value, len(train), len(evals), h)


@dataclass
class PredictionMatrix:
    """Square table of directional prediction scores (diagonal undefined)."""

    labels: list[str]
    scores: list[list[R2Score | None]]  # scores[i][j]: predict j from i

    def value(self, a: str, b: str) -> float | None:
        i, j = self.labels.index(a), self.labels.index(b)
        cell = self.scores[i][j]
        return None if cell is None else cell.value

    def to_csv_rows(self) -> list[list[str]]:
        rows = [[""] + self.labels]
        for label, row in zip(self.labels, self.scores):
            rows.append([label] + [
                "x" if label == other else
                ("" if cell is None else f"{cell.value:.3f}")
                for other, cell in zip(self.labels, row)
            ])
        return rows


def pairwise_matrix(variables: Sequence[tuple[str, np.ndarray]],
                    bandwidth: float | str = "auto",
                    split_seed: int = 0) -> PredictionMatrix:
    """All directional kernel_r2 scores among the given variables.

    Per-cell failures (degenerate targets) are recorded as missing cells
    rather than aborting the whole matrix.
    """
    if len(variables) < 2:
        raise ValueError("need at least two variables")
    n = variables[0][1].shape[0]
    if any(v.shape[0] != n for _, v in variables):
        raise ValueError("all variables must have equal sample counts")
    labels = [name for name, _ in variables]
    scores: list[list[R2Score | None]] = []
    for i, (_, xi) in enumerate(variables):
        row: list[R2Score | None] = []
        for j, (_, yj) in enumerate(variables):
            if i == j:
                row.append(None)
                continue
            try:
                row.append(kernel_r2(xi, yj, bandwidth, split_seed))
            except DegenerateTargetError:
                row.append(None)
        scores.append(row)
    return PredictionMatrix(labels, scores)


def predicts_perfectly(score: R2Score, tau: float = DEFAULT_TAU) -> bool:
    """Closed-threshold prediction test: value >= tau."""
    return score.value >= tau


def are_equivalent(a: np.ndarray, b: np.ndarray, tau: float = DEFAULT_TAU,
                   split_seed: int = 0) -> bool:
    """True iff each variable perfectly predicts the other.

    The finite-sample stand-in for "equal up to an invertible mapping":
    a super-variable predicts its parts but fails the reverse direction, so
    this test is symmetric where raw prediction is not.
    """
    return (predicts_perfectly(kernel_r2(a, b, split_seed=split_seed), tau)
            and predicts_perfectly(kernel_r2(b, a, split_seed=split_seed), tau))


def is_independent(a: np.ndarray, rest: np.ndarray, eps: float = DEFAULT_EPS,
                   split_seed: int = 0) -> bool:
    """True iff neither direction of kernel R^2 exceeds eps."""
    fwd = kernel_r2(a, rest, split_seed=split_seed).value
    bwd = kernel_r2(rest, a, split_seed=split_seed).value
    return max(fwd, bwd) <= eps
