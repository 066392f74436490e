"""Open-loop remote estimator replicas and the error threshold trigger."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .dynamics import DimensionError, SystemModel

__all__ = [
    "EstimatorPair",
    "TriggerDecision",
    "closed_form_error",
    "compute_error",
    "trigger_decision",
    "update_estimator",
]


@dataclass(frozen=True)
class EstimatorPair:
    """Estimator replica state for one agent.

    ``pending_transmission`` holds the state sent at ``k-1`` while it is in
    flight; it is consumed by the next :func:`update_estimator` call.  The
    same object is kept on the sensor and on the remote side.
    """

    x_hat: NDArray[np.float64]
    pending_transmission: NDArray[np.float64] | None = None

    def __post_init__(self):
        x_hat = np.array(self.x_hat, dtype=float).reshape(-1)
        x_hat.setflags(write=False)
        object.__setattr__(self, "x_hat", x_hat)
        if self.pending_transmission is not None:
            sent = np.array(self.pending_transmission, dtype=float).reshape(-1)
            if sent.shape != x_hat.shape:
                raise DimensionError("pending transmission length differs from estimate")
            sent.setflags(write=False)
            object.__setattr__(self, "pending_transmission", sent)

    def transmit(self, x) -> EstimatorPair:
        return EstimatorPair(self.x_hat, x)


@dataclass(frozen=True)
class TriggerDecision:
    gamma: int
    error_sq: float


def update_estimator(pair: EstimatorPair, model: SystemModel) -> EstimatorPair:
    """Propagate the estimate one step, adopting a delivered state if any."""
    if pair.x_hat.shape != (model.dim,):
        raise DimensionError(
            f"estimate length {pair.x_hat.size} does not match model dimension {model.dim}"
        )
    base = pair.x_hat if pair.pending_transmission is None else pair.pending_transmission
    return EstimatorPair(model.a_matrix @ base)


def compute_error(x, x_hat) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise DimensionError(f"state shape {x.shape} differs from estimate shape {x_hat.shape}")
    return x - x_hat


def trigger_decision(e, delta: float) -> TriggerDecision:
    """Transmit iff ``||e||^2 >= delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    e = np.asarray(e, dtype=float)
    error_sq = float(e @ e)
    return TriggerDecision(int(error_sq >= delta), error_sq)


def closed_form_error(e0, model: SystemModel, noises) -> NDArray[np.float64]:
    """Error after ``T = len(noises)`` silent steps.

    Returns ``A^T e0 + sum_j A^(T-j-1) v_j``, evaluated from explicit matrix
    powers rather than by recursion.
    """
    e0 = np.asarray(e0, dtype=float).reshape(-1)
    noises = [np.asarray(v, dtype=float).reshape(-1) for v in noises]
    n = model.dim
    if e0.shape != (n,) or any(v.shape != (n,) for v in noises):
        raise DimensionError(f"error and noise vectors must have length {n}")
    t = len(noises)
    if t < 1:
        raise ValueError("need at least one noise vector")
    a = model.a_matrix
    out = np.linalg.matrix_power(a, t) @ e0
    for j, v in enumerate(noises):
        out = out + np.linalg.matrix_power(a, t - j - 1) @ v
    return out
