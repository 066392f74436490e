"""Worst-case expected squared-error bounds for both schedulers and the choice between them.

All norms are spectral norms.  The noise terms use squared matrix norms, so
for a homogeneous ensemble of normal matrices the two bounds coincide when
both schedulers have the same cycle length.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .dynamics import SystemModel, matrix_power_norm, spectral_norm
from .scheduling import SlotBudget, cycle_length
from .types import Policy

__all__ = [
    "AssumptionError",
    "GainProfile",
    "SchemeChoice",
    "check_assumption",
    "choose_scheme",
    "gain",
    "gain_profile",
    "periodic_bound",
    "predictive_bound",
]

# slack on ||A||^2 >= 1; power iteration and rescaled matrices land within it
_NORM_SLACK = 1e-9


class AssumptionError(ValueError):
    """Raised when agents violate the error-growth assumption the bounds rely on."""

    def __init__(self, agents: Sequence[int]):
        self.agents = list(agents)
        super().__init__(
            "error-growth assumption (||A||^2 >= 1, positive noise if ||A|| = 1) "
            f"violated by agents {self.agents}"
        )


def check_assumption(model: SystemModel) -> bool:
    """True iff ``||A||^2 ||e|| + tr(cov) > ||e||`` holds for every ``e != 0``."""
    sq = spectral_norm(model.a_matrix) ** 2
    if sq > 1.0 + _NORM_SLACK:
        return True
    if sq >= 1.0 - _NORM_SLACK:
        return model.noise_trace > 0.0
    return False


def gain(model: SystemModel, delta: float) -> float:
    return spectral_norm(model.a_matrix) ** 2 * delta + model.noise_trace


@dataclass(frozen=True)
class GainProfile:
    """Per-agent gains and the agent order that sorts them ascending (0-based)."""

    gains: tuple[float, ...]
    order: tuple[int, ...]

    def __post_init__(self):
        ordered = [self.gains[i] for i in self.order]
        if any(a > b for a, b in zip(ordered, ordered[1:])):
            raise ValueError("order does not sort gains ascending")


def gain_profile(models: Sequence[SystemModel], delta: float) -> GainProfile:
    norms = [spectral_norm(m.a_matrix) for m in models]
    gains = [nrm**2 * delta + m.noise_trace for nrm, m in zip(norms, models)]
    # ties broken by norm, then trace, then position so the result is order-free
    order = sorted(
        range(len(models)), key=lambda i: (gains[i], norms[i], models[i].noise_trace, i)
    )
    return GainProfile(tuple(gains), tuple(order))


def periodic_bound(model: SystemModel, delta: float, t_per: int) -> float:
    if t_per < 1:
        raise ValueError("t_per must be at least 1")
    a = model.a_matrix
    noise = sum(matrix_power_norm(a, t_per - j - 1) ** 2 for j in range(t_per))
    return matrix_power_norm(a, t_per) ** 2 * delta + noise * model.noise_trace


def predictive_bound(
    models: Sequence[SystemModel],
    delta: float,
    k_pred: int,
    inclusive: bool = False,
) -> float:
    """Ensemble-wide bound for error-priority scheduling with ``k_pred`` slots.

    Agents are sorted by ascending gain; round ``j`` is represented by the
    lowest-gain agent that could be served in it, sorted position
    ``(j-1)*k_pred``.  The noise injected at round ``j`` is propagated through
    the representatives of the later rounds.  With ``inclusive=True`` the
    propagation product also includes round ``j`` itself.
    """
    bad = [i + 1 for i, m in enumerate(models) if not check_assumption(m)]
    if bad:
        raise AssumptionError(bad)
    t_pred = cycle_length(len(models), k_pred)
    profile = gain_profile(models, delta)
    reps = [models[profile.order[(j - 1) * k_pred]] for j in range(1, t_pred + 1)]
    sq_norms = [spectral_norm(m.a_matrix) ** 2 for m in reps]
    traces = [m.noise_trace for m in reps]

    total = float(np.prod(sq_norms)) * delta
    for j in range(t_pred):
        start = j if inclusive else j + 1
        total += float(np.prod(sq_norms[start:])) * traces[j]
    return total


@dataclass(frozen=True)
class SchemeChoice:
    chosen: Policy
    periodic_bound_value: float
    predictive_bound_value: float

    def __post_init__(self):
        expected = (
            Policy.PREDICTIVE
            if self.predictive_bound_value < self.periodic_bound_value
            else Policy.PERIODIC
        )
        if self.chosen is not expected:
            raise ValueError(f"chosen={self.chosen} is not the argmin of the bounds")


def choose_scheme(
    models: Sequence[SystemModel],
    delta: float,
    budget: SlotBudget,
    inclusive: bool = False,
) -> SchemeChoice:
    """Pick the scheduler with the smaller worst-case bound (ties go to periodic)."""
    t_per = cycle_length(len(models), budget.k_per)
    per = max(periodic_bound(m, delta, t_per) for m in models)
    pred = predictive_bound(models, delta, budget.k_pred, inclusive=inclusive)
    chosen = Policy.PREDICTIVE if pred < per else Policy.PERIODIC
    return SchemeChoice(chosen, per, pred)
