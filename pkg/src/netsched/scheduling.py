"""Slot allocation: static round-robin and error-priority (predictive) grants."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

__all__ = [
    "RoundGrant",
    "SlotBudget",
    "cycle_length",
    "predictive_allocate",
    "round_robin_allocate",
]


@dataclass(frozen=True)
class SlotBudget:
    """Slots per round: ``k_per`` for round-robin, ``k_pred`` for predictive.

    ``k_pred`` pays for the priority exchange, so it may not exceed ``k_per``;
    equality is tolerated for degenerate analysis cases.
    """

    k_total: int
    k_per: int
    k_pred: int

    def __post_init__(self):
        for name in ("k_total", "k_per", "k_pred"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.k_per != self.k_total:
            raise ValueError(f"k_per ({self.k_per}) must equal k_total ({self.k_total})")
        if self.k_pred > self.k_per:
            raise ValueError(f"k_pred ({self.k_pred}) must not exceed k_per ({self.k_per})")

    @classmethod
    def from_slots(cls, k: int, k_pred: int) -> SlotBudget:
        return cls(k_total=k, k_per=k, k_pred=k_pred)


@dataclass(frozen=True)
class RoundGrant:
    round_index: int
    granted: frozenset[int]


def cycle_length(n_agents: int, k_slots: int) -> int:
    if k_slots < 1:
        raise ValueError("k_slots must be positive")
    return math.ceil(n_agents / k_slots)


def round_robin_allocate(round_index: int, n_agents: int, k_per: int) -> RoundGrant:
    """Grant ``k_per`` consecutive ids (1-based), continuing cyclically each round."""
    if not 1 <= k_per <= n_agents:
        raise ValueError(f"need 1 <= k_per <= n_agents, got k_per={k_per}, n_agents={n_agents}")
    start = (round_index * k_per) % n_agents
    ids = frozenset((start + j) % n_agents + 1 for j in range(k_per))
    return RoundGrant(round_index, ids)


def predictive_allocate(
    priorities: Mapping[int, float],
    k_pred: int,
    n_agents: int | None = None,
    round_index: int = 0,
) -> RoundGrant:
    """Grant the ``k_pred`` largest priorities; ties go to the smaller id.

    When ``n_agents`` is given, every id in ``1..n_agents`` must have a priority.
    """
    if n_agents is not None:
        for agent in range(1, n_agents + 1):
            if agent not in priorities:
                raise KeyError(f"missing priority for agent {agent}")
    if not 1 <= k_pred <= len(priorities):
        raise ValueError(f"need 1 <= k_pred <= {len(priorities)}, got {k_pred}")
    for agent, p in priorities.items():
        if not p >= 0:
            raise ValueError(f"priority of agent {agent} must be non-negative, got {p}")
    ranked = sorted(priorities, key=lambda agent: (-priorities[agent], agent))
    return RoundGrant(round_index, frozenset(ranked[:k_pred]))
