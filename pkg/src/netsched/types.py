from __future__ import annotations

from enum import Enum


class Policy(str, Enum):
    PERIODIC = "periodic"
    PREDICTIVE = "predictive"
    ADAPTIVE = "adaptive"

    def __str__(self) -> str:
        return self.value
