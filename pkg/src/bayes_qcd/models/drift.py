from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Capability, ObservationModel, PathSampler


@dataclass(frozen=True)
class DeterministicDrift(ObservationModel):
    """Stub source whose LLR grows by exactly ``q`` per step.

    Observations carry no information (they are all zero); every increment
    equals q whatever the change point.  Useful to check stopping logic
    against hand-computed crossings.
    """

    q: float

    capability = Capability.INCREMENT_STATIONARY
    kind = "drift"
    nonarithmetic = False

    def __post_init__(self) -> None:
        if not (self.q > 0 and math.isfinite(self.q)):
            raise ValueError(f"drift must be positive, got {self.q}")

    @property
    def kl_number(self) -> float:
        return self.q

    def path(self, change_point, rng):
        return _ZeroPath(change_point, rng)

    def llr_increments(self, x):
        return np.full(len(x), self.q)

    def describe(self):
        return {"kind": self.kind, "q": self.q}


class _ZeroPath(PathSampler):
    def _draw(self, count):
        return np.zeros(count)
