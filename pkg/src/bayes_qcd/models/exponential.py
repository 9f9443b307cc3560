from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Capability, ObservationModel, PathSampler


@dataclass(frozen=True)
class ExpModel(ObservationModel):
    """Exp(1) before the change, exponential with mean 1 + Q after it.

    The LLR increment is affine in the observation and the overshoot of
    Z_n^1 over any positive level is exactly exponential with mean Q, so
    zeta = 1/(1+Q) and kappa_bar = Q hold for every threshold.
    """

    Q: float

    capability = Capability.INCREMENT_STATIONARY
    kind = "exponential"

    def __post_init__(self) -> None:
        if not (self.Q > 0 and math.isfinite(self.Q)):
            raise ValueError(f"ExpModel needs Q > 0, got {self.Q}")

    @property
    def kl_number(self) -> float:
        return exp_kl(self)

    @property
    def pre_change_drift(self) -> float:
        """|E_inf dZ| = log(1+Q) - Q/(1+Q), the divergence of f_1 from f_0.

        This is the rate at which the LLR drifts down before the change.  It
        is not the post-change drift: E_1 dZ = Q - log(1+Q) is larger.
        """
        return math.log1p(self.Q) - self.Q / (1.0 + self.Q)

    def path(self, change_point, rng):
        return _ExpPath(self, change_point, rng)

    def llr_increments(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            bad = int(np.flatnonzero(x < 0)[0]) + 1
            raise ValueError(f"observation {bad} is negative; exponential support is x >= 0")
        return -math.log1p(self.Q) + (self.Q / (1.0 + self.Q)) * x

    def overshoot_constants(self):
        return 1.0 / (1.0 + self.Q), self.Q

    def describe(self):
        return {"kind": self.kind, "Q": self.Q}


class _ExpPath(PathSampler):
    def __init__(self, model: ExpModel, change_point, rng):
        super().__init__(change_point, rng)
        self.scale_post = 1.0 + model.Q

    def _draw(self, count):
        e = self.rng.standard_exponential(count)
        return np.where(self.post_change_mask(count), e * self.scale_post, e)


def exp_llr_increment(model: ExpModel, x: float) -> float:
    """-log(1+Q) + Q/(1+Q) x for a single observation x >= 0."""
    if x < 0:
        raise ValueError(f"exponential observations are nonnegative, got {x}")
    return -math.log1p(model.Q) + (model.Q / (1.0 + model.Q)) * x


def exp_kl(model: ExpModel) -> float:
    """E_1 dZ = -log(1+Q) + Q/(1+Q) E_1 X with E_1 X = 1 + Q, i.e. Q - log(1+Q)."""
    Q = model.Q
    return Q - math.log1p(Q)
