from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .base import Capability, ObservationModel, PathSampler, _check_k


@dataclass(frozen=True)
class ArModel(ObservationModel):
    """Constant mean shift theta in stable Gaussian AR(p) noise.

    X_n = theta 1{n >= k} + V_n with V_n = sum_j delta_j V_{n-j} + N(0, sigma^2)
    innovations and V_j = 0 for j <= 0.  Whitening turns the problem into a
    shift of the innovation mean whose size depends on how many of the last
    p samples were already post-change, so Z_n^k depends on k through the
    first p post-change steps.
    """

    theta: float
    sigma: float
    deltas: tuple[float, ...]

    capability = Capability.CHANGE_POINT_DEPENDENT
    kind = "ar"

    def __post_init__(self) -> None:
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.theta == 0 or not math.isfinite(self.theta):
            raise ValueError("theta must be a nonzero finite number")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.deltas:
            raise ValueError("AR model needs at least one coefficient (use [0.0] for white noise)")
        # roots of 1 - sum_j delta_j y^j must lie strictly outside the unit circle
        coeffs = [-d for d in reversed(self.deltas)] + [1.0]
        roots = np.roots(coeffs) if any(self.deltas) else np.array([])
        if roots.size and np.min(np.abs(roots)) <= 1.0 + 1e-12:
            raise ValueError(f"AR coefficients {list(self.deltas)} are not stable")

    @property
    def p(self) -> int:
        return len(self.deltas)

    @property
    def kl_number(self) -> float:
        return self.theta**2 * (1.0 - sum(self.deltas)) ** 2 / (2.0 * self.sigma**2)

    def profile(self, lags: np.ndarray) -> np.ndarray:
        """Whitened signal theta~ at lag j = i - k >= 0 after the change."""
        partial = np.concatenate(([0.0], np.cumsum(self.deltas)))
        return self.theta * (1.0 - partial[np.minimum(lags, self.p)])

    def whiten(self, x: np.ndarray) -> np.ndarray:
        return lfilter(np.concatenate(([1.0], -np.asarray(self.deltas))), [1.0], np.asarray(x, float))

    def path(self, change_point, rng):
        return _ArPath(self, change_point, rng)

    def llr_block(self, x, n_lo, n_hi, prev=None):
        if prev is None and n_lo > 1:
            return self.llr_block(x, 1, n_hi)[:, n_lo - 1 :]
        xt = self.whiten(x[:n_hi])
        ks = np.arange(1, n_hi + 1)[:, None]
        ns = np.arange(n_lo, n_hi + 1)[None, :]
        lag = ns - ks
        prof = self.profile(np.maximum(lag, 0))
        inc = (prof * xt[ns - 1] - 0.5 * prof**2) / self.sigma**2
        inc = np.where(lag >= 0, inc, 0.0)
        z = np.cumsum(inc, axis=1)
        if prev is not None and n_lo > 1:
            z[: n_lo - 1] += np.asarray(prev)[: n_lo - 1, None]
        return np.where(lag >= 0, z, -math.inf)

    def llr_path(self, x, k):
        _check_k(k, len(x))
        xt = self.whiten(x)[k - 1 :]
        prof = self.profile(np.arange(len(xt)))
        return np.cumsum((prof * xt - 0.5 * prof**2) / self.sigma**2)

    def describe(self):
        return {"kind": self.kind, "theta": self.theta, "sigma": self.sigma, "deltas": list(self.deltas)}


class _ArPath(PathSampler):
    def __init__(self, model: ArModel, change_point, rng):
        super().__init__(change_point, rng)
        self.model = model
        self._a = np.concatenate(([1.0], -np.asarray(model.deltas)))
        self._zi = np.zeros(model.p)

    def _draw(self, count):
        m = self.model
        noise = m.sigma * self.rng.standard_normal(count)
        v, self._zi = lfilter([1.0], self._a, noise, zi=self._zi)
        return v + m.theta * self.post_change_mask(count)


def ar_whiten(model: ArModel, observations) -> tuple[np.ndarray, np.ndarray]:
    """Whitened observations X~_i and the post-change signal profile theta~.

    The profile is indexed by lag i - k = 0, 1, ..., len(observations) - 1.
    """
    x = np.asarray(observations, dtype=float)
    return model.whiten(x), model.profile(np.arange(len(x)))
