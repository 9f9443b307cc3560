"""Prior distributions of the change point.

The change point lambda takes values k = 1, 2, ... (no mass at 0).  Two
families are supported: geometric priors, whose tail is carried in closed
form, and tabulated priors with finite support.
"""

from __future__ import annotations

import csv
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

NORMALIZATION_WARN_TOL = 1e-6


class Prior(ABC):
    """Discrete prior pi_k = P(lambda = k), k >= 1."""

    @property
    @abstractmethod
    def support(self) -> int | None:
        """Largest k with positive mass, or None for unbounded support."""

    @abstractmethod
    def log_pi(self, k: np.ndarray) -> np.ndarray:
        """Vectorized log pi_k for integer k >= 1 (-inf where the mass is zero)."""

    @abstractmethod
    def log_tail(self, n: np.ndarray) -> np.ndarray:
        """Vectorized log P(lambda >= n) for integer n >= 1."""

    @abstractmethod
    def entropy_constant(self) -> float:
        """C_pi = sum_k pi_k |log pi_k|."""

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> int:
        """Draw one change point."""

    def pi(self, k: int) -> float:
        if k < 1:
            raise ValueError(f"pi_k is defined for k >= 1 (no mass at 0), got k={k}")
        return float(np.exp(self.log_pi(np.array([k]))[0]))

    def tail(self, n: int) -> float:
        if n < 1:
            raise ValueError(f"tail is defined for n >= 1, got n={n}")
        return float(np.exp(self.log_tail(np.array([n]))[0]))

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GeometricPrior(Prior):
    """pi_k = rho (1 - rho)^(k-1)."""

    rho: float

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"geometric prior needs 0 < rho < 1, got {self.rho}")

    @property
    def support(self) -> None:
        return None

    def log_pi(self, k):
        k = np.asarray(k, dtype=float)
        return math.log(self.rho) + (k - 1.0) * math.log1p(-self.rho)

    def log_tail(self, n):
        n = np.asarray(n, dtype=float)
        return (n - 1.0) * math.log1p(-self.rho)

    def entropy_constant(self) -> float:
        rho = self.rho
        return math.log((1.0 - rho) / rho) - math.log1p(-rho) / rho

    def sample(self, rng):
        return int(rng.geometric(self.rho))

    def describe(self):
        return {"kind": "geometric", "rho": self.rho}


@dataclass(frozen=True)
class TabulatedPrior(Prior):
    """Finite-support prior; weights[i] is the raw mass of k = i + 1.

    Weights are normalized on construction.  A warning is issued when the
    raw sum is off by more than 1e-6.
    """

    weights: tuple[float, ...]
    _log_weights: np.ndarray = field(init=False, repr=False, compare=False)
    _log_tails: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        raw = np.asarray(self.weights, dtype=float)
        if raw.ndim != 1 or raw.size == 0:
            raise ValueError("tabulated prior needs a non-empty list of weights")
        if np.any(~np.isfinite(raw)) or np.any(raw < 0):
            raise ValueError("tabulated prior weights must be finite and nonnegative")
        total = math.fsum(raw)
        if total <= 0:
            raise ValueError("tabulated prior weights sum to zero")
        if abs(total - 1.0) > NORMALIZATION_WARN_TOL:
            warnings.warn(
                f"tabulated prior weights sum to {total:.9g}; normalizing",
                stacklevel=3,
            )
        probs = raw / total
        # trim trailing zeros so that `support` is the last positive index
        last = int(np.flatnonzero(probs > 0)[-1]) + 1
        probs = probs[:last]
        object.__setattr__(self, "weights", tuple(float(p) for p in probs))
        with np.errstate(divide="ignore"):
            log_w = np.log(probs)
            # tails as exact suffix sums; tail[i] = P(lambda >= i + 1)
            suffix = np.array([math.fsum(probs[i:]) for i in range(last)] + [0.0])
            log_t = np.log(suffix)
        object.__setattr__(self, "_log_weights", log_w)
        object.__setattr__(self, "_log_tails", log_t)

    @classmethod
    def from_pmf(cls, pmf: Mapping[int, float]) -> "TabulatedPrior":
        """Build from {k: weight}; positive mass at k = 0 is rejected."""
        if any(k < 0 for k in pmf):
            raise ValueError("change points must be nonnegative")
        if pmf.get(0, 0.0) > 0:
            raise ValueError("positive prior mass at k = 0 is not supported (pi_0 = 0)")
        top = max(k for k in pmf if pmf[k] > 0)
        return cls(tuple(float(pmf.get(k, 0.0)) for k in range(1, top + 1)))

    @classmethod
    def from_csv(cls, path: str | Path) -> "TabulatedPrior":
        """One-column CSV; row i (1-based) is the raw weight of pi_i."""
        weights: list[float] = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
                    continue
                try:
                    weights.append(float(row[0]))
                except ValueError:
                    if weights:
                        raise
                    # header line
        return cls(tuple(weights))

    @property
    def support(self) -> int:
        return len(self.weights)

    def log_pi(self, k):
        k = np.asarray(k, dtype=np.int64)
        out = np.full(k.shape, -math.inf)
        inside = (k >= 1) & (k <= self.support)
        out[inside] = self._log_weights[k[inside] - 1]
        return out

    def log_tail(self, n):
        n = np.asarray(n, dtype=np.int64)
        idx = np.clip(n - 1, 0, self.support)
        return self._log_tails[idx]

    def entropy_constant(self) -> float:
        return math.fsum(-p * math.log(p) for p in self.weights if p > 0)

    def sample(self, rng):
        if self.support == 1:
            # degenerate prior: no randomness consumed, so trials replay Fixed(1)
            return 1
        return int(rng.choice(self.support, p=np.asarray(self.weights))) + 1

    def describe(self):
        return {"kind": "tabulated", "weights": list(self.weights)}


def make_prior(spec: Mapping) -> Prior:
    kind = spec["kind"]
    if kind == "geometric":
        return GeometricPrior(float(spec["rho"]))
    if kind == "tabulated":
        if spec.get("csv"):
            return TabulatedPrior.from_csv(spec["csv"])
        weights: Sequence[float] = spec["weights"]
        return TabulatedPrior(tuple(float(w) for w in weights))
    raise ValueError(f"unknown prior kind {kind!r}")
