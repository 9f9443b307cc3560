"""Common contract for observation models and per-trajectory LLR sources.

A model knows how to simulate observations under P_k (change at k) and
P_inf (no change), and how to turn an observation prefix X_1..X_N into
log-likelihood ratios Z_n^k = log dP_k/dP_inf restricted to F_n.

Two capabilities exist.  Increment-stationary models have
Z_n^k = sum_{i=k}^n dZ_i with dZ_i free of k, which admits the O(1)
recursion for G_n.  Change-point-dependent models only answer Z_n^k as a
whole and force the direct O(n) evaluation of G_n.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import ClassVar

import numpy as np

NO_CHANGE = math.inf


class Capability(enum.Enum):
    INCREMENT_STATIONARY = "increment_stationary"
    CHANGE_POINT_DEPENDENT = "change_point_dependent"


class CapabilityError(RuntimeError):
    """Raised when an operation needs a capability the source lacks."""


class DensityError(ValueError):
    """An observation has zero density under a component of the model."""

    def __init__(self, index: int, message: str):
        super().__init__(f"observation {index}: {message}")
        self.index = index


class PathSampler(ABC):
    """Stateful, prefix-consistent simulator of one trajectory.

    ``draw(m)`` returns the next m observations.  Drawing 10 then 20 yields
    the same 30 values as drawing 30 at once.
    """

    def __init__(self, change_point: float, rng: np.random.Generator):
        if change_point != NO_CHANGE and (change_point < 1 or int(change_point) != change_point):
            raise ValueError(f"change point must be a positive integer or inf, got {change_point}")
        self.change_point = change_point
        self.rng = rng
        self.n = 0

    def post_change_mask(self, count: int) -> np.ndarray:
        idx = np.arange(self.n + 1, self.n + count + 1)
        return idx >= self.change_point

    def draw(self, count: int) -> np.ndarray:
        out = self._draw(count)
        self.n += count
        return out

    @abstractmethod
    def _draw(self, count: int) -> np.ndarray: ...


class ObservationModel(ABC):
    """Base class of the four observation models (plus the drift stub)."""

    capability: ClassVar[Capability]
    kind: ClassVar[str]
    # known to be nonarithmetic (needed for the renewal-theoretic limits)
    nonarithmetic: ClassVar[bool] = True

    @property
    @abstractmethod
    def kl_number(self) -> float:
        """Asymptotic per-step drift q of Z_{k+n-1}^k under P_k."""

    @abstractmethod
    def path(self, change_point: float, rng: np.random.Generator) -> PathSampler: ...

    @abstractmethod
    def describe(self) -> dict:
        """JSON-serializable parameter dump (also used for the fingerprint)."""

    def sample(self, change_point: float, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.path(change_point, rng).draw(n)

    def fingerprint(self) -> int:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little")

    def overshoot_constants(self) -> tuple[float, float] | None:
        """Exact (zeta, kappa_bar) when known in closed form."""
        return None

    # --- LLR evaluation -------------------------------------------------

    def llr_increments(self, x: np.ndarray) -> np.ndarray:
        """dZ_1..dZ_N; only for increment-stationary models."""
        raise CapabilityError(f"{type(self).__name__} has no k-free LLR increments")

    def llr_block(
        self, x: np.ndarray, n_lo: int, n_hi: int, prev: np.ndarray | None = None
    ) -> np.ndarray:
        """Z_n^k for k = 1..n_hi (rows) and n = n_lo..n_hi (columns).

        ``prev`` holds Z_{n_lo-1}^k for k < n_lo; models that need it to
        continue a running sum may use it, others ignore it.  Entries with
        k > n are -inf.
        """
        cum = np.concatenate(([0.0], np.cumsum(self.llr_increments(x[:n_hi]))))
        ks = np.arange(1, n_hi + 1)[:, None]
        ns = np.arange(n_lo, n_hi + 1)[None, :]
        z = cum[ns] - cum[ks - 1]
        return np.where(ks <= ns, z, -math.inf)

    def llr_path(self, x: np.ndarray, k: int) -> np.ndarray:
        """Z_n^k for n = k..N."""
        _check_k(k, len(x))
        return np.cumsum(self.llr_increments(x)[k - 1 :])


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise ValueError(f"change point k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the available horizon n={n}")


class LlrSource:
    """LLR provider for one trajectory over a growing observation buffer."""

    def __init__(self, model: ObservationModel, observations=()):
        self.model = model
        self._x: list = []
        self._column_n = 0
        self._column: np.ndarray = np.empty(0)
        self.extend(observations)

    @property
    def capability(self) -> Capability:
        return self.model.capability

    @property
    def kl_number(self) -> float:
        return self.model.kl_number

    @property
    def n(self) -> int:
        return len(self._x)

    @property
    def observations(self) -> np.ndarray:
        return np.asarray(self._x, dtype=float)

    def append(self, x) -> None:
        self._x.append(np.asarray(x, dtype=float) if np.ndim(x) else float(x))

    def extend(self, xs) -> None:
        for x in xs:
            self.append(x)

    def increment(self, n: int) -> float:
        if self.capability is not Capability.INCREMENT_STATIONARY:
            raise CapabilityError("LLR increments need an increment-stationary source")
        _check_k(n, self.n)
        return float(self.model.llr_increments(self.observations[:n])[n - 1])

    def column(self, n: int) -> np.ndarray:
        """Z_n^k for k = 1..n."""
        _check_k(n, self.n)
        if n != self._column_n + 1:
            block = self.model.llr_block(self.observations[:n], n, n, None)
        else:
            prev = self._column if self._column_n else None
            block = self.model.llr_block(self.observations[:n], n, n, prev)
        self._column = block[:, 0].copy()
        self._column_n = n
        return self._column.copy()

    def z(self, k: int, n: int) -> float:
        _check_k(k, n)
        return float(self.path(k)[n - k])

    def path(self, k: int) -> np.ndarray:
        """Z_n^k for n = k..N over the current buffer."""
        return self.model.llr_path(self.observations, k)


def export_trajectory_csv(path: str | Path, model: ObservationModel, x: np.ndarray) -> None:
    """Write n, X_n and dZ_n (stationary) or Z_n^1 (change-point dependent)."""
    x = np.asarray(x, dtype=float)
    if model.capability is Capability.INCREMENT_STATIONARY:
        llr_name, llr = "dZ_n", model.llr_increments(x)
    else:
        llr_name, llr = "Z_n^1", model.llr_path(x, 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "X_n", llr_name])
        for i, (xi, zi) in enumerate(zip(x, llr), start=1):
            writer.writerow([i, format_observation(xi), repr(float(zi))])


def format_observation(x) -> str:
    if np.ndim(x):
        return ";".join(repr(float(v)) for v in np.ravel(x))
    return repr(float(x))
