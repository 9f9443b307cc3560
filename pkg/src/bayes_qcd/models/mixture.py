from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .base import Capability, DensityError, ObservationModel, PathSampler, _check_k

FAMILIES = ("gaussian", "exponential")


@dataclass(frozen=True)
class Density:
    """One-dimensional density from a small parametric menu.

    gaussian: params (mean, sd); exponential: params (rate,).
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.family == "gaussian":
            if len(self.params) != 2 or not self.params[1] > 0:
                raise ValueError(f"gaussian density needs (mean, sd > 0), got {self.params}")
        elif self.family == "exponential":
            if len(self.params) != 1 or not self.params[0] > 0:
                raise ValueError(f"exponential density needs (rate > 0,), got {self.params}")
        else:
            raise ValueError(f"unknown density family {self.family!r}; choose from {FAMILIES}")

    @classmethod
    def gaussian(cls, mean: float, sd: float) -> "Density":
        return cls("gaussian", (mean, sd))

    @classmethod
    def exponential(cls, rate: float) -> "Density":
        return cls("exponential", (rate,))

    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf) if self.family == "gaussian" else (0.0, math.inf)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            mu, sd = self.params
            return -0.5 * ((x - mu) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)
        (rate,) = self.params
        with np.errstate(invalid="ignore"):
            return np.where(x >= 0, math.log(rate) - rate * x, -math.inf)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.family == "gaussian":
            mu, sd = self.params
            return mu + sd * special.ndtri(u)
        (rate,) = self.params
        return -np.log1p(-u) / rate

    def describe(self) -> dict:
        if self.family == "gaussian":
            return {"family": "gaussian", "mean": self.params[0], "sd": self.params[1]}
        return {"family": "exponential", "rate": self.params[0]}


def kl_divergence(f: Density, g: Density) -> float:
    """E_f log(f/g) by adaptive quadrature over the support of f."""
    lo, hi = f.support

    def integrand(x):
        lf = float(f.logpdf(x))
        if lf == -math.inf:
            return 0.0
        lg = float(g.logpdf(x))
        if lg == -math.inf:
            return math.inf
        return math.exp(lf) * (lf - lg)

    g_lo, _ = g.support
    if g_lo > lo:
        return math.inf
    val, _ = integrate.quad(integrand, lo, hi, limit=200)
    return val


@dataclass(frozen=True)
class MixtureModel(ObservationModel):
    """Pre-change data from a two-component mixture of i.i.d. laws, post-change i.i.d. f1.

    f_0(X_1^n) = beta prod g1(X_i) + (1 - beta) prod g2(X_i): the component is
    drawn once per trajectory, which makes the pre-change observations
    dependent.  With I_1 > I_2 the likelihood ratio xi_n = prod g1/g2 dies
    out after the change and the LLR drift is I_2.
    """

    beta: float
    g1: Density
    g2: Density
    f1: Density

    capability = Capability.CHANGE_POINT_DEPENDENT
    kind = "mixture"

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"mixing probability beta must lie in (0, 1), got {self.beta}")
        if len({self.g1, self.g2, self.f1}) < 3:
            raise ValueError("g1, g2 and f1 must be pairwise distinct densities")
        i1, i2 = self.information_numbers()
        if not (math.isfinite(i1) and math.isfinite(i2)):
            raise ValueError("f1 must be absolutely continuous w.r.t. g1 and g2 (finite I_1, I_2)")
        if not i1 > i2 > 0:
            raise ValueError(f"need I_1 > I_2 > 0, got I_1={i1:.6g}, I_2={i2:.6g}")

    @property
    def v(self) -> float:
        return self.beta / (1.0 - self.beta)

    def information_numbers(self) -> tuple[float, float]:
        """(I_1, I_2) with I_j = E_{f1} log(f1/g_j)."""
        return self._information

    @cached_property
    def _information(self) -> tuple[float, float]:
        return kl_divergence(self.f1, self.g1), kl_divergence(self.f1, self.g2)

    @property
    def kl_number(self) -> float:
        return self.information_numbers()[1]

    def path(self, change_point, rng):
        return _MixturePath(self, change_point, rng)

    def _terms(self, x):
        """Cumulative sums of R_2 and log(1 + v xi_i) for i = 0..N."""
        x = np.asarray(x, dtype=float)
        lf1 = self.f1.logpdf(x)
        lg1 = self.g1.logpdf(x)
        lg2 = self.g2.logpdf(x)
        for name, vals in (("f1", lf1), ("g2", lg2)):
            bad = np.flatnonzero(~np.isfinite(vals))
            if bad.size:
                raise DensityError(int(bad[0]) + 1, f"density {name} vanishes at x={x[bad[0]]!r}")
        r2 = np.concatenate(([0.0], np.cumsum(lf1 - lg2)))
        log_xi = np.concatenate(([0.0], np.cumsum(lg1 - lg2)))
        ell = np.logaddexp(0.0, math.log(self.v) + log_xi)
        return r2, log_xi, ell

    def log_xi(self, x) -> np.ndarray:
        """log xi_i for i = 0..N (xi_0 = 1)."""
        return self._terms(x)[1]

    def llr_block(self, x, n_lo, n_hi, prev=None):
        r2, _, ell = self._terms(x[:n_hi])
        ks = np.arange(1, n_hi + 1)[:, None]
        ns = np.arange(n_lo, n_hi + 1)[None, :]
        z = (r2[ns] - r2[ks - 1]) + ell[ks - 1] - ell[ns]
        return np.where(ks <= ns, z, -math.inf)

    def llr_path(self, x, k):
        _check_k(k, len(x))
        r2, _, ell = self._terms(x)
        ns = np.arange(k, len(x) + 1)
        return (r2[ns] - r2[k - 1]) + ell[k - 1] - ell[ns]

    def describe(self):
        return {
            "kind": self.kind,
            "beta": self.beta,
            "g1": self.g1.describe(),
            "g2": self.g2.describe(),
            "f1": self.f1.describe(),
        }


class _MixturePath(PathSampler):
    def __init__(self, model: MixtureModel, change_point, rng):
        super().__init__(change_point, rng)
        self.model = model
        self.component = model.g1 if rng.random() < model.beta else model.g2

    def _draw(self, count):
        u = self.rng.random(count)
        u[u == 0.0] = np.nextafter(0.0, 1.0)
        post = self.post_change_mask(count)
        return np.where(post, self.model.f1.ppf(u), self.component.ppf(u))


def mixture_llr(model: MixtureModel, trajectory, k: int, n: int) -> float:
    """Z_n^k = sum_{i=k}^n R_2(i) + log((1 + v xi_{k-1}) / (1 + v xi_n))."""
    x = np.asarray(trajectory, dtype=float)
    _check_k(k, n)
    if n > len(x):
        raise ValueError(f"n={n} exceeds the trajectory length {len(x)}")
    r2, _, ell = model._terms(x[:n])
    return float(r2[n] - r2[k - 1] + ell[k - 1] - ell[n])
