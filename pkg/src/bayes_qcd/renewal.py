"""Overshoot constants and the closed-form PFA / delay approximations.

zeta = lim E_1 exp(-kappa_b) and kappa_bar = lim E_1 kappa_b, where kappa_b is
the excess of Z_n^1 over a level b at its first crossing, drive the
overshoot-corrected false alarm probability zeta/A and the higher-order
delay approximations.  Both are estimated by Monte Carlo at a single large
level b; the exponential model has them in closed form.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._numerics import mean_and_se
from .detect import Calibration, ThresholdPolicy, first_crossing
from .models.base import ObservationModel
from .seeding import run_sharded, trial_rng

log = logging.getLogger(__name__)

CENSOR_WARN = 0.001
CENSOR_REFUSE = 0.01


class EstimateRefused(RuntimeError):
    """A Monte Carlo estimate was refused (too much censoring, too few trials)."""


class Order(enum.Enum):
    FIRST_ORDER = "first_order"  # ignores the overshoot
    HIGHER_ORDER = "higher_order"  # adds kappa_bar - 1 correction
    NO_KAPPA_NO_MINUS_ONE = "no_kappa_no_minus_one"  # (log A + C_pi) / q


@dataclass(frozen=True)
class OvershootEstimate:
    zeta_hat: float
    kappa_bar_hat: float
    se_zeta: float
    se_kappa: float
    b_used: float
    n_trials: int
    censored: int
    overshoots: np.ndarray | None = None

    def as_dict(self) -> dict:
        return {
            "zeta_hat": self.zeta_hat,
            "kappa_bar_hat": self.kappa_bar_hat,
            "se_zeta": self.se_zeta,
            "se_kappa": self.se_kappa,
            "b_used": self.b_used,
            "n_trials": self.n_trials,
            "censored": self.censored,
        }


def default_level(model: ObservationModel) -> float:
    q = model.kl_number
    return max(25.0, 25.0 * q)


def _overshoot_shard(model, b, horizon, seed, fingerprint, trials):
    out = []
    for t in trials:
        rng = trial_rng(seed, t, fingerprint)
        sampler = model.path(1, rng)
        x = np.empty(0) if model_dim(model) == 1 else np.empty((0, model_dim(model)))
        n_hi = min(horizon, int(math.ceil(1.5 * b / model.kl_number)) + 16)
        result = None
        while True:
            x = np.concatenate([x, sampler.draw(n_hi - len(x))])
            result = first_crossing(model.llr_path(x, 1), b)
            if not result.censored or n_hi >= horizon:
                break
            n_hi = min(horizon, 2 * n_hi)
        out.append(math.nan if result.censored else result.overshoot)
    return out


def model_dim(model: ObservationModel) -> int:
    return getattr(model, "dim", 1)


def estimate_overshoot(
    model: ObservationModel,
    b: float | None = None,
    n_trials: int = 10_000,
    seed: int = 0,
    workers: int = 1,
    keep_samples: bool = False,
) -> OvershootEstimate:
    """Monte Carlo estimate of E_1 exp(-kappa_b) and E_1 kappa_b under P_1.

    Trials that do not cross within ceil(10 b / q) steps are censored.  More
    than 1% censoring refuses the estimate.
    """
    if b is None:
        b = default_level(model)
    if not b > 0:
        raise ValueError(f"level b must be positive, got {b}")
    if not model.nonarithmetic:
        log.info("overshoot of an arithmetic LLR: limits are taken along the lattice")
    horizon = int(math.ceil(10.0 * b / model.kl_number))
    kappas = run_sharded(
        _overshoot_shard, n_trials, workers, model, b, horizon, seed, model.fingerprint()
    )
    kappas = np.asarray(kappas, dtype=float)
    censored = int(np.isnan(kappas).sum())
    frac = censored / n_trials
    if frac > CENSOR_REFUSE:
        raise EstimateRefused(
            f"{censored}/{n_trials} trials did not cross b={b} within {horizon} steps; raise the horizon or lower b"
        )
    if frac > CENSOR_WARN:
        warnings.warn(f"{censored} of {n_trials} overshoot trials censored", stacklevel=2)
    ok = kappas[~np.isnan(kappas)]
    zeta, se_zeta = mean_and_se(np.exp(-ok))
    kappa, se_kappa = mean_and_se(ok)
    return OvershootEstimate(
        zeta_hat=zeta,
        kappa_bar_hat=kappa,
        se_zeta=se_zeta,
        se_kappa=se_kappa,
        b_used=float(b),
        n_trials=n_trials,
        censored=censored,
        overshoots=ok if keep_samples else None,
    )


def pfa_corrected(A: float, zeta: float) -> float:
    """Overshoot-corrected global false alarm probability zeta / A."""
    if not A > 1:
        raise ValueError(f"A must exceed 1, got {A}")
    if not 0 < zeta <= 1:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")
    return zeta / A


def calibrate_threshold(alpha: float, mode: Calibration | str = Calibration.CONSERVATIVE, zeta: float | None = None) -> ThresholdPolicy:
    """Threshold for a target global PFA alpha.

    Conservative: A = 1/alpha, which guarantees PFA <= alpha.
    Overshoot-corrected: A = 1/(zeta alpha), which gives PFA ~ alpha.
    """
    mode = Calibration(mode)
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if mode is Calibration.CONSERVATIVE:
        return ThresholdPolicy(1.0 / alpha, mode, alpha)
    if zeta is None:
        raise ValueError("overshoot-corrected calibration needs zeta")
    if not 0 < zeta <= 1:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")
    return ThresholdPolicy(1.0 / (zeta * alpha), mode, alpha)


def add_approx(A: float, I: float, C_pi: float, kappa_bar: float, order: Order | str = Order.HIGHER_ORDER) -> float:
    """Approximate ADD of tau_A averaged over the prior."""
    order = Order(order)
    if not A > 1 or not I > 0:
        raise ValueError("need A > 1 and I > 0")
    log_a = math.log(A)
    if order is Order.HIGHER_ORDER:
        return (log_a + C_pi + kappa_bar - 1.0) / I
    if order is Order.FIRST_ORDER:
        return (log_a + C_pi - 1.0) / I
    return (log_a + C_pi) / I


def cond_add_approx(A: float, pi_k: float, I: float, kappa_bar: float, order: Order | str = Order.HIGHER_ORDER) -> float:
    """Approximate E_k(tau_A - k | tau_A >= k) for a change at k with prior mass pi_k."""
    order = Order(order)
    if not pi_k > 0:
        raise ValueError("pi_k must be positive")
    if not A > 1 or not I > 0:
        raise ValueError("need A > 1 and I > 0")
    log_ratio = math.log(A) - math.log(pi_k)
    if order is Order.HIGHER_ORDER:
        return (log_ratio + kappa_bar - 1.0) / I
    if order is Order.FIRST_ORDER:
        return (log_ratio - 1.0) / I
    return log_ratio / I
