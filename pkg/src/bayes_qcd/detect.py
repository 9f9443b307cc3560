"""Detection statistic G_n, the stopping rule tau_A and its companions.

G_n = sum_{k<=n} pi_k exp(Z_n^k) + P(lambda >= n+1) is the prior-averaged
likelihood ratio of "change already happened" against "no change".  The
rule tau_A stops the first time G_n >= A; the equivalent posterior form
compares P(lambda <= n | F_n) with the increasing threshold
1 - P(lambda >= n+1)/A.  Shiryaev's rule uses a constant threshold instead.

Everything is kept in the log domain: G_n easily exceeds 1e300 on long
post-change runs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from ._numerics import NEG_INF, log_sub, logsumexp, logsumexp_columns
from .models.base import Capability, CapabilityError, LlrSource, ObservationModel
from .prior import Prior


class Calibration(enum.Enum):
    CONSERVATIVE = "conservative"  # A = 1/alpha, PFA <= alpha guaranteed
    OVERSHOOT_CORRECTED = "overshoot_corrected"  # A = 1/(zeta alpha), PFA ~ alpha


@dataclass(frozen=True)
class ThresholdPolicy:
    A: float
    calibration: Calibration = Calibration.CONSERVATIVE
    alpha: float | None = None

    def __post_init__(self) -> None:
        if not self.A > 1:
            raise ValueError(f"threshold A must exceed 1, got {self.A}")

    @property
    def log_A(self) -> float:
        return math.log(self.A)


@dataclass(frozen=True)
class DetectorState:
    """State of the detector after n observations.

    ``log_g`` is log G_n and ``log_tail`` is log P(lambda >= n+1).  In direct
    mode ``per_k_terms`` holds log(pi_k Lambda_n^k) for k = 1..n.
    """

    n: int
    log_g: float
    log_tail: float
    stopped_at: int | None = None
    per_k_terms: np.ndarray | None = None

    @property
    def G(self) -> float:
        return math.exp(self.log_g) if self.log_g < 709 else math.inf

    @property
    def posterior(self) -> float:
        return posterior_from_logs(self.log_g, self.log_tail)


def initial_state(prior: Prior) -> DetectorState:
    """G_0 = 1 and P(lambda >= 1) = 1."""
    return DetectorState(n=0, log_g=0.0, log_tail=float(prior.log_tail(np.array([1]))[0]))


def posterior_from_logs(log_g, log_tail):
    """P(lambda <= n | F_n) = (G_n - Pi_{n+1}) / G_n, vectorized."""
    return -np.expm1(np.asarray(log_tail) - np.asarray(log_g)) if np.ndim(log_g) else -math.expm1(log_tail - log_g)


def _log_tail_at(prior: Prior, n: int) -> float:
    return float(prior.log_tail(np.array([n]))[0])


def update_recursive(state: DetectorState, dz, prior: Prior) -> DetectorState:
    """G_n = (G_{n-1} - Pi_{n+1}) e^{dZ_n} + Pi_{n+1}.

    ``dz`` is the LLR increment of step n or an LlrSource, in which case the
    increment is read from it; sources whose LLR depends on the change point
    are refused.
    """
    n = state.n + 1
    if isinstance(dz, LlrSource):
        if dz.capability is not Capability.INCREMENT_STATIONARY:
            raise CapabilityError("the G_n recursion needs an increment-stationary LLR source")
        dz = dz.increment(n)
    log_tail_next = _log_tail_at(prior, n + 1)
    log_s = log_sub(state.log_g, log_tail_next)
    log_g = float(np.logaddexp(log_s + float(dz), log_tail_next))
    return DetectorState(n=n, log_g=log_g, log_tail=log_tail_next, stopped_at=state.stopped_at)


def update_direct(state: DetectorState, source: LlrSource, prior: Prior, new_observation=None) -> DetectorState:
    """G_n as a log-sum-exp over all hypothesized change points k <= n.

    Works for any capability.  If ``new_observation`` is given it is first
    appended to the source; otherwise the source must already hold X_n.
    """
    n = state.n + 1
    if new_observation is not None:
        source.append(new_observation)
    if source.n < n:
        raise ValueError(f"source holds {source.n} observations, step {n} requested")
    terms = prior.log_pi(np.arange(1, n + 1)) + source.column(n)
    log_tail_next = _log_tail_at(prior, n + 1)
    log_g = float(np.logaddexp(logsumexp(terms), log_tail_next))
    return DetectorState(n=n, log_g=log_g, log_tail=log_tail_next, stopped_at=state.stopped_at, per_k_terms=terms)


def posterior_of(state: DetectorState, prior: Prior | None = None) -> float:
    return state.posterior


def posterior_threshold(log_tail, A: float):
    """Increasing posterior threshold 1 - Pi_{n+1}/A equivalent to G_n >= A."""
    return -np.expm1(np.asarray(log_tail) - math.log(A)) if np.ndim(log_tail) else -math.expm1(log_tail - math.log(A))


def check_stop_tauA(state: DetectorState, policy: ThresholdPolicy) -> DetectorState:
    """Flag the stop at step n when G_n >= A (ties stop).

    Returns the state with ``stopped_at`` set on the first crossing; once
    set it is never moved.
    """
    if state.n < 1:
        raise ValueError("tau_A is defined for n >= 1")
    if state.stopped_at is None and state.log_g >= policy.log_A:
        return replace(state, stopped_at=state.n)
    return state


def posterior_form_stops(state: DetectorState, policy: ThresholdPolicy) -> bool:
    """Posterior-threshold form of tau_A: P(lambda <= n | F_n) >= 1 - Pi_{n+1}/A.

    Agrees with ``G_n >= A`` whenever Pi_{n+1} > 0.  Past the support of a
    finite prior both sides equal 1 and the form no longer discriminates.
    """
    return state.posterior >= posterior_threshold(state.log_tail, policy.A)


def check_stop_shiryaev(state: DetectorState, B: float) -> int | None:
    """Step n if the posterior has reached the constant level B, else None."""
    if not 0.0 < B < 1.0:
        raise ValueError(f"Shiryaev threshold B must lie in (0, 1), got {B}")
    if state.n >= 1 and state.posterior >= B:
        return state.n
    return None


def dominating_time_nu_k(source: LlrSource, prior: Prior, k: int, A: float) -> int | None:
    """First n >= k with Z_n^k >= log(A / pi_k); None if not reached in the data.

    Since G_n >= pi_k exp(Z_n^k), tau_A never exceeds this time.
    """
    if not A > 1:
        raise ValueError(f"A must exceed 1, got {A}")
    log_pi = float(prior.log_pi(np.array([k]))[0])
    if log_pi == NEG_INF:
        raise ValueError(f"pi_{k} = 0: the one-sided time nu_k is undefined")
    if k > source.n:
        return None
    z = source.path(k)
    hits = np.flatnonzero(z >= math.log(A) - log_pi)
    return int(k + hits[0]) if hits.size else None


@dataclass(frozen=True)
class EtaResult:
    """Outcome of the one-sided test eta_b: first crossing of Z_n^1 over b."""

    step: int | None
    overshoot: float | None

    @property
    def censored(self) -> bool:
        return self.step is None


def one_sided_test_eta(source: LlrSource, b: float) -> EtaResult:
    """eta_b = min{n >= 1: Z_n^1 >= b} and the overshoot Z_eta^1 - b."""
    if not b > 0:
        raise ValueError(f"b must be positive, got {b}")
    if source.n == 0:
        return EtaResult(None, None)
    z = source.path(1)
    return first_crossing(z, b)


def first_crossing(z: np.ndarray, b: float) -> EtaResult:
    hits = np.flatnonzero(z >= b)
    if not hits.size:
        return EtaResult(None, None)
    i = int(hits[0])
    return EtaResult(i + 1, float(z[i] - b))


class SequentialDetector:
    """Online tau_A detector over a stream of observations.

    ``mode="auto"`` uses the recursion for increment-stationary models and
    the direct sum otherwise.
    """

    def __init__(self, model: ObservationModel, prior: Prior, policy: ThresholdPolicy, mode: str = "auto"):
        if mode == "auto":
            mode = "recursive" if model.capability is Capability.INCREMENT_STATIONARY else "direct"
        if mode == "recursive" and model.capability is not Capability.INCREMENT_STATIONARY:
            raise CapabilityError(f"{type(model).__name__} needs the direct mode")
        if mode not in ("recursive", "direct"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.prior = prior
        self.policy = policy
        self.source = LlrSource(model)
        self.state = initial_state(prior)

    def step(self, x) -> DetectorState:
        if self.mode == "recursive":
            self.source.append(x)
            state = update_recursive(self.state, self.source.increment(self.state.n + 1), self.prior)
        else:
            state = update_direct(self.state, self.source, self.prior, x)
        self.state = check_stop_tauA(state, self.policy)
        return self.state


class GStatistic:
    """Vectorized log G_n over successive windows of one trajectory.

    Each call to ``advance(x, n_hi)`` evaluates steps n+1..n_hi, where x holds
    at least n_hi observations.  Increment-stationary models use a prefix
    log-sum-exp (exact rewrite of the recursion); the others evaluate the
    full double sum column by column.
    """

    block = 256

    def __init__(self, model: ObservationModel, prior: Prior, direct: bool | None = None):
        self.model = model
        self.prior = prior
        if direct is None:
            direct = model.capability is not Capability.INCREMENT_STATIONARY
        if not direct and model.capability is not Capability.INCREMENT_STATIONARY:
            raise CapabilityError("prefix evaluation needs an increment-stationary model")
        self.direct = direct
        self.n = 0
        self._cum = 0.0  # C_n = Z_n^1
        self._acc = NEG_INF  # log sum_{k<=n} pi_k exp(-C_{k-1})
        self._prev: np.ndarray | None = None

    def advance(self, x: np.ndarray, n_hi: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (n, log G_n, log Pi_{n+1}) for the new steps."""
        n_lo = self.n + 1
        if n_hi < n_lo:
            raise ValueError("nothing to advance")
        ns = np.arange(n_lo, n_hi + 1)
        log_tail = self.prior.log_tail(ns + 1)
        if self.direct:
            log_s = self._direct(x, n_lo, n_hi)
        else:
            dz = self.model.llr_increments(x[:n_hi])[n_lo - 1 : n_hi]
            cum = self._cum + np.cumsum(dz)
            cum_prev = np.concatenate(([self._cum], cum[:-1]))
            a = self.prior.log_pi(ns) - cum_prev
            acc = np.logaddexp.accumulate(np.concatenate(([self._acc], a)))[1:]
            self._cum, self._acc = float(cum[-1]), float(acc[-1])
            with np.errstate(invalid="ignore"):
                log_s = np.where(np.isfinite(acc), cum + acc, NEG_INF)
        self.n = n_hi
        return ns, np.logaddexp(log_s, log_tail), log_tail

    def _direct(self, x, n_lo, n_hi):
        out = []
        for lo in range(n_lo, n_hi + 1, self.block):
            hi = min(n_hi, lo + self.block - 1)
            z = self.model.llr_block(x, lo, hi, self._prev)
            log_pi = self.prior.log_pi(np.arange(1, hi + 1))
            out.append(logsumexp_columns(log_pi[:, None] + z))
            self._prev = z[:, -1].copy()
        return np.concatenate(out)


def log_g_path(model: ObservationModel, prior: Prior, x: np.ndarray, direct: bool | None = None):
    """(log G_n, log Pi_{n+1}) for n = 1..len(x)."""
    stat = GStatistic(model, prior, direct)
    _, log_g, log_tail = stat.advance(np.asarray(x), len(x))
    return log_g, log_tail
