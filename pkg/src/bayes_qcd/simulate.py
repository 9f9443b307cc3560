"""Monte Carlo campaigns for tau_A: false alarm probability, delays, slopes.

Every trial owns its random stream (see ``seeding``), so campaigns are
bit-reproducible for a given (config, seed) whatever the number of workers.
Trials that reach the horizon without stopping are censored and reported,
never silently dropped.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._numerics import NEG_INF, mean_and_se
from .detect import GStatistic, ThresholdPolicy, first_crossing
from .models.base import NO_CHANGE, ObservationModel
from .prior import Prior
from .renewal import EstimateRefused
from .seeding import run_sharded, trial_rng

PRIOR_TRUNCATION = 1e-6
# Ville: P_inf(sup_{m>=n} G_m >= A | F_n) <= G_n / A, so trials with
# G_n / A below this level are resolved as "no alarm" with that residual.
NEGLIGIBLE_RATIO = 1e-10
MIN_EFFECTIVE = 100


class ConfigurationError(ValueError):
    """Campaign parameters that cannot produce a meaningful estimate."""


class Mode(enum.Enum):
    FROM_PRIOR = "from_prior"
    FIXED = "fixed"
    NO_CHANGE = "no_change"


@dataclass(frozen=True)
class ChangePointMode:
    kind: Mode
    k: int | None = None

    def __post_init__(self) -> None:
        if self.kind is Mode.FIXED and (self.k is None or self.k < 1):
            raise ValueError("fixed change point mode needs k >= 1")

    @classmethod
    def from_prior(cls) -> "ChangePointMode":
        return cls(Mode.FROM_PRIOR)

    @classmethod
    def fixed(cls, k: int) -> "ChangePointMode":
        return cls(Mode.FIXED, int(k))

    @classmethod
    def no_change(cls) -> "ChangePointMode":
        return cls(Mode.NO_CHANGE)


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    change_point: float
    stop_step: int | None
    steps_run: int
    outcome: str  # "stopped", "horizon" or "negligible"
    residual_bound: float = 0.0
    rejections: int = 0
    nu_k: int | None = None
    shiryaev_stop: int | None = None

    @property
    def censored(self) -> bool:
        return self.stop_step is None

    @property
    def false_alarm(self) -> bool:
        return self.stop_step is not None and self.stop_step < self.change_point

    @property
    def delay(self) -> int | None:
        """(tau - lambda)^+ for stopped trials with a finite change point."""
        if self.stop_step is None or self.change_point == NO_CHANGE:
            return None
        return max(self.stop_step - int(self.change_point), 0)


@dataclass(frozen=True)
class EstimateSummary:
    metric: str
    value: float
    stderr: float
    n_trials: int
    horizon: int
    censored_count: int
    param: str | float | None = None
    effective_n: int | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def prior_horizon(prior: Prior) -> int:
    """Smallest n with P(lambda > n) < PRIOR_TRUNCATION."""
    if prior.support is not None:
        return prior.support
    n = 1
    while prior.tail(n + 1) >= PRIOR_TRUNCATION:
        n *= 2
    lo, hi = n // 2, n
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if prior.tail(mid + 1) >= PRIOR_TRUNCATION:
            lo = mid
        else:
            hi = mid
    return hi


def default_horizon(model: ObservationModel, prior: Prior | None, policy: ThresholdPolicy) -> int:
    """200 log A / q steps past the bulk of the prior."""
    base = prior_horizon(prior) if prior is not None else 0
    return base + int(math.ceil(200.0 * policy.log_A / model.kl_number))


def _draw_change_point(mode, prior, horizon, rng) -> tuple[float, int]:
    if mode.kind is Mode.NO_CHANGE:
        return NO_CHANGE, 0
    if mode.kind is Mode.FIXED:
        return mode.k, 0
    if prior.tail(horizon + 1) >= PRIOR_TRUNCATION:
        raise ConfigurationError(
            f"horizon {horizon} leaves P(lambda > horizon) = {prior.tail(horizon + 1):.3g} >= {PRIOR_TRUNCATION}"
        )
    rejections = 0
    while True:
        k = prior.sample(rng)
        if k <= horizon:
            return k, rejections
        rejections += 1


def _first_window(model, prior, policy, change_point) -> int:
    if change_point == NO_CHANGE:
        return 128
    log_pi = float(prior.log_pi(np.array([int(change_point)]))[0])
    budget = policy.log_A - (log_pi if log_pi > NEG_INF else 0.0)
    return int(change_point) + int(math.ceil(2.0 * budget / model.kl_number)) + 32


class _Trajectory:
    def __init__(self, model, sampler):
        self.sampler = sampler
        dim = getattr(model, "dim", 1)
        self.x = np.empty(0) if dim == 1 else np.empty((0, dim))

    def ensure(self, n: int) -> np.ndarray:
        if n > len(self.x):
            self.x = np.concatenate([self.x, self.sampler.draw(n - len(self.x))])
        return self.x


def run_trial(
    model: ObservationModel,
    prior: Prior,
    policy: ThresholdPolicy,
    mode: ChangePointMode,
    horizon: int,
    seed: int,
    trial: int = 0,
    *,
    audit: bool = False,
    shiryaev_B: float | None = None,
    negligible: float | None = NEGLIGIBLE_RATIO,
    fingerprint: int | None = None,
) -> TrialRecord:
    """Simulate one trajectory and run tau_A on it.

    With ``audit`` the one-sided time nu_k(A) of the true change point is
    recorded too; with ``shiryaev_B`` Shiryaev's rule runs on the same path.
    Under no change, trials whose G_n / A falls below ``negligible`` are
    resolved as "no alarm" (the chance of a later alarm is at most G_n / A).
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    if fingerprint is None:
        fingerprint = model.fingerprint()
    rng = trial_rng(seed, trial, fingerprint)
    change_point, rejections = _draw_change_point(mode, prior, horizon, rng)
    traj = _Trajectory(model, model.path(change_point, rng))
    stat = GStatistic(model, prior)

    use_negligible = negligible is not None and change_point == NO_CHANGE and shiryaev_B is None
    log_neg = policy.log_A + math.log(negligible) if use_negligible else None
    log_1mB = math.log1p(-shiryaev_B) if shiryaev_B is not None else None

    stop = shiry = None
    outcome, residual = "horizon", 0.0
    window = min(horizon, _first_window(model, prior, policy, change_point))
    while stat.n < horizon:
        n_hi = min(horizon, max(window, stat.n + 1))
        ns, log_g, log_tail = stat.advance(traj.ensure(n_hi), n_hi)
        if stop is None:
            hits = np.flatnonzero(log_g >= policy.log_A)
            first_hit = int(hits[0]) if hits.size else None
            if log_neg is not None:
                low = np.flatnonzero(log_g < log_neg)
                if low.size and (first_hit is None or low[0] < first_hit):
                    outcome = "negligible"
                    residual = math.exp(float(log_g[low[0]]) - policy.log_A)
                    steps = int(ns[low[0]])
                    break
            if first_hit is not None:
                stop, outcome = int(ns[first_hit]), "stopped"
        if log_1mB is not None and shiry is None:
            s_hits = np.flatnonzero(log_tail - log_g <= log_1mB)
            if s_hits.size:
                shiry = int(ns[s_hits[0]])
        if stop is not None and (log_1mB is None or shiry is not None):
            break
        window *= 2
    if outcome != "negligible":
        steps = stat.n

    nu_k = None
    if audit and change_point != NO_CHANGE:
        nu_k = _one_sided_time(model, prior, policy, traj, int(change_point), horizon)
    return TrialRecord(
        trial=trial,
        change_point=change_point,
        stop_step=stop,
        steps_run=steps,
        outcome=outcome,
        residual_bound=residual,
        rejections=rejections,
        nu_k=nu_k,
        shiryaev_stop=shiry,
    )


def _one_sided_time(model, prior, policy, traj, k, horizon) -> int | None:
    log_pi = float(prior.log_pi(np.array([k]))[0])
    if log_pi == NEG_INF:
        return None
    level = policy.log_A - log_pi
    n_hi = max(len(traj.x), k)
    while True:
        n_hi = min(horizon, n_hi)
        z = model.llr_path(traj.ensure(n_hi), k)
        res = first_crossing(z, level)
        if not res.censored:
            return k + res.step - 1
        if n_hi >= horizon:
            return None
        n_hi *= 2


def _trial_shard(model, prior, policy, mode, horizon, seed, options, trials):
    fp = model.fingerprint()
    return [run_trial(model, prior, policy, mode, horizon, seed, t, fingerprint=fp, **options) for t in trials]


def run_trials(
    model: ObservationModel,
    prior: Prior,
    policy: ThresholdPolicy,
    mode: ChangePointMode,
    horizon: int,
    n_trials: int,
    seed: int,
    workers: int = 1,
    **options,
) -> list[TrialRecord]:
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    if mode.kind is Mode.FROM_PRIOR and prior.tail(horizon + 1) >= PRIOR_TRUNCATION:
        raise ConfigurationError(
            f"horizon {horizon} too small for the prior: P(lambda > horizon) = {prior.tail(horizon + 1):.3g}"
        )
    return run_sharded(_trial_shard, n_trials, workers, model, prior, policy, mode, horizon, seed, options)


# --- campaign summaries ----------------------------------------------------


def _censoring(records) -> dict:
    return {
        "stopped": sum(r.outcome == "stopped" for r in records),
        "horizon": sum(r.outcome == "horizon" for r in records),
        "negligible": sum(r.outcome == "negligible" for r in records),
        "prior_rejections": sum(r.rejections for r in records),
    }


def pfa_summary(records: list[TrialRecord], horizon: int) -> EstimateSummary:
    n = len(records)
    alarms = sum(not r.censored for r in records)
    p = alarms / n
    residual = math.fsum(r.residual_bound for r in records) / n
    extras = _censoring(records)
    extras["residual_bound"] = residual
    extras["note"] = "estimates P_inf(tau_A <= horizon), a lower bound on P_inf(tau_A < inf)"
    return EstimateSummary(
        metric="PFA_global",
        value=p,
        stderr=math.sqrt(p * (1 - p) / n),
        n_trials=n,
        horizon=horizon,
        censored_count=n - alarms,
        extras=extras,
    )


def estimate_pfa_global(
    model: ObservationModel,
    prior: Prior,
    policy: ThresholdPolicy,
    horizon: int | None = None,
    n_trials: int = 10_000,
    seed: int = 0,
    workers: int = 1,
    negligible: float | None = NEGLIGIBLE_RATIO,
) -> EstimateSummary:
    """Fraction of no-change trajectories on which tau_A ever stops.

    Binomial standard error.  ``extras['residual_bound']`` bounds the
    probability mass given up by resolving negligible trials early.
    """
    if horizon is None:
        horizon = int(math.ceil(200.0 * policy.log_A / model.kl_number))
    records = run_trials(
        model, prior, policy, ChangePointMode.no_change(), horizon, n_trials, seed, workers, negligible=negligible
    )
    return pfa_summary(records, horizon)


def delay_summaries(records: list[TrialRecord], horizon: int, m_list=(1,)) -> list[EstimateSummary]:
    n = len(records)
    extras = _censoring(records)
    post = [r for r in records if not r.false_alarm]
    effective = [r.delay for r in post if r.delay is not None]
    censored_post = sum(r.censored for r in post)
    if len(effective) < MIN_EFFECTIVE:
        raise EstimateRefused(f"only {len(effective)} trials with tau >= lambda; need {MIN_EFFECTIVE}")
    false_alarms = sum(r.false_alarm for r in records)
    fa = false_alarms / n
    out = [
        EstimateSummary(
            "FalseAlarmRate", fa, math.sqrt(fa * (1 - fa) / n), n, horizon, censored_post, extras=dict(extras)
        )
    ]
    delays = np.asarray(effective, dtype=float)
    # unconditioned (tau - lambda)^+: false alarms count as zero delay
    plus = np.concatenate([delays, np.zeros(false_alarms)])
    for m in m_list:
        name = "ADD" if m == 1 else f"D{m}"
        val, se = mean_and_se(delays**m)
        out.append(
            EstimateSummary(name, val, se, n, horizon, censored_post, param=m, effective_n=len(delays), extras=dict(extras))
        )
        val_u, se_u = mean_and_se(plus**m)
        out.append(
            EstimateSummary(
                f"{name}_unconditional", val_u, se_u, n, horizon, censored_post, param=m, effective_n=len(plus)
            )
        )
    stopped = sum(not r.censored for r in records)
    out.append(EstimateSummary("StopRate", stopped / n, math.sqrt(stopped * (n - stopped) / n**3), n, horizon, n - stopped))
    return out


def estimate_delay_moments(
    model: ObservationModel,
    prior: Prior,
    policy: ThresholdPolicy,
    m_list=(1,),
    horizon: int | None = None,
    n_trials: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> list[EstimateSummary]:
    """D_m = E(tau - lambda)^m given tau >= lambda, with lambda drawn from the prior.

    Averages run over trials without a false alarm; censored post-change
    trials are excluded and counted in ``censored_count``.
    """
    if horizon is None:
        horizon = default_horizon(model, prior, policy)
    records = run_trials(model, prior, policy, ChangePointMode.from_prior(), horizon, n_trials, seed, workers)
    return delay_summaries(records, horizon, m_list)


def estimate_cond_add(
    model: ObservationModel,
    prior: Prior,
    policy: ThresholdPolicy,
    k_list,
    horizon: int | None = None,
    n_trials: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> list[EstimateSummary]:
    """E_k(tau_A - k | tau_A >= k) for each fixed change point k."""
    out = []
    for k in k_list:
        h = horizon if horizon is not None else k + default_horizon(model, None, policy)
        records = run_trials(model, prior, policy, ChangePointMode.fixed(k), h, n_trials, seed, workers)
        delays = [r.delay for r in records if not r.false_alarm and r.delay is not None]
        if len(delays) < MIN_EFFECTIVE:
            raise EstimateRefused(f"k={k}: only {len(delays)} trials with tau >= k")
        val, se = mean_and_se(delays)
        censored = sum(r.censored for r in records)
        out.append(
            EstimateSummary(
                f"CondADD({k})", val, se, len(records), h, censored, param=k, effective_n=len(delays),
                extras={"false_alarms": sum(r.false_alarm for r in records)},
            )
        )
    return out


@dataclass(frozen=True)
class SlopeReport:
    A_grid: tuple[float, ...]
    add: tuple[float, ...]
    add_se: tuple[float, ...]
    slope: float
    slope_se: float
    intercept: float
    target_slope: float
    median_ratio: tuple[float, ...]

    @property
    def relative_deviation(self) -> float:
        return abs(self.slope - self.target_slope) / self.target_slope

    def as_dict(self) -> dict:
        d = asdict(self)
        d["relative_deviation"] = self.relative_deviation
        return d


def slope_study(
    model: ObservationModel,
    prior: Prior,
    A_grid,
    n_trials: int = 5_000,
    seed: int = 0,
    horizon: int | None = None,
    workers: int = 1,
) -> SlopeReport:
    """Least-squares slope of the ADD against log A, compared with 1/q.

    Also reports, per A, the median of (tau - lambda)^+ / log A over trials
    with tau >= lambda (its limit is 1/q as well).
    """
    A_grid = tuple(sorted(float(a) for a in A_grid))
    if len(A_grid) < 3:
        raise ConfigurationError("slope study needs at least 3 thresholds")
    if A_grid[-1] / A_grid[0] < 100 * (1 - 1e-12):
        raise ConfigurationError("slope study thresholds must span at least two decades")
    adds, ses, medians = [], [], []
    for A in A_grid:
        policy = ThresholdPolicy(A)
        h = horizon if horizon is not None else default_horizon(model, prior, policy)
        records = run_trials(model, prior, policy, ChangePointMode.from_prior(), h, n_trials, seed, workers)
        delays = np.asarray([r.delay for r in records if not r.false_alarm and r.delay is not None], dtype=float)
        if len(delays) < MIN_EFFECTIVE:
            raise EstimateRefused(f"A={A}: only {len(delays)} trials with tau >= lambda")
        val, se = mean_and_se(delays)
        adds.append(val)
        ses.append(se)
        medians.append(float(np.median(delays / math.log(A))))
    log_a = np.log(A_grid)
    if min(ses) > 0:
        (slope, intercept), cov = np.polyfit(log_a, adds, 1, w=1.0 / np.asarray(ses), cov="unscaled")
    else:
        # deterministic delays: plain least squares, no sampling error
        slope, intercept = np.polyfit(log_a, adds, 1)
        cov = np.zeros((2, 2))
    return SlopeReport(
        A_grid=A_grid,
        add=tuple(adds),
        add_se=tuple(ses),
        slope=float(slope),
        slope_se=float(math.sqrt(cov[0, 0])),
        intercept=float(intercept),
        target_slope=1.0 / model.kl_number,
        median_ratio=tuple(medians),
    )


def compare_rules(
    model: ObservationModel,
    prior: Prior,
    policy: ThresholdPolicy,
    B: float,
    horizon: int | None = None,
    n_trials: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> list[EstimateSummary]:
    """tau_A and Shiryaev's nu_B on shared trajectories with lambda from the prior."""
    if not 0 < B < 1:
        raise ValueError(f"B must lie in (0, 1), got {B}")
    if horizon is None:
        horizon = default_horizon(model, prior, policy)
    records = run_trials(
        model, prior, policy, ChangePointMode.from_prior(), horizon, n_trials, seed, workers, shiryaev_B=B
    )
    out = []
    for rule, stops in (("tau_A", [r.stop_step for r in records]), ("nu_B", [r.shiryaev_stop for r in records])):
        n = len(records)
        fa = [s is not None and s < r.change_point for s, r in zip(stops, records)]
        delays = [s - int(r.change_point) for s, r, f in zip(stops, records, fa) if s is not None and not f]
        censored = sum(s is None for s in stops)
        p = sum(fa) / n
        out.append(EstimateSummary("FalseAlarmRate", p, math.sqrt(p * (1 - p) / n), n, horizon, censored, param=rule))
        val, se = mean_and_se(delays)
        out.append(EstimateSummary("ADD", val, se, n, horizon, censored, param=rule, effective_n=len(delays)))
    return out
