"""Command-line front end.

Subcommands: calibrate, simulate, trace, approx, compare.  Every command
reads one JSON config, writes CSV/JSON files into ``--out`` and prints the
JSON summary.  Exit codes: 0 success, 2 configuration error, 3 refused
estimate.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .detect import Calibration, GStatistic, ThresholdPolicy, posterior_from_logs, posterior_threshold
from .models.base import NO_CHANGE, format_observation
from .renewal import (
    EstimateRefused,
    Order,
    add_approx,
    calibrate_threshold,
    estimate_overshoot,
    pfa_corrected,
)
from .seeding import trial_rng
from .simulate import (
    ChangePointMode,
    ConfigurationError,
    EstimateSummary,
    _draw_change_point,
    compare_rules,
    default_horizon,
    estimate_cond_add,
    estimate_delay_moments,
    estimate_pfa_global,
    run_trial,
    slope_study,
)

log = logging.getLogger("bayes_qcd")

EXIT_OK, EXIT_CONFIG, EXIT_REFUSED = 0, 2, 3


class _Run:
    """One invocation: config, overshoot/threshold resolution and output files."""

    def __init__(self, config: RunConfig, out: Path, workers: int):
        self.config = config
        self.out = out
        self.workers = workers
        self.model = config.build_model()
        self.prior = config.build_prior()
        self._overshoot = None

    def provenance(self) -> dict:
        return {
            "bayes_qcd": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "config_sha256": self.config.config_hash(),
            "seed": self.config.seed,
        }

    def overshoot(self) -> dict:
        """zeta and kappa_bar: Monte Carlo estimate at level overshoot_b."""
        if self._overshoot is None:
            est = estimate_overshoot(
                self.model, self.config.overshoot_b, self.config.overshoot_trials, self.config.seed, self.workers
            )
            self._overshoot = est.as_dict()
        return self._overshoot

    def policy(self) -> ThresholdPolicy:
        c = self.config
        if c.A is not None:
            return ThresholdPolicy(c.A)
        zeta = None
        if c.calibration is Calibration.OVERSHOOT_CORRECTED:
            zeta = c.zeta if c.zeta is not None else self.overshoot()["zeta_hat"]
        return calibrate_threshold(c.alpha, c.calibration, zeta)

    def change_point_mode(self) -> ChangePointMode:
        cp = self.config.change_point
        if cp == "prior":
            return ChangePointMode.from_prior()
        if cp == "none":
            return ChangePointMode.no_change()
        return ChangePointMode.fixed(cp)

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> Path:
        buf = io.StringIO()
        for key, value in self.provenance().items():
            buf.write(f"# {key}: {value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        path = self.out / name
        path.write_text(buf.getvalue())
        return path

    def write_json(self, name: str, payload: dict) -> str:
        doc = {"provenance": self.provenance(), "config": json.loads(self.config.canonical_json()), **payload}
        text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"
        (self.out / name).write_text(text)
        return text


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


SUMMARY_HEADER = ["metric", "param", "value", "stderr", "n_trials", "effective_n", "horizon", "censored_count"]


def _summary_rows(summaries: list[EstimateSummary]) -> list[list[str]]:
    return [
        [s.metric, _fmt(s.param), _fmt(s.value), _fmt(s.stderr), s.n_trials, _fmt(s.effective_n), s.horizon, s.censored_count]
        for s in summaries
    ]


# --- subcommands -----------------------------------------------------------


def cmd_calibrate(run: _Run, args) -> dict:
    c = run.config
    policy = run.policy()
    result = {"alpha": c.alpha, "calibration": policy.calibration.value, "A": policy.A}
    if c.calibration is Calibration.OVERSHOOT_CORRECTED or args.overshoot:
        result["overshoot"] = run.overshoot()
    if c.zeta is not None:
        result["zeta_given"] = c.zeta
    run.write_json("calibrate.json", {"result": result})
    return result


def cmd_simulate(run: _Run, args) -> dict:
    c = run.config
    policy = run.policy()
    common = dict(n_trials=c.n_trials, seed=c.seed, workers=run.workers)
    extra: dict = {}
    if c.campaign == "pfa":
        summaries = [estimate_pfa_global(run.model, run.prior, policy, c.horizon, **common)]
    elif c.campaign == "add":
        summaries = estimate_delay_moments(run.model, run.prior, policy, tuple(c.m_list), c.horizon, **common)
    elif c.campaign == "cond_add":
        summaries = estimate_cond_add(run.model, run.prior, policy, c.k_list, c.horizon, **common)
    else:
        report = slope_study(run.model, run.prior, c.A_grid, horizon=c.horizon, **common)
        extra["slope"] = report.as_dict()
        summaries = [
            EstimateSummary("ADD", a, se, c.n_trials, c.horizon or 0, 0, param=A)
            for A, a, se in zip(report.A_grid, report.add, report.add_se)
        ]
        summaries.append(EstimateSummary("Slope", report.slope, report.slope_se, c.n_trials, c.horizon or 0, 0))
    run.write_csv("simulate.csv", SUMMARY_HEADER, _summary_rows(summaries))
    result = {
        "campaign": c.campaign,
        "A": policy.A,
        "summaries": [s.as_dict() for s in summaries],
        **extra,
    }
    run.write_json("simulate.json", {"result": result})
    return result


def trace_trajectory(run: _Run, policy: ThresholdPolicy, horizon: int):
    """Replay trial 0 of a run_trial campaign step by step up to the stop."""
    c = run.config
    mode = run.change_point_mode()
    rng = trial_rng(c.seed, 0, run.model.fingerprint())
    change_point, _ = _draw_change_point(mode, run.prior, horizon, rng)
    sampler = run.model.path(change_point, rng)
    stat = GStatistic(run.model, run.prior)
    xs, log_gs, log_tails = [], [], []
    window = 64
    while stat.n < horizon:
        n_hi = min(horizon, stat.n + window)
        x_new = sampler.draw(n_hi - stat.n)
        xs.append(x_new)
        _, lg, lt = stat.advance(np.concatenate(xs), n_hi)
        log_gs.append(lg)
        log_tails.append(lt)
        if np.any(lg >= policy.log_A):
            break
        window *= 2
    x = np.concatenate(xs)
    log_g = np.concatenate(log_gs)
    log_tail = np.concatenate(log_tails)
    hits = np.flatnonzero(log_g >= policy.log_A)
    stop = int(hits[0]) + 1 if hits.size else None
    end = stop if stop is not None else len(log_g)
    return change_point, x[:end], log_g[:end], log_tail[:end], stop


def cmd_trace(run: _Run, args) -> dict:
    c = run.config
    policy = run.policy()
    horizon = c.horizon or default_horizon(run.model, run.prior, policy)
    change_point, x, log_g, log_tail, stop = trace_trajectory(run, policy, horizon)
    post = posterior_from_logs(log_g, log_tail)
    thresh = posterior_threshold(log_tail, policy.A)
    rows = []
    for i in range(len(log_g)):
        n = i + 1
        rows.append(
            [
                n,
                format_observation(x[i]),
                repr(math.exp(log_g[i])) if log_g[i] < 709 else "inf",
                repr(float(log_g[i])),
                repr(float(post[i])),
                repr(float(thresh[i])),
                int(stop == n),
            ]
        )
    header = ["n", "X_n", "G_n", "log_G_n", "posterior", "posterior_threshold", "stopped"]
    run.write_csv("trace.csv", header, rows)
    result = {
        "A": policy.A,
        "change_point": None if change_point == NO_CHANGE else int(change_point),
        "stop_step": stop,
        "steps": len(rows),
        "horizon": horizon,
    }
    run.write_json("trace.json", {"result": result})
    return result


def cmd_approx(run: _Run, args) -> dict:
    c = run.config
    I = run.model.kl_number
    C_pi = run.prior.entropy_constant()
    exact = run.model.overshoot_constants()
    if exact is not None:
        zeta, kappa_bar, source = exact[0], exact[1], "exact"
    else:
        est = run.overshoot()
        zeta, kappa_bar, source = est["zeta_hat"], est["kappa_bar_hat"], "monte_carlo"
    rows = []
    for A in sorted(c.A_grid):
        rows.append(
            [
                repr(float(A)),
                repr(add_approx(A, I, C_pi, kappa_bar, Order.FIRST_ORDER)),
                repr(add_approx(A, I, C_pi, kappa_bar, Order.HIGHER_ORDER)),
                repr(add_approx(A, I, C_pi, kappa_bar, Order.NO_KAPPA_NO_MINUS_ONE)),
                repr(pfa_corrected(A, zeta)),
            ]
        )
    run.write_csv("approx.csv", ["A", "fo_add", "ho_add", "no_kappa_add", "pfa_corrected"], rows)
    result = {"I": I, "C_pi": C_pi, "zeta": zeta, "kappa_bar": kappa_bar, "overshoot_source": source, "rows": len(rows)}
    run.write_json("approx.json", {"result": result})
    return result


def cmd_compare(run: _Run, args) -> dict:
    c = run.config
    if c.shiryaev_B is None:
        raise ConfigError("shiryaev_B: required by the compare command")
    policy = run.policy()
    summaries = compare_rules(run.model, run.prior, policy, c.shiryaev_B, c.horizon, c.n_trials, c.seed, run.workers)
    run.write_csv("compare.csv", SUMMARY_HEADER, _summary_rows(summaries))
    result = {"A": policy.A, "B": c.shiryaev_B, "summaries": [s.as_dict() for s in summaries]}
    run.write_json("compare.json", {"result": result})
    return result


COMMANDS = {
    "calibrate": (cmd_calibrate, "threshold A for a target PFA, with the overshoot report"),
    "simulate": (cmd_simulate, "Monte Carlo campaign (pfa, add, cond_add or slope)"),
    "trace": (cmd_trace, "step-by-step G_n and posterior of one trajectory"),
    "approx": (cmd_approx, "closed-form ADD and PFA approximations over A_grid"),
    "compare": (cmd_compare, "tau_A against Shiryaev's rule on shared trajectories"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayes-qcd", description="Bayesian change-point detection under a global PFA constraint")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for trials")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "trace":
            p.add_argument("--k", dest="change_point", help="change point: integer, 'prior' or 'none'")
        if name == "calibrate":
            p.add_argument("--overshoot", action="store_true", help="report the overshoot estimate in any mode")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    fn = COMMANDS[args.command][0]
    overrides = {"seed": args.seed}
    change_point = getattr(args, "change_point", None)
    if change_point is not None:
        overrides["change_point"] = int(change_point) if change_point.lstrip("-").isdigit() else change_point
    try:
        config = load_config(args.config, **overrides)
        args.out.mkdir(parents=True, exist_ok=True)
        run = _Run(config, args.out, args.threads)
        result = fn(run, args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimateRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    print(json.dumps(result, indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
