"""Log-domain helpers shared by the detector and the campaign engine."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp as _logsumexp

NEG_INF = -math.inf


def logsumexp_columns(terms: np.ndarray) -> np.ndarray:
    """Column-wise log(sum(exp(terms))); all -inf columns give -inf."""
    return _logsumexp(terms, axis=0)


def logsumexp(values: np.ndarray) -> float:
    return float(_logsumexp(np.asarray(values, dtype=float)))


def log_sub(log_a: float, log_b: float) -> float:
    """log(exp(log_a) - exp(log_b)) for log_a >= log_b."""
    if log_b == NEG_INF:
        return log_a
    if log_b > log_a:
        raise ValueError("log_sub requires log_a >= log_b")
    if log_b == log_a:
        return NEG_INF
    return log_a + math.log1p(-math.exp(log_b - log_a))


def fsum_mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else math.nan


def mean_and_se(values) -> tuple[float, float]:
    """Compensated mean and standard error of the mean (normal approximation)."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    if n == 1:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)
