"""Observation models and their log-likelihood ratios."""

from __future__ import annotations

from typing import Mapping

from .autoregressive import ArModel, ar_whiten
from .base import (
    NO_CHANGE,
    Capability,
    CapabilityError,
    DensityError,
    LlrSource,
    ObservationModel,
    PathSampler,
    export_trajectory_csv,
)
from .drift import DeterministicDrift
from .exponential import ExpModel, exp_kl, exp_llr_increment
from .mixture import Density, MixtureModel, kl_divergence, mixture_llr
from .state_space import (
    FilterState,
    StateSpaceModel,
    initial_filter_state,
    kalman_step,
    state_space_llr,
)

import numpy as np

__all__ = [
    "NO_CHANGE",
    "ArModel",
    "Capability",
    "CapabilityError",
    "Density",
    "DensityError",
    "DeterministicDrift",
    "ExpModel",
    "FilterState",
    "LlrSource",
    "MixtureModel",
    "ObservationModel",
    "PathSampler",
    "StateSpaceModel",
    "ar_whiten",
    "exp_kl",
    "exp_llr_increment",
    "export_trajectory_csv",
    "initial_filter_state",
    "kalman_step",
    "kl_divergence",
    "make_model",
    "mixture_llr",
    "sample_trajectory",
    "state_space_llr",
]


def sample_trajectory(model: ObservationModel, change_point: float, n_max: int, seed: int) -> np.ndarray:
    """X_1..X_{n_max} under P_k (or P_inf for change_point = inf), reproducible from seed."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    return model.sample(change_point, n_max, np.random.default_rng(seed))


def _density(spec: Mapping) -> Density:
    family = spec["family"]
    if family == "gaussian":
        return Density.gaussian(spec["mean"], spec["sd"])
    if family == "exponential":
        return Density.exponential(spec["rate"])
    raise ValueError(f"unknown density family {family!r}")


def make_model(spec: Mapping) -> ObservationModel:
    """Build a model from its JSON description (the inverse of ``describe``)."""
    kind = spec["kind"]
    if kind == "exponential":
        return ExpModel(float(spec["Q"]))
    if kind == "ar":
        return ArModel(float(spec["theta"]), float(spec["sigma"]), tuple(spec["deltas"]))
    if kind == "state_space":
        return StateSpaceModel(spec["F"], spec["K_W"], spec["K_V"], spec["nu_theta"], spec["nu_x"])
    if kind == "mixture":
        return MixtureModel(float(spec["beta"]), _density(spec["g1"]), _density(spec["g2"]), _density(spec["f1"]))
    if kind == "drift":
        return DeterministicDrift(float(spec["q"]))
    raise ValueError(f"unknown model kind {kind!r}")
