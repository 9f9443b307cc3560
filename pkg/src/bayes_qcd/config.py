"""Run configuration: one JSON document validated at load time."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .detect import Calibration
from .models import make_model
from .models.base import ObservationModel
from .prior import Prior, make_prior


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class RunConfig(BaseModel):
    """Everything one CLI invocation needs.

    ``model`` and ``prior`` are the JSON descriptions accepted by
    ``make_model`` and ``make_prior``.  Exactly one of ``alpha`` (target
    global PFA) and ``A`` (explicit threshold) must be given.
    """

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    model: dict[str, Any]
    prior: dict[str, Any]
    alpha: float | None = Field(None, gt=0, lt=1)
    A: float | None = Field(None, gt=1)
    calibration: Calibration = Calibration.CONSERVATIVE
    zeta: float | None = Field(None, gt=0, le=1)
    campaign: Literal["pfa", "add", "cond_add", "slope"] = "add"
    horizon: int | None = Field(None, ge=1)
    n_trials: int = Field(10_000, ge=1)
    seed: int = Field(0, ge=0)
    m_list: list[int] = Field(default_factory=lambda: [1])
    k_list: list[int] = Field(default_factory=lambda: [1])
    A_grid: list[float] = Field(default_factory=lambda: [100.0, 1000.0, 10000.0])
    shiryaev_B: float | None = Field(None, gt=0, lt=1)
    change_point: Union[int, Literal["prior", "none"]] = 1
    overshoot_b: float | None = Field(None, gt=0)
    overshoot_trials: int = Field(10_000, ge=100)

    @field_validator("model")
    @classmethod
    def _check_model(cls, v):
        _build(make_model, v, "model")
        return v

    @field_validator("prior")
    @classmethod
    def _check_prior(cls, v):
        _build(make_prior, v, "prior")
        return v

    @field_validator("m_list", "k_list")
    @classmethod
    def _positive_ints(cls, v):
        if not v or any(i < 1 for i in v):
            raise ValueError("must be a nonempty list of integers >= 1")
        return v

    @field_validator("A_grid")
    @classmethod
    def _thresholds(cls, v):
        if not v or any(not a > 1 for a in v):
            raise ValueError("thresholds must all exceed 1")
        return v

    @field_validator("change_point")
    @classmethod
    def _change_point(cls, v):
        if isinstance(v, int) and v < 1:
            raise ValueError("change point must be >= 1, 'prior' or 'none'")
        return v

    @model_validator(mode="after")
    def _one_threshold(self):
        if (self.alpha is None) == (self.A is None):
            raise ValueError("alpha/A: provide exactly one of 'alpha' and 'A'")
        if self.A is not None and self.calibration is Calibration.OVERSHOOT_CORRECTED:
            raise ValueError("calibration: an explicit 'A' needs no calibration; use 'conservative' or give 'alpha'")
        return self

    def build_model(self) -> ObservationModel:
        return make_model(self.model)

    def build_prior(self) -> Prior:
        return make_prior(self.prior)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _build(factory, spec, key):
    try:
        factory(spec)
    except KeyError as exc:
        raise ValueError(f"missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError, OSError) as exc:
        raise ValueError(str(exc)) from None


def _format(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "config"
        msg = e["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def parse_config(data: dict, **overrides) -> RunConfig:
    """Validate a config mapping; ``overrides`` with value None are ignored."""
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as err:
        raise ConfigError(_format(err)) from None


def load_config(path: str | Path, **overrides) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    return parse_config(data, **overrides)
