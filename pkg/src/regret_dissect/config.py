"""JSON run configuration: schema, validation and instance construction."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core_model import ParamFamily, TrueDistribution
from .decision_oracle import CostModel
from .errors import ConfigError

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GaussianLocationSpec(_Strict):
    kind: Literal["gaussian-location"]
    cov: list[list[float]]
    theta_low: float = -10.0
    theta_high: float = 10.0


class GaussianFullMeanSpec(_Strict):
    kind: Literal["gaussian-full-mean"]
    dim: int = Field(ge=1)
    mean_low: float = -10.0
    mean_high: float = 10.0
    var_low: float = 1e-3
    var_high: float = 100.0


class FiniteDiscreteSpec(_Strict):
    kind: Literal["finite-discrete"]
    support: list[list[float]]


FamilySpec = Annotated[Union[GaussianLocationSpec, GaussianFullMeanSpec, FiniteDiscreteSpec], Field(discriminator="kind")]


class InFamilyTruth(_Strict):
    kind: Literal["in-family"]
    theta: list[float]


class MixtureTruth(_Strict):
    kind: Literal["gaussian-mixture"]
    weights: list[float]
    means: list[list[float]]
    cov: list[list[float]]


class EmpiricalTruth(_Strict):
    kind: Literal["empirical"]
    samples: list[list[float]] = Field(min_length=1)


TruthSpec = Annotated[Union[InFamilyTruth, MixtureTruth, EmpiricalTruth], Field(discriminator="kind")]


class NewsvendorSpec(_Strict):
    kind: Literal["newsvendor"]
    h: list[float]
    b: list[float]
    smoothing: float = Field(default=0.0, ge=0.0)


class PortfolioSpec(_Strict):
    kind: Literal["portfolio"]
    gamma: float = Field(gt=0.0)
    p: int = Field(default=1, ge=1)


CostSpec = Annotated[Union[NewsvendorSpec, PortfolioSpec], Field(discriminator="kind")]


class ExperimentSpec(_Strict):
    n_list: list[int] = [250, 1000, 4000]
    replications: int = Field(default=2000, ge=100)
    base_seed: int = Field(default=20240917, ge=0)
    t_grid: list[float] | None = None
    t_points: int = Field(default=101, ge=2)
    n_starts: int = Field(default=5, ge=1)

    @field_validator("n_list")
    @classmethod
    def _increasing_n(cls, v):
        if not v or any(n < 1 for n in v) or any(a >= b for a, b in zip(v, v[1:])):
            raise ValueError("n_list must be a nonempty strictly increasing list of positive integers")
        return v

    @field_validator("t_grid")
    @classmethod
    def _increasing_t(cls, v):
        if v is not None and (len(v) < 1 or any(a >= b for a, b in zip(v, v[1:]))):
            raise ValueError("t_grid must be strictly increasing")
        return v


class GeneralizationSpec(_Strict):
    L_c: float = Field(gt=0.0)
    rho_c: float = Field(gt=0.0)
    B_c: float = Field(gt=0.0)
    D_theta: float = Field(gt=0.0)
    E_theta: float = Field(gt=0.0)
    C_abs: float = Field(gt=0.0)
    confidence: float = Field(gt=0.0, lt=1.0)


class BoundsSpec(_Strict):
    delta_factor: float = Field(default=10.0, gt=0.0)
    zero_tol: float = Field(default=1e-6, ge=0.0)
    error_budget: float = 0.0
    epsilon: float | None = None
    generalization: GeneralizationSpec | None = None


class RunConfig(_Strict):
    schema_version: Literal[1]
    name: str = "instance"
    family: FamilySpec
    truth: TruthSpec
    cost_model: CostSpec
    experiment: ExperimentSpec = ExperimentSpec()
    bounds: BoundsSpec = BoundsSpec()

    @model_validator(mode="after")
    def _dimensions(self):
        inst = build_instance(self)
        if inst.truth.dim != inst.family.dim_d or inst.model.dim_p != inst.family.dim_d:
            raise ValueError("family, truth and cost_model dimensions disagree")
        return self


@dataclass(frozen=True, eq=False)
class Instance:
    name: str
    family: ParamFamily
    truth: TrueDistribution
    model: CostModel


def build_instance(cfg: RunConfig) -> Instance:
    f = cfg.family
    if isinstance(f, GaussianLocationSpec):
        family = ParamFamily.gaussian_location(np.asarray(f.cov), f.theta_low, f.theta_high)
    elif isinstance(f, GaussianFullMeanSpec):
        family = ParamFamily.gaussian_full_mean(f.dim, f.mean_low, f.mean_high, f.var_low, f.var_high)
    else:
        family = ParamFamily.finite_discrete(np.asarray(f.support))
    t = cfg.truth
    if isinstance(t, InFamilyTruth):
        truth = TrueDistribution.in_family(family, np.asarray(t.theta))
    elif isinstance(t, MixtureTruth):
        truth = TrueDistribution.gaussian_mixture(t.weights, t.means, t.cov)
    else:
        truth = TrueDistribution.empirical(np.asarray(t.samples))
    c = cfg.cost_model
    if isinstance(c, NewsvendorSpec):
        model = CostModel.newsvendor(c.h, c.b, c.smoothing)
    else:
        model = CostModel.portfolio(c.gamma, c.p)
    return Instance(cfg.name, family, truth, model)


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from exc
    except ValueError as exc:  # invalid numbers rejected by the domain constructors
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data)


def config_hash(cfg: RunConfig) -> str:
    """Content hash of the canonical JSON form."""
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
