from __future__ import annotations

import os
import pathlib
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _parse_enum(enum_cls, v):
    if isinstance(v, str):
        key = v.strip().replace("-", "_")
        try:
            return enum_cls[key.upper()]
        except KeyError:
            try:
                return enum_cls(v.strip().lower())
            except ValueError as exc:
                raise ValueError(f"invalid {enum_cls.__name__}: {v}") from exc
    return v


class C0Mode(str, Enum):
    DIFFERENCED = "differenced-partial-sums"
    POINTWISE = "pointwise"


class Regime(str, Enum):
    SE = "se"
    NOISELESS = "noiseless"
    FULL = "full"
    MC = "mc"
    ADDITIVE = "additive"


class CommandName(str, Enum):
    SIMULATE = "simulate"
    STABILITY_MAP = "stability-map"
    ASYMPTOTICS = "asymptotics"
    DIVERGENCE = "divergence"
    PHASE_DIAGRAM = "phase-diagram"
    FIT = "fit"
    SE_ERROR = "se-error"


class SGDParams(BaseModel):
    """Hyperparameters of one SGD run with constant learning rate and momentum."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., gt=0)
    beta: float = 0.0
    gamma: float = Field(0.0, ge=0, le=1)
    tau1: float = 1.0
    tau2: float = 1.0
    steps: int = Field(10_000, ge=1)
    batch: int = Field(1, ge=1)

    @field_validator("beta")
    @classmethod
    def _beta(cls, v: float):
        if not -1.0 < v < 1.0:
            raise ValueError("beta must lie in (-1, 1)")
        return v

    @property
    def alpha_eff(self) -> float:
        return self.alpha / (1.0 - self.beta)


class PowerLawSpec(BaseModel):
    """lambda_k = Lambda k^-nu and partial sums S_k = K k^-kappa, truncated at `modes`."""

    model_config = ConfigDict(frozen=True)

    Lambda: float = Field(1.0, gt=0)
    nu: float = Field(..., gt=0)
    K: float = Field(1.0, gt=0)
    kappa: float = Field(..., gt=0)
    modes: int = Field(1000, ge=2)
    mode: C0Mode = C0Mode.DIFFERENCED

    @field_validator("mode", mode="before")
    @classmethod
    def _mode(cls, v):
        return _parse_enum(C0Mode, v)

    @property
    def zeta(self) -> float:
        return self.kappa / self.nu


class Grid(BaseModel):
    """Inclusive linear grid written as ``lo:hi:n``."""

    lo: float
    hi: float
    n: int = Field(..., ge=1)

    @model_validator(mode="before")
    @classmethod
    def _from_string(cls, v: Any):
        if isinstance(v, str):
            parts = v.split(":")
            if len(parts) != 3:
                raise ValueError(f"grid must look like lo:hi:n, got {v!r}")
            try:
                return {"lo": float(parts[0]), "hi": float(parts[1]), "n": int(parts[2])}
            except ValueError as exc:
                raise ValueError(f"grid must look like lo:hi:n, got {v!r}") from exc
        return v

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    def __str__(self) -> str:
        return f"{self.lo:g}:{self.hi:g}:{self.n}"


def _split_list(v):
    if isinstance(v, str):
        return [x.strip() for x in v.split(",") if x.strip()]
    return v


class ExperimentConfig(BaseModel):
    """Flat experiment description shared by config files and CLI flags."""

    model_config = ConfigDict(extra="forbid")

    command: CommandName
    # problem sources, exactly one (phase-diagram needs none)
    nu: Optional[float] = Field(None, gt=0)
    kappa: Optional[float] = Field(None, gt=0)
    Lambda: float = Field(1.0, gt=0)
    K: float = Field(1.0, gt=0)
    modes: int = Field(1000, ge=2)
    c0_mode: C0Mode = C0Mode.DIFFERENCED
    csv: Optional[str] = None
    tail_start: int = Field(1, ge=1)
    torus: Optional[str] = None
    kernel_width: float = Field(0.5, gt=0)
    features: Optional[str] = None
    feature_decay: float = Field(1.0, ge=0)
    # dynamics
    alpha: float = Field(0.5, gt=0)
    beta: float = 0.0
    batch: int = Field(1, ge=1)
    dataset_size: Optional[int] = Field(None, ge=1)
    tau1: float = 1.0
    tau2: float = 1.0
    steps: int = Field(10_000, ge=1)
    runs: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    regimes: List[Regime] = [Regime.SE]
    batches: Optional[List[int]] = None
    additive_noise: float = Field(0.0, ge=0)
    # sweeps
    grid_alpha: Grid = Grid(lo=0.1, hi=4.0, n=40)
    grid_beta: Grid = Grid(lo=0.0, hi=0.95, n=20)
    grid_nu: Grid = Grid(lo=0.25, hi=3.0, n=12)
    grid_zeta: Grid = Grid(lo=0.1, hi=4.0, n=16)
    # output
    out: str = "sgdphaselab-out"
    plot: bool = False

    @field_validator("command", mode="before")
    @classmethod
    def _command(cls, v):
        return _parse_enum(CommandName, v)

    @field_validator("c0_mode", mode="before")
    @classmethod
    def _c0_mode(cls, v):
        return _parse_enum(C0Mode, v)

    @field_validator("regimes", mode="before")
    @classmethod
    def _regimes(cls, v):
        items = _split_list(v)
        if not items:
            raise ValueError("at least one regime is required")
        return [_parse_enum(Regime, x) for x in items]

    @field_validator("batches", mode="before")
    @classmethod
    def _batches(cls, v):
        items = _split_list(v)
        if items is None:
            return None
        if isinstance(items, int):
            return [items]
        return [int(x) for x in items]

    @field_validator("batches")
    @classmethod
    def _batches_positive(cls, v):
        if v is not None and (not v or min(v) < 1):
            raise ValueError("batches must be positive integers")
        return v

    @field_validator("beta")
    @classmethod
    def _beta(cls, v: float):
        if not -1.0 < v < 1.0:
            raise ValueError("beta must lie in (-1, 1)")
        return v

    @field_validator("torus")
    @classmethod
    def _torus(cls, v):
        if v is not None:
            try:
                sizes = [int(x) for x in str(v).split(",")]
            except ValueError as exc:
                raise ValueError(f"torus must be comma-separated grid sizes, got {v!r}") from exc
            if not sizes or min(sizes) < 1:
                raise ValueError("torus grid sizes must be positive")
        return v

    @field_validator("features")
    @classmethod
    def _features(cls, v):
        if v is not None:
            parts = str(v).split(",")
            if len(parts) != 2 or not all(p.strip().isdigit() and int(p) > 0 for p in parts):
                raise ValueError(f"features must look like d,N, got {v!r}")
        return v

    @model_validator(mode="after")
    def _one_source(self):
        if (self.nu is None) != (self.kappa is None):
            raise ValueError("power-law source needs both nu and kappa")
        sources = self.sources()
        if len(sources) > 1:
            raise ValueError(f"conflicting problem sources: {', '.join(sources)}")
        if not sources and self.command != CommandName.PHASE_DIAGRAM:
            raise ValueError("no problem source: give nu/kappa, csv, torus or features")
        return self

    def sources(self) -> List[str]:
        found = []
        if self.nu is not None or self.kappa is not None:
            found.append("power-law")
        if self.csv is not None:
            found.append("csv")
        if self.torus is not None:
            found.append("torus")
        if self.features is not None:
            found.append("features")
        return found

    def torus_grid(self) -> tuple[int, ...]:
        return tuple(int(x) for x in str(self.torus).split(","))

    def feature_shape(self) -> tuple[int, int]:
        d, n = (int(x) for x in str(self.features).split(","))
        return d, n

    def power_law(self) -> PowerLawSpec:
        return PowerLawSpec(
            Lambda=self.Lambda, nu=self.nu, K=self.K, kappa=self.kappa,
            modes=self.modes, mode=self.c0_mode,
        )


def load_config(path: str | pathlib.Path | None = None,
                overrides: Dict[str, Any] | None = None) -> ExperimentConfig:
    """Read a flat YAML config file and apply flag overrides on top."""
    data: Dict[str, Any] = {}
    if path is not None:
        loaded = yaml.safe_load(pathlib.Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {path} must be a flat key-value mapping")
        for key, value in loaded.items():
            if isinstance(value, dict):
                raise ValueError(f"config key {key!r} must not be nested")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return ExperimentConfig.model_validate(data)


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: explicit request, else SGDPHASELAB_THREADS, else CPU count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("SGDPHASELAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1
