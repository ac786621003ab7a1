from __future__ import annotations

import datetime as _dt
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Protocol

import numpy as np
from pydantic import ValidationError

from ..config import ExperimentConfig, SGDParams
from ..errors import DomainError, InputError, NumericalError, SpectrumError
from ..report import build_manifest, write_manifest
from ..spectrum import (
    FeatureProblem,
    PowerLawFit,
    Spectrum,
    build_power_law,
    build_torus_problem,
    eigendecompose,
    fit_power_law,
    gamma_for_batch,
    load_spectrum_csv,
    random_feature_problem,
    tail_estimate,
    torus_kernel,
)
from ..util import Artifacts

logger = logging.getLogger(__name__)


class Runner(Protocol):
    """Callable protocol for command implementations."""

    def __call__(self, cfg: ExperimentConfig, out: Artifacts) -> Dict[str, Any]:
        """Write the command's files into ``out`` and return a short summary."""
        ...


registry: Dict[str, Runner] = {}


def register(name: str) -> Callable[[Runner], Runner]:
    """Decorator to register command implementations."""

    def decorator(func: Runner) -> Runner:
        registry[name] = func
        return func

    return decorator


@dataclass
class ProblemBundle:
    spectrum: Spectrum
    problem: Optional[FeatureProblem] = None
    fit: Optional[PowerLawFit] = None
    tail: Dict[str, float] = field(default_factory=dict)

    def require_problem(self, what: str) -> FeatureProblem:
        if self.problem is None:
            raise InputError(f"{what} needs a feature-level source (--torus or --features)")
        return self.problem

    def require_fit(self, what: str) -> PowerLawFit:
        if self.fit is None:
            raise InputError(f"{what} needs power-law exponents; the spectrum could not be fitted")
        return self.fit


def _try_fit(spectrum: Spectrum, tail_start: int) -> Optional[PowerLawFit]:
    try:
        return fit_power_law(spectrum, tail_start)
    except SpectrumError as exc:
        logger.warning("no power-law fit: %s", exc)
        return None


def load_problem(cfg: ExperimentConfig) -> ProblemBundle:
    """Build the spectrum (and feature problem, when there is one) named by the config."""
    source = cfg.sources()[0] if cfg.sources() else None
    if source == "power-law":
        spectrum = build_power_law(cfg.power_law())
        if cfg.dataset_size is not None:
            spectrum = Spectrum(spectrum.lambdas, spectrum.c0, cfg.dataset_size, spectrum.source)
        fit = PowerLawFit.from_spec(cfg.power_law())
        bundle = ProblemBundle(spectrum, fit=fit)
    elif source == "csv":
        spectrum = load_spectrum_csv(cfg.csv, cfg.dataset_size)
        bundle = ProblemBundle(spectrum, fit=_try_fit(spectrum, cfg.tail_start))
    elif source == "torus":
        grid = cfg.torus_grid()
        torus = build_torus_problem(grid, torus_kernel(grid, cfg.kernel_width))
        spectrum = eigendecompose(torus.problem)[0]
        bundle = ProblemBundle(spectrum, torus.problem, _try_fit(spectrum, cfg.tail_start))
    elif source == "features":
        d, n = cfg.feature_shape()
        problem = random_feature_problem(d, n, cfg.seed, cfg.feature_decay)
        spectrum = eigendecompose(problem)[0]
        bundle = ProblemBundle(spectrum, problem, _try_fit(spectrum, cfg.tail_start))
    else:
        raise InputError("no problem source configured")
    if bundle.fit is not None:
        bundle.tail = tail_estimate(bundle.fit, spectrum.size)
        logger.info("truncation tail estimate at M=%d: %s", spectrum.size, bundle.tail)
    return bundle


def dataset_size(cfg: ExperimentConfig, bundle: ProblemBundle) -> Optional[int]:
    if bundle.problem is not None:
        return bundle.problem.size
    return cfg.dataset_size if cfg.dataset_size is not None else bundle.spectrum.dataset_size


def sgd_params(cfg: ExperimentConfig, bundle: ProblemBundle, batch: Optional[int] = None,
               alpha: Optional[float] = None, beta: Optional[float] = None) -> SGDParams:
    b = cfg.batch if batch is None else batch
    return SGDParams(
        alpha=cfg.alpha if alpha is None else alpha,
        beta=cfg.beta if beta is None else beta,
        gamma=gamma_for_batch(dataset_size(cfg, bundle), b),
        tau1=cfg.tau1, tau2=cfg.tau2, steps=cfg.steps, batch=b,
    )


def run_command(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Execute one configured command; on failure every file it wrote is removed."""
    runner = registry.get(cfg.command.value)
    if runner is None:
        raise InputError(f"unknown command: {cfg.command.value}")
    out = Artifacts(cfg.out)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    clock = time.perf_counter()
    try:
        summary = runner(cfg, out)
        manifest = build_manifest(
            out, cfg.command.value, cfg.model_dump(mode="json"), cfg.seed, started,
            time.perf_counter() - clock,
        )
        summary["manifest"] = str(write_manifest(out, manifest))
    except (InputError, DomainError, ValidationError):
        out.rollback()
        raise
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        # numpy/scipy failures (LinAlgError, overflow, math domain) on validated inputs
        out.rollback()
        raise NumericalError(f"{cfg.command.value}: {type(exc).__name__}: {exc}") from exc
    except BaseException:
        out.rollback()
        raise
    summary["files"] = [str(p) for p in out.paths]
    return summary
