"""Spectral descriptions of quadratic problems.

Every simulator and analytic routine consumes a :class:`Spectrum`, the
eigenvalues ``lambda_k`` of the Hessian together with the diagonal initial
second moments ``C_kk,0`` in its eigenbasis. Feature-level problems
(:class:`FeatureProblem`) are reduced to a spectrum by :func:`eigendecompose`.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import C0Mode, PowerLawSpec
from .errors import InputError, SpectrumError

logger = logging.getLogger(__name__)

RANK_EPS = 1e-12
CSV_HEADER = ("k", "lambda", "lambda_c")


@dataclass(frozen=True)
class Spectrum:
    """Truncated eigenvalues and initial diagonal moments of one problem.

    ``dataset_size`` is ``None`` for an infinite dataset. ``source`` records
    how the spectrum was produced (including the C_kk,0 convention) and is
    echoed in output metadata.
    """

    lambdas: np.ndarray
    c0: np.ndarray
    dataset_size: Optional[int] = None
    source: str = "custom"

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float).reshape(-1)
        c0 = np.array(self.c0, dtype=float).reshape(-1)
        if lam.size == 0:
            raise SpectrumError("spectrum is empty")
        if c0.shape != lam.shape:
            raise SpectrumError(f"c0 has {c0.size} entries but there are {lam.size} eigenvalues")
        if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(c0)):
            raise SpectrumError("spectrum entries must be finite")
        if np.any(lam <= 0):
            k = int(np.argmax(lam <= 0)) + 1
            raise SpectrumError(f"eigenvalue {k} is not positive: {lam[k - 1]!r}")
        if np.any(np.diff(lam) > 0):
            raise SpectrumError("eigenvalues must be sorted non-increasing")
        if np.any(c0 < 0):
            k = int(np.argmax(c0 < 0)) + 1
            raise SpectrumError(f"initial moment {k} is negative: {c0[k - 1]!r}")
        if self.dataset_size is not None and self.dataset_size < 1:
            raise SpectrumError("dataset_size must be positive or None")
        lam.setflags(write=False)
        c0.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "c0", c0)

    @classmethod
    def from_unsorted(cls, lambdas, c0, dataset_size: Optional[int] = None,
                      source: str = "custom") -> "Spectrum":
        lam = np.asarray(lambdas, dtype=float)
        order = np.argsort(-lam, kind="stable")
        return cls(lam[order], np.asarray(c0, dtype=float)[order], dataset_size, source)

    @property
    def size(self) -> int:
        return int(self.lambdas.size)

    @property
    def lambda_max(self) -> float:
        return float(self.lambdas[0])

    def trace(self) -> float:
        return float(np.sum(self.lambdas))

    def weights(self) -> np.ndarray:
        """lambda_k C_kk,0, the output-space initial moments."""
        return self.lambdas * self.c0

    def weighted_trace(self) -> float:
        return float(np.sum(self.weights()))

    def initial_loss(self) -> float:
        return 0.5 * self.weighted_trace()

    def tail_sums(self) -> np.ndarray:
        """S_k = sum_{l >= k} lambda_l C_ll,0, accumulated from the tail."""
        return np.cumsum(self.weights()[::-1])[::-1]

    def with_c0(self, c0) -> "Spectrum":
        return Spectrum(self.lambdas, c0, self.dataset_size, self.source)


class PowerLawFit(BaseModel):
    """Power-law exponents and scales of a spectrum tail."""

    model_config = ConfigDict(frozen=True)

    Lambda: float = Field(..., gt=0)
    nu: float = Field(..., gt=0)
    K: float = Field(..., gt=0)
    kappa: float = Field(..., gt=0)
    tail_start: int = Field(1, ge=1)
    residual: float = Field(0.0, ge=0)

    @property
    def zeta(self) -> float:
        return self.kappa / self.nu

    @classmethod
    def from_spec(cls, spec: PowerLawSpec) -> "PowerLawFit":
        return cls(Lambda=spec.Lambda, nu=spec.nu, K=spec.K, kappa=spec.kappa)

    def as_dict(self) -> dict:
        return {**self.model_dump(), "zeta": self.zeta}


@dataclass(frozen=True)
class FeatureProblem:
    """Explicit least-squares problem: feature columns, optimum and start point."""

    features: np.ndarray
    w_star: np.ndarray
    w0: np.ndarray
    hessian: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        psi = np.array(self.features, dtype=float)
        if psi.ndim != 2 or min(psi.shape) < 1:
            raise InputError("features must be a non-empty d x N matrix")
        d = psi.shape[0]
        w_star = np.array(self.w_star, dtype=float).reshape(-1)
        w0 = np.array(self.w0, dtype=float).reshape(-1)
        if w_star.size != d or w0.size != d:
            raise InputError(f"w_star and w0 must have dimension {d}")
        hessian = psi @ psi.T / psi.shape[1]
        hessian = 0.5 * (hessian + hessian.T)
        for arr in (psi, w_star, w0, hessian):
            arr.setflags(write=False)
        object.__setattr__(self, "features", psi)
        object.__setattr__(self, "w_star", w_star)
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "hessian", hessian)

    @property
    def dim(self) -> int:
        return int(self.features.shape[0])

    @property
    def size(self) -> int:
        return int(self.features.shape[1])

    @property
    def deviation(self) -> np.ndarray:
        return self.w0 - self.w_star


@dataclass(frozen=True)
class TorusProblem:
    """Translation-invariant kernel problem on a regular torus grid."""

    grid: tuple
    problem: FeatureProblem
    eigenvalues: np.ndarray  # DFT eigenvalues, grid order
    kernel_matrix: np.ndarray


def gamma_for_batch(dataset_size: Optional[int], batch: int) -> float:
    """Sampling-noise amplitude for batches drawn without replacement."""
    if batch < 1:
        raise InputError(f"batch size must be at least 1, got {batch}")
    if dataset_size is None or (isinstance(dataset_size, float) and math.isinf(dataset_size)):
        return 1.0 / batch
    n = int(dataset_size)
    if batch > n:
        raise InputError(f"batch size {batch} exceeds dataset size {n}")
    if n == 1:
        return 0.0
    return (n - batch) / ((n - 1) * batch)


def build_power_law(spec: PowerLawSpec) -> Spectrum:
    k = np.arange(1, spec.modes + 1, dtype=float)
    lambdas = spec.Lambda * k ** (-spec.nu)
    if spec.mode == C0Mode.DIFFERENCED:
        s = spec.K * k ** (-spec.kappa)
        weights = s - np.append(s[1:], 0.0)
    else:
        weights = spec.K * spec.kappa * k ** (-spec.kappa - 1.0)
    return Spectrum(lambdas, weights / lambdas, None, f"power-law/{spec.mode.value}")


def tail_estimate(fit: PowerLawFit, modes: int) -> dict:
    """Integral bounds for the parts of the spectral sums cut off at `modes`."""

    def integral(scale: float, exponent: float) -> float:
        if exponent <= 1.0:
            return math.inf
        return scale * modes ** (1.0 - exponent) / (exponent - 1.0)

    return {
        "trace": integral(fit.Lambda, fit.nu),
        "trace_sq": integral(fit.Lambda**2, 2 * fit.nu),
        "weighted_trace": fit.K * (modes + 1) ** (-fit.kappa),
    }


def eigendecompose(problem: FeatureProblem):
    """Spectrum, eigenbasis (d x M columns) and C_kk,0 of a feature problem.

    Modes with lambda <= RANK_EPS * lambda_max are treated as null space.
    """
    evals, evecs = np.linalg.eigh(problem.hessian)
    lam_max = float(evals[-1]) if evals.size else 0.0
    if lam_max <= 0:
        raise SpectrumError("Hessian is zero; spectrum is empty")
    keep = evals > RANK_EPS * lam_max
    order = np.argsort(-evals[keep], kind="stable")
    lambdas = evals[keep][order]
    basis = evecs[:, keep][:, order]
    c0 = (basis.T @ problem.deviation) ** 2
    spectrum = Spectrum(lambdas, c0, problem.size, "features")
    return spectrum, basis, c0


def random_feature_problem(d: int, n: int, seed: int = 0, decay: float = 1.0) -> FeatureProblem:
    """Gaussian features with row scales k^(-decay/2), so lambda_k ~ k^-decay."""
    rng = np.random.default_rng(seed)
    scales = np.arange(1, d + 1, dtype=float) ** (-decay / 2.0)
    psi = scales[:, None] * rng.standard_normal((d, n))
    w_star = rng.standard_normal(d) / math.sqrt(d)
    return FeatureProblem(psi, w_star, np.zeros(d))


def torus_kernel(grid: Sequence[int], width: float = 0.5) -> np.ndarray:
    """Periodic von Mises product kernel sampled at the grid offsets."""
    axes = [2 * np.pi * np.arange(n) / n for n in grid]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.exp(sum((np.cos(x) - 1.0) for x in mesh) / width**2)


def build_torus_problem(grid: Sequence[int], kernel_values, w_star=None, w0=None) -> TorusProblem:
    grid = tuple(int(n) for n in grid)
    kern = np.asarray(kernel_values, dtype=float).reshape(grid)
    n_total = int(np.prod(grid))
    neg = tuple((-np.arange(n)) % n for n in grid)
    if not np.allclose(kern, kern[np.ix_(*neg)], rtol=1e-12, atol=1e-14 * np.max(np.abs(kern))):
        raise InputError("kernel values must be symmetric under i -> -i")

    # lambda_k = N^-1/2 sum_i K_i exp(+i k.x_i); ifftn carries the + sign and a 1/N
    eig = np.fft.ifftn(kern) * math.sqrt(n_total)
    if np.max(np.abs(eig.imag)) > 1e-10 * max(np.max(np.abs(eig.real)), 1e-300):
        raise InputError("kernel DFT is not real; kernel is not symmetric")
    eig = eig.real
    lam_max = float(np.max(eig))
    if lam_max <= 0 or float(np.min(eig)) < -1e-10 * lam_max:
        raise SpectrumError(f"kernel is not positive semi-definite (min DFT coefficient {np.min(eig):.3e})")

    idx = np.array(list(itertools.product(*(range(n) for n in grid))))
    diff = (idx[:, None, :] - idx[None, :, :]) % np.array(grid)
    kmat = kern[tuple(diff[..., j] for j in range(len(grid)))] / math.sqrt(n_total)

    evals, evecs = np.linalg.eigh(kmat)
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    features = math.sqrt(n_total) * root
    if w_star is None:
        w_star = np.zeros(n_total)
        w_star[0] = 1.0
    if w0 is None:
        w0 = np.zeros(n_total)
    problem = FeatureProblem(features, w_star, w0)
    return TorusProblem(grid, problem, eig.reshape(-1), kmat)


def fit_power_law(spectrum: Spectrum, tail_start: int = 1) -> PowerLawFit:
    """Ordinary least squares on log-log data from mode `tail_start` (1-based) on."""
    if tail_start < 1:
        raise SpectrumError("tail_start is 1-based")
    k = np.arange(1, spectrum.size + 1, dtype=float)[tail_start - 1:]
    if k.size < 8:
        raise SpectrumError(f"tail of length {k.size} is too short to fit (need at least 8)")
    lam = spectrum.lambdas[tail_start - 1:]
    s = spectrum.tail_sums()[tail_start - 1:]
    if np.any(s <= 0):
        raise SpectrumError("partial sums S_k vanish in the tail; cannot take logs")
    logk = np.log(k)
    slope_l, icpt_l = np.polyfit(logk, np.log(lam), 1)
    slope_s, icpt_s = np.polyfit(logk, np.log(s), 1)
    res_l = np.log(lam) - (icpt_l + slope_l * logk)
    res_s = np.log(s) - (icpt_s + slope_s * logk)
    residual = float(0.5 * (np.mean(res_l**2) + np.mean(res_s**2)))
    if slope_l >= 0 or slope_s >= 0:
        raise SpectrumError(f"tail does not decay (slopes {slope_l:.3g}, {slope_s:.3g})")
    return PowerLawFit(
        Lambda=float(np.exp(icpt_l)), nu=float(-slope_l),
        K=float(np.exp(icpt_s)), kappa=float(-slope_s),
        tail_start=tail_start, residual=residual,
    )


def load_spectrum_csv(path: str | pathlib.Path, dataset_size: Optional[int] = None) -> Spectrum:
    """Read ``[k,] lambda, lambda_c`` rows; ``#`` lines and a header are skipped."""
    path = pathlib.Path(path)
    if not path.exists():
        raise InputError(f"spectrum file not found: {path}")
    lambdas, weights = [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            cells = [c.strip() for c in row]
            if not cells or not any(cells) or cells[0].startswith("#"):
                continue
            if tuple(c.lower() for c in cells) in (CSV_HEADER, CSV_HEADER[1:]):
                continue
            if len(cells) not in (2, 3):
                raise SpectrumError(f"{path}:{lineno}: expected 2 or 3 columns, got {len(cells)}")
            values = []
            for col, cell in enumerate(cells, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise SpectrumError(f"{path}:{lineno}: column {col} is not a number: {cell!r}") from None
            lam, weight = values[-2], values[-1]
            if not lam > 0 or not math.isfinite(lam):
                raise SpectrumError(f"{path}:{lineno}: eigenvalue must be positive, got {lam!r}")
            if not weight >= 0 or not math.isfinite(weight):
                raise SpectrumError(f"{path}:{lineno}: lambda_c must be non-negative, got {weight!r}")
            lambdas.append(lam)
            weights.append(weight)
    if not lambdas:
        raise SpectrumError(f"{path}: no spectrum rows")
    lam = np.array(lambdas)
    return Spectrum.from_unsorted(lam, np.array(weights) / lam, dataset_size, f"csv:{path.name}")


def save_spectrum_csv(spectrum: Spectrum, path: str | pathlib.Path) -> pathlib.Path:
    p = pathlib.Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for k, (lam, w) in enumerate(zip(spectrum.lambdas, spectrum.weights()), start=1):
            writer.writerow([k, repr(float(lam)), repr(float(w))])
    return p
