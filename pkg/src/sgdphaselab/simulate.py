"""Loss dynamics of momentum SGD on quadratic problems.

Four fidelity levels share one output type, :class:`LossTrajectory`:

* ``run_se`` / ``run_noiseless`` evolve per-mode 2x2 moment blocks in O(M)
  per step under the spectrally expressible noise model;
* ``run_full_moments`` evolves the dense second-moment matrix with the exact
  mini-batch noise covariance;
* ``run_mc`` averages independent stochastic trajectories;
* ``run_additive_noise`` replaces sampling noise by a fixed covariance.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from .config import SGDParams, resolve_threads
from .errors import InputError, NoStationaryStateError, ResourceError, UndefinedRatioError
from .spectrum import FeatureProblem, Spectrum, gamma_for_batch

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e12
ABSOLUTE_DIVERGENCE = 1e300
MAX_DENSE_DIM = 256
MC_CHUNK = 64
MC_TIME_BLOCK = 256


class NoiseModel(str, Enum):
    EXACT = "exact"
    SE = "se"


def divergence_threshold(initial_loss: float) -> float:
    return DIVERGENCE_FACTOR * initial_loss if initial_loss > 0 else ABSOLUTE_DIVERGENCE


@dataclass
class LossTrajectory:
    """Loss per step L(0..T); ``stderr`` only for Monte-Carlo means."""

    losses: np.ndarray
    diverged_at: Optional[int] = None
    stderr: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.losses) - 1

    @property
    def initial_loss(self) -> float:
        return float(self.losses[0])

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])

    def converged(self) -> bool:
        if self.diverged_at is not None or not np.all(np.isfinite(self.losses)):
            return False
        first, last = self.initial_loss, self.final_loss
        if last <= 1e-8 * first:
            return True
        return last < float(self.losses[self.steps // 2])

    def rows(self) -> List[list]:
        err = self.stderr
        return [
            [t, float(loss), "" if err is None else float(err[t])]
            for t, loss in enumerate(self.losses)
        ]


class LossRecorder:
    """Fills a loss buffer and stops at the divergence threshold."""

    def __init__(self, steps: int, initial_loss: float):
        self.losses = np.full(steps + 1, np.inf)
        self.losses[0] = initial_loss
        self.threshold = divergence_threshold(initial_loss)
        self.diverged_at: Optional[int] = None

    def record(self, t: int, loss: float) -> bool:
        if not math.isfinite(loss) or loss > self.threshold:
            self.diverged_at = t
            logger.info("loss crossed divergence threshold %.3g at step %d", self.threshold, t)
            return False
        self.losses[t] = loss
        return True


@dataclass
class MomentState:
    """Per-mode moment blocks (C_kk, J_kk, V_kk), stored scaled by lambda_k."""

    c: np.ndarray
    j: np.ndarray
    v: np.ndarray

    @classmethod
    def initial(cls, spectrum: Spectrum) -> "MomentState":
        x = spectrum.weights().copy()
        return cls(x, np.zeros_like(x), np.zeros_like(x))

    def loss(self) -> float:
        return 0.5 * float(np.sum(self.c))

    def advance(self, lambdas: np.ndarray, alpha: float, beta: float, increment) -> None:
        a = 1.0 - alpha * lambdas
        al = alpha * lambdas
        c, j, v = self.c, self.j, self.v
        bv = beta * beta * v
        self.c = a * a * c + 2.0 * a * beta * j + bv + increment
        self.j = -a * al * c + beta * (a - al) * j + bv + increment
        self.v = al * al * c - 2.0 * al * beta * j + bv + increment


def _echo(spectrum: Optional[Spectrum], params: SGDParams, regime: str, **extra) -> Dict[str, Any]:
    meta: Dict[str, Any] = {"regime": regime, "params": params.model_dump()}
    if spectrum is not None:
        meta.update(modes=spectrum.size, source=spectrum.source, dataset_size=spectrum.dataset_size)
    meta.update(extra)
    return meta


def run_se(spectrum: Spectrum, params: SGDParams) -> LossTrajectory:
    """SE recursion in output space; noise enters all block entries alike."""
    lam = spectrum.lambdas
    alpha, beta, gamma = params.alpha, params.beta, params.gamma
    state = MomentState.initial(spectrum)
    rec = LossRecorder(params.steps, state.loss())
    scale = gamma * alpha * alpha * lam * lam
    negative_at = None
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, params.steps + 1):
            if gamma:
                total = float(np.sum(state.c))
                increment = scale * (params.tau1 * total - params.tau2 * state.c)
            else:
                increment = 0.0
            state.advance(lam, alpha, beta, increment)
            if negative_at is None and np.any(state.c < 0):
                negative_at = t
                logger.warning("SE moments went negative at step %d", t)
            if not rec.record(t, state.loss()):
                break
    regime = "se" if gamma else "noiseless"
    return LossTrajectory(
        rec.losses, rec.diverged_at,
        metadata=_echo(spectrum, params, regime, negative_moments_at=negative_at),
    )


def run_noiseless(spectrum: Spectrum, params: SGDParams) -> LossTrajectory:
    return run_se(spectrum, params.model_copy(update={"gamma": 0.0}))


def exact_noise_covariance(problem: FeatureProblem, C: np.ndarray) -> np.ndarray:
    """Per-sample gradient covariance (1/N) sum_i <psi_i, C psi_i> psi_i psi_i^T - HCH."""
    psi = problem.features
    C = np.asarray(C, dtype=float)
    if C.shape != (problem.dim, problem.dim):
        raise InputError(f"C must be {problem.dim}x{problem.dim}, got {C.shape}")
    q = np.einsum("di,de,ei->i", psi, C, psi)
    H = problem.hessian
    sigma = (psi * q) @ psi.T / problem.size - H @ C @ H
    return 0.5 * (sigma + sigma.T)


def se_noise_matrix(hessian: np.ndarray, C: np.ndarray, tau1: float, tau2: float) -> np.ndarray:
    hc = hessian @ C
    return tau1 * float(np.trace(hc)) * hessian - tau2 * hc @ hessian


def se_noise_diagonal(spectrum: Spectrum, c_diag, tau1: float = 1.0, tau2: float = 1.0) -> np.ndarray:
    lam = spectrum.lambdas
    c = np.asarray(c_diag, dtype=float)
    return tau1 * lam * float(np.sum(lam * c)) - tau2 * lam * lam * c


def non_spectral_bounds(spectrum: Spectrum, c_diag, dataset_size: int) -> Dict[str, np.ndarray]:
    """Sigma_kk reachable with this H and C: A for overlapping features, B for orthogonal ones.

    Every value between the two endpoints is attained by some full-rank
    feature set; ``trace_bound`` caps Sigma_kk for all of them.
    """
    lam = spectrum.lambdas
    c = np.asarray(c_diag, dtype=float)
    trace_hc = float(np.sum(lam * c))
    return {
        "overlapping": lam * (trace_hc - lam * c),
        "orthogonal": (dataset_size - 1) * lam * lam * c,
        "trace_bound": (dataset_size - 1) * lam * trace_hc,
    }


class SEFitReport(BaseModel):
    """E2(t1, t2) = 1 - 2 t.g + t^T A t, the relative error of the SE surrogate."""

    model_config = ConfigDict(frozen=True)

    tau1: float
    tau2: float
    e2: float
    quad: List[List[float]]
    lin: List[float]
    tau2_line: Optional[float] = None
    e2_line: Optional[float] = None
    tau_global: Optional[List[float]] = None
    e2_global: Optional[float] = None

    def e2_at(self, tau1: float, tau2: float) -> float:
        t = np.array([tau1, tau2])
        return float(1.0 - 2.0 * t @ np.array(self.lin) + t @ np.array(self.quad) @ t)


def se_fit_error(problem: FeatureProblem, C: np.ndarray, tau1: float = 1.0, tau2: float = 1.0) -> SEFitReport:
    sigma = exact_noise_covariance(problem, C)
    norm = float(np.sum(sigma * sigma))
    if norm <= 0:
        raise UndefinedRatioError("exact noise covariance is zero; E2 is undefined")
    H = problem.hessian
    p1 = float(np.trace(H @ C)) * H
    p2 = -H @ C @ H
    basis = (p1, p2)
    quad = np.array([[np.sum(a * b) for b in basis] for a in basis]) / norm
    lin = np.array([np.sum(sigma * p) for p in basis]) / norm
    diff = sigma - se_noise_matrix(H, C, tau1, tau2)
    report: Dict[str, Any] = dict(
        tau1=tau1, tau2=tau2, e2=float(np.sum(diff * diff)) / norm,
        quad=quad.tolist(), lin=lin.tolist(),
    )
    if quad[1, 1] > 0:
        t2 = float((lin[1] - quad[0, 1]) / quad[1, 1])
        report.update(tau2_line=t2)
    if abs(np.linalg.det(quad)) > 1e-12 * float(np.trace(quad)) ** 2:
        report.update(tau_global=np.linalg.solve(quad, lin).tolist())
    out = SEFitReport(**report)
    updates = {}
    if out.tau2_line is not None:
        updates["e2_line"] = out.e2_at(1.0, out.tau2_line)
    if out.tau_global is not None:
        updates["e2_global"] = out.e2_at(*out.tau_global)
    return out.model_copy(update=updates)


def iterate_full_moments(problem: FeatureProblem, params: SGDParams,
                         noise: NoiseModel = NoiseModel.EXACT) -> Iterator[np.ndarray]:
    """Yield the combined 2d x 2d moment matrix of (w - w*, v) at t = 0..T."""
    d = problem.dim
    if d > MAX_DENSE_DIM:
        raise ResourceError(f"dense moment dynamics limited to d <= {MAX_DENSE_DIM}, got d={d}")
    noise = NoiseModel(noise)
    H = problem.hessian
    alpha, beta, gamma = params.alpha, params.beta, params.gamma
    eye = np.eye(d)
    B = np.block([[eye - alpha * H, beta * eye], [-alpha * H, beta * eye]])
    dw = problem.deviation
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = np.outer(dw, dw)
    yield M
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(params.steps):
            C = M[:d, :d]
            M = B @ M @ B.T
            if gamma:
                if noise is NoiseModel.EXACT:
                    sigma = exact_noise_covariance(problem, C)
                else:
                    sigma = se_noise_matrix(H, C, params.tau1, params.tau2)
                M += gamma * alpha * alpha * np.tile(sigma, (2, 2))
            M = 0.5 * (M + M.T)
            yield M


def run_full_moments(problem: FeatureProblem, params: SGDParams,
                     noise: NoiseModel = NoiseModel.EXACT) -> LossTrajectory:
    H = problem.hessian
    d = problem.dim
    frames = iterate_full_moments(problem, params, noise)
    rec = LossRecorder(params.steps, 0.5 * float(np.sum(H * next(frames)[:d, :d])))
    for t, M in enumerate(frames, start=1):
        if not rec.record(t, 0.5 * float(np.sum(H * M[:d, :d]))):
            break
    return LossTrajectory(
        rec.losses, rec.diverged_at,
        metadata=_echo(None, params, "full", noise=NoiseModel(noise).value, dim=d, dataset_size=problem.size),
    )


def momentum_step(features: np.ndarray, dw: np.ndarray, v: np.ndarray, batches: np.ndarray,
                  alpha: float, beta: float):
    """One heavy-ball step for R runs at once; ``batches`` holds R rows of b indices."""
    rows = features.T[batches]  # (R, b, d)
    residual = np.einsum("rbd,rd->rb", rows, dw)
    grad = np.einsum("rbd,rb->rd", rows, residual) / batches.shape[1]
    v = beta * v - alpha * grad
    return dw + v, v


def _sample_batches(rng: np.random.Generator, steps: int, n: int, b: int) -> np.ndarray:
    """Uniform b-subsets per row by a partial Fisher-Yates shuffle."""
    idx = np.tile(np.arange(n), (steps, 1))
    rows = np.arange(steps)
    for j in range(b):
        r = rng.integers(j, n, size=steps)
        picked = idx[rows, r].copy()
        idx[rows, r] = idx[:, j]
        idx[:, j] = picked
    return idx[:, :b]


def run_generator(seed: int, run: int) -> np.random.Generator:
    """Counter-based stream for one Monte-Carlo run."""
    return np.random.Generator(np.random.Philox(key=[seed, run]))


def _mc_chunk(problem: FeatureProblem, params: SGDParams, first: int, count: int, seed: int):
    psi = problem.features
    H = problem.hessian
    n, b, steps = problem.size, params.batch, params.steps
    rngs = [run_generator(seed, first + r) for r in range(count)]
    dw = np.tile(problem.deviation, (count, 1))
    v = np.zeros_like(dw)
    losses = np.empty((count, steps + 1))
    losses[:, 0] = 0.5 * np.einsum("rd,de,re->r", dw, H, dw)
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, steps, MC_TIME_BLOCK):
            block = min(MC_TIME_BLOCK, steps - start)
            batches = np.stack([_sample_batches(rng, block, n, b) for rng in rngs], axis=1)
            for s in range(block):
                dw, v = momentum_step(psi, dw, v, batches[s], params.alpha, params.beta)
                losses[:, start + s + 1] = 0.5 * np.einsum("rd,de,re->r", dw, H, dw)
    mean = losses.mean(axis=0)
    m2 = np.sum((losses - mean) ** 2, axis=0)
    return count, mean, m2


def _combine(a, b):
    # pairwise update of (count, mean, M2)
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    delta = mb - ma
    with np.errstate(invalid="ignore"):
        mean = ma + delta * (nb / n)
        m2 = sa + sb + delta * delta * (na * nb / n)
    return n, mean, m2


def run_mc(problem: FeatureProblem, params: SGDParams, runs: int, seed: int = 0,
           threads: Optional[int] = None) -> LossTrajectory:
    """Mean population loss over independent runs with per-step standard error.

    Results depend only on (problem, params, runs, seed): runs are grouped in
    fixed chunks and chunk statistics are merged in chunk order.
    """
    if runs < 1:
        raise InputError("runs must be at least 1")
    if params.batch > problem.size:
        raise InputError(f"batch size {params.batch} exceeds dataset size {problem.size}")
    chunks = [(first, min(MC_CHUNK, runs - first)) for first in range(0, runs, MC_CHUNK)]
    workers = min(resolve_threads(threads), len(chunks))
    logger.debug("monte-carlo: %d runs in %d chunks on %d threads", runs, len(chunks), workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(lambda c: _mc_chunk(problem, params, c[0], c[1], seed), chunks))
    else:
        stats = [_mc_chunk(problem, params, first, count, seed) for first, count in chunks]
    total = stats[0]
    for part in stats[1:]:
        total = _combine(total, part)
    n, mean, m2 = total
    stderr = np.sqrt(m2 / (n - 1) / n) if n > 1 else np.zeros_like(mean)

    rec = LossRecorder(params.steps, float(mean[0]))
    for t in range(1, params.steps + 1):
        if not rec.record(t, float(mean[t])):
            break
    if rec.diverged_at is not None:
        stderr = stderr.copy()
        stderr[rec.diverged_at:] = np.nan
    gamma = gamma_for_batch(problem.size, params.batch)
    return LossTrajectory(
        rec.losses, rec.diverged_at, stderr,
        metadata=_echo(None, params, "mc", runs=runs, seed=seed, gamma_effective=gamma,
                       dim=problem.dim, dataset_size=problem.size),
    )


def additive_noise_floor(spectrum: Spectrum, alpha: float, beta: float, g_diag) -> np.ndarray:
    """Stationary per-mode (C, J, V) of the additive-noise recursion, shape (M, 3)."""
    lam = spectrum.lambdas
    g = np.broadcast_to(np.asarray(g_diag, dtype=float), lam.shape)
    if alpha >= 2.0 * (1.0 + beta) / spectrum.lambda_max:
        raise NoStationaryStateError(
            f"alpha={alpha} reaches the noiseless bound 2(1+beta)/lambda_max; no stationary state"
        )
    a = 1.0 - alpha * lam
    al = alpha * lam
    bb = beta * beta
    zeros = np.zeros_like(lam)
    system = np.stack([
        np.stack([1.0 - a * a, -2.0 * a * beta, np.full_like(lam, -bb)], axis=-1),
        np.stack([a * al, 1.0 - beta * (a - al), np.full_like(lam, -bb)], axis=-1),
        np.stack([-al * al, 2.0 * al * beta + zeros, np.full_like(lam, 1.0 - bb)], axis=-1),
    ], axis=-2)
    rhs = (alpha * alpha * g)[:, None] * np.ones(3)
    return np.linalg.solve(system, rhs[..., None])[..., 0]


def run_additive_noise(spectrum: Spectrum, params: SGDParams, g_diag):
    """Per-mode recursion with a fixed noise covariance; returns (trajectory, L_inf)."""
    lam = spectrum.lambdas
    g = np.broadcast_to(np.asarray(g_diag, dtype=float), lam.shape)
    if np.any(g < 0):
        raise InputError("additive noise covariance must be non-negative")
    floor = additive_noise_floor(spectrum, params.alpha, params.beta, g)
    l_inf = 0.5 * float(np.sum(lam * floor[:, 0]))
    c, j, v = spectrum.c0.copy(), np.zeros_like(lam), np.zeros_like(lam)
    a = 1.0 - params.alpha * lam
    al = params.alpha * lam
    beta = params.beta
    noise = params.alpha**2 * g
    rec = LossRecorder(params.steps, 0.5 * float(np.sum(lam * c)))
    for t in range(1, params.steps + 1):
        bv = beta * beta * v
        c, j, v = (
            a * a * c + 2.0 * a * beta * j + bv + noise,
            -a * al * c + beta * (a - al) * j + bv + noise,
            al * al * c - 2.0 * al * beta * j + bv + noise,
        )
        if not rec.record(t, 0.5 * float(np.sum(lam * c))):
            break
    traj = LossTrajectory(rec.losses, rec.diverged_at,
                          metadata=_echo(spectrum, params, "additive", loss_floor=l_inf))
    return traj, l_inf


def trajectory_metadata(traj: LossTrajectory, **extra) -> Dict[str, Any]:
    meta = dict(traj.metadata)
    meta.update(
        steps=traj.steps, initial_loss=traj.initial_loss, final_loss=traj.final_loss,
        diverged=traj.diverged_at is not None, diverged_at=traj.diverged_at,
        converged=traj.converged(),
    )
    meta.update(extra)
    return meta
