"""Generating-function analysis of SE dynamics with constant alpha and beta.

The loss sequence has generating function V(z) / (2 (1 - z U(z))), where the
"noise" function U and the "signal" function V are sums of rational terms over
the spectrum, all sharing the cubic denominator S of :func:`eval_S`.
Everything here works in the analysis convention tau1 = 1, tau = tau2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import optimize

from .config import SGDParams
from .errors import AnalysisDomainError, NoRootError, NotDivergentError
from .simulate import LossRecorder, LossTrajectory, MomentState
from .spectrum import PowerLawFit, Spectrum

logger = logging.getLogger(__name__)

MAX_BISECTIONS = 200


def eval_S(alpha, beta, gamma_arg, lam, z):
    """Cubic denominator in z, evaluated by Horner; ``gamma_arg`` is tau*gamma."""
    a2l2 = alpha * alpha * lam * lam
    s1 = a2l2 * gamma_arg - a2l2 + 2 * alpha * beta * lam + 2 * alpha * lam - beta * beta - beta - 1
    s2 = (a2l2 * beta * gamma_arg + a2l2 * beta - 2 * alpha * beta * beta * lam
          - 2 * alpha * beta * lam + beta**3 + beta * beta + beta)
    s3 = -(beta**3)
    return 1 + z * (s1 + z * (s2 + z * s3))


def _eval_S_prime(alpha, beta, gamma_arg, lam, z):
    a2l2 = alpha * alpha * lam * lam
    s1 = a2l2 * gamma_arg - a2l2 + 2 * alpha * beta * lam + 2 * alpha * lam - beta * beta - beta - 1
    s2 = (a2l2 * beta * gamma_arg + a2l2 * beta - 2 * alpha * beta * beta * lam
          - 2 * alpha * beta * lam + beta**3 + beta * beta + beta)
    return s1 + z * (2 * s2 - 3 * beta**3 * z)


@dataclass(frozen=True)
class GenFuncContext:
    spectrum: Spectrum
    alpha: float
    beta: float
    gamma: float
    tau: float = 1.0

    @classmethod
    def from_params(cls, spectrum: Spectrum, params: SGDParams) -> "GenFuncContext":
        """Fold tau1 into gamma so that tau1 = 1 in the analysis."""
        if params.tau1 == 0:
            raise AnalysisDomainError("tau1 = 0 has no analysis-convention equivalent")
        return cls(spectrum, params.alpha, params.beta,
                   params.gamma * params.tau1, params.tau2 / params.tau1)

    @property
    def gamma_arg(self) -> float:
        return self.tau * self.gamma

    @property
    def alpha_eff(self) -> float:
        return self.alpha / (1.0 - self.beta)

    def noiseless_bound(self) -> float:
        return 2.0 * (1.0 + self.beta) / self.spectrum.lambda_max

    def domain_violation(self) -> Optional[str]:
        if not -1.0 < self.beta < 1.0:
            return f"beta={self.beta} outside (-1, 1)"
        if not 0.0 <= self.gamma <= 1.0:
            return f"gamma={self.gamma} outside [0, 1]"
        if not 0.0 < self.tau <= 1.0:
            return f"tau={self.tau} outside (0, 1]"
        if self.alpha <= 0:
            return "alpha must be positive"
        if self.alpha >= self.noiseless_bound():
            return f"alpha={self.alpha:g} at or beyond the noiseless bound 2(1+beta)/lambda_max={self.noiseless_bound():g}"
        return None

    def check(self) -> None:
        reason = self.domain_violation()
        if reason is not None:
            raise AnalysisDomainError(f"outside analysis domain: {reason}")

    def replace(self, **changes) -> "GenFuncContext":
        fields = dict(spectrum=self.spectrum, alpha=self.alpha, beta=self.beta,
                      gamma=self.gamma, tau=self.tau)
        fields.update(changes)
        return GenFuncContext(**fields)


def eval_UV(ctx: GenFuncContext, z: float) -> Tuple[float, float, float, float]:
    """U(z), V(z) and their derivatives, summed in ascending mode order."""
    ctx.check()
    if not 0.0 <= z <= 1.0:
        raise AnalysisDomainError(f"z={z} outside [0, 1]")
    lam = ctx.spectrum.lambdas
    w = ctx.spectrum.weights()
    a, b, g = ctx.alpha, ctx.beta, ctx.gamma_arg
    S = eval_S(a, b, g, lam, z)
    dS = _eval_S_prime(a, b, g, lam, z)

    u_scale = ctx.gamma * a * a * lam * lam
    u_num = u_scale * (b * z + 1)
    du_num = u_scale * b
    v_lin = 2 * a * b * lam - b * b - b
    v_num = w * (1 + v_lin * z + b**3 * z * z)
    dv_num = w * (v_lin + 2 * b**3 * z)

    U = float(np.sum(u_num / S))
    V = float(np.sum(v_num / S))
    dU = float(np.sum((du_num * S - u_num * dS) / (S * S)))
    dV = float(np.sum((dv_num * S - v_num * dS) / (S * S)))
    return U, V, dU, dV


def _denominator_at_one(ctx: GenFuncContext) -> np.ndarray:
    lam = ctx.spectrum.lambdas
    a, b = ctx.alpha, ctx.beta
    return 2 * (1 - b * b) + a * lam * (ctx.gamma_arg * (1 + b) - (1 - b))


def eval_U1(ctx: GenFuncContext) -> float:
    """U(1) in closed form; +inf when some mode has a non-positive S(1)."""
    if ctx.gamma == 0:
        return 0.0
    lam = ctx.spectrum.lambdas
    den = _denominator_at_one(ctx)
    if np.any(den <= 0):
        return math.inf
    return float(np.sum(ctx.gamma * ctx.alpha * lam * (1 + ctx.beta) / den))


def eval_V1(ctx: GenFuncContext) -> float:
    lam = ctx.spectrum.lambdas
    a, b = ctx.alpha, ctx.beta
    den = _denominator_at_one(ctx)
    if np.any(den <= 0):
        return math.inf
    num = ctx.spectrum.c0 * (2 * a * b * lam + b**3 - b * b - b + 1)
    return float(np.sum(num / (a * den)))


def solve_lambda_crit(spectrum: Spectrum, tau: float) -> float:
    """Unique x >= 0 with sum_k lambda_k / (tau lambda_k + x) = 1."""
    lam = spectrum.lambdas
    total = spectrum.trace()
    if tau == 0:
        return total
    if tau < 0:
        raise AnalysisDomainError(f"tau={tau} must be non-negative")
    ratio = spectrum.size / tau
    if ratio < 1:
        raise NoRootError(f"sum_k 1/tau = {ratio:g} < 1; no critical value exists")
    if ratio == 1:
        return 0.0

    def excess(x: float) -> float:
        return float(np.sum(lam / (tau * lam + x))) - 1.0

    return float(optimize.bisect(excess, 0.0, total, xtol=1e-12 * spectrum.lambda_max,
                                 maxiter=MAX_BISECTIONS))


def critical_alpha(spectrum: Spectrum, beta: float, gamma: float, tau: float = 1.0) -> float:
    """Largest convergent alpha: U(1) = 1 or the noiseless bound, whichever is smaller."""
    base = GenFuncContext(spectrum, 1.0, beta, gamma, tau)
    upper = base.noiseless_bound()
    if gamma == 0:
        return upper
    top = upper * (1 - 1e-12)
    if eval_U1(base.replace(alpha=top)) < 1.0:
        return upper

    def excess(alpha: float) -> float:
        return eval_U1(base.replace(alpha=alpha)) - 1.0

    return float(optimize.bisect(excess, upper * 1e-12, top, xtol=1e-14 * upper,
                                 maxiter=MAX_BISECTIONS))


class StabilityReport(BaseModel):
    U1: float
    u1_infinite: bool = False
    converges: bool
    lambda_crit: Optional[float] = None
    alpha_eff: float
    alpha_eff_bound: Optional[float] = None
    alpha_eff_critical: Optional[float] = None
    immediate_divergence: bool = False
    eventual_divergence: bool = False
    reason: Optional[str] = None


def stability_report(ctx: GenFuncContext, fit: Optional[PowerLawFit] = None) -> StabilityReport:
    """Convergence verdict with critical learning rates; never raises on domain issues."""
    reason = ctx.domain_violation()
    immediate = fit is not None and fit.nu <= 0.5
    eventual = fit is not None and 0.5 < fit.nu <= 1.0
    u1_infinite = immediate or eventual

    lambda_crit = None
    try:
        lambda_crit = solve_lambda_crit(ctx.spectrum, ctx.tau)
    except (NoRootError, AnalysisDomainError) as exc:
        logger.debug("no critical lambda: %s", exc)

    bound = None
    critical = None
    if -1.0 < ctx.beta < 1.0 and 0 < ctx.tau <= 1.0 and 0 <= ctx.gamma <= 1.0:
        if lambda_crit is not None:
            bound = math.inf if ctx.gamma == 0 or lambda_crit == 0 else 2.0 / (ctx.gamma * lambda_crit)
        critical = critical_alpha(ctx.spectrum, ctx.beta, ctx.gamma, ctx.tau) / (1 - ctx.beta)

    if reason is not None:
        U1 = math.inf
    elif u1_infinite and ctx.gamma > 0:
        U1 = math.inf
        reason = "power-law tail with nu <= 1 makes sum_k lambda_k infinite"
    else:
        U1 = eval_U1(ctx)
    return StabilityReport(
        U1=U1, u1_infinite=u1_infinite and ctx.gamma > 0, converges=reason is None and U1 < 1.0,
        lambda_crit=lambda_crit, alpha_eff=ctx.alpha_eff, alpha_eff_bound=bound,
        alpha_eff_critical=critical, immediate_divergence=immediate,
        eventual_divergence=eventual, reason=reason,
    )


class DivergenceReport(BaseModel):
    r_L: float
    t_div: float
    prefactor: float
    U1: float
    residual: float


def solve_divergence(ctx: GenFuncContext) -> DivergenceReport:
    """Convergence radius r_L of the loss series, from z U(z) = 1 on (0, 1)."""
    ctx.check()
    u1 = eval_U1(ctx)
    if not u1 > 1.0:
        raise NotDivergentError(f"U(1) = {u1:.6g} <= 1; the loss converges")

    def excess(z: float) -> float:
        return z * eval_UV(ctx, z)[0] - 1.0

    r = float(optimize.bisect(excess, 0.0, 1.0, xtol=1e-15, maxiter=MAX_BISECTIONS))
    U, V, dU, _ = eval_UV(ctx, r)
    return DivergenceReport(
        r_L=r, t_div=-1.0 / math.log(r), prefactor=V / (2.0 * (1.0 + r * r * dU)),
        U1=u1, residual=abs(r * U - 1.0),
    )


def compute_UV_sequences(ctx: GenFuncContext, T: int) -> Tuple[np.ndarray, np.ndarray]:
    """Taylor coefficients U_1..U_T and V_1..V_T from the per-mode operator."""
    if T < 1:
        raise ValueError("T must be at least 1")
    lam = ctx.spectrum.lambdas
    a, b = ctx.alpha, ctx.beta
    damp = ctx.gamma_arg * a * a * lam * lam
    ones = np.ones_like(lam)
    noise = MomentState(ones.copy(), ones.copy(), ones.copy())
    signal = MomentState.initial(ctx.spectrum)
    u_scale = ctx.gamma * a * a * lam * lam
    U = np.empty(T)
    V = np.empty(T)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            U[t] = float(np.sum(u_scale * noise.c))
            V[t] = float(np.sum(signal.c))
            noise.advance(lam, a, b, -damp * noise.c)
            signal.advance(lam, a, b, -damp * signal.c)
    return U, V


def reconstruct_loss(ctx: GenFuncContext, T: int) -> LossTrajectory:
    """L(T) = V_{T+1}/2 + sum_{t=1..T} U_{T+1-t} L(t-1)."""
    U, V = compute_UV_sequences(ctx, T + 1)
    losses = np.empty(T + 1)
    losses[0] = 0.5 * V[0]
    rec = LossRecorder(T, losses[0])
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, T + 1):
            losses[n] = 0.5 * V[n] + float(np.dot(U[:n][::-1], losses[:n]))
            if not rec.record(n, losses[n]):
                break
    meta = {"regime": "genfunc", "alpha": ctx.alpha, "beta": ctx.beta,
            "gamma": ctx.gamma, "tau": ctx.tau, "modes": ctx.spectrum.size}
    return LossTrajectory(rec.losses, rec.diverged_at, metadata=meta)
