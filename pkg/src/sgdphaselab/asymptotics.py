"""Late-time loss asymptotics under power-law spectra.

Phases are decided by (nu, zeta) alone; constants combine the power-law fit
with U(1), V(1) of the generating-function context.
"""

from __future__ import annotations

import logging
import math
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import optimize, special

from .config import SGDParams
from .errors import BoundaryCaseError, NoRootError, NotApplicableError, NotConvergentError
from .genfunc import GenFuncContext, critical_alpha, eval_U1, eval_V1, solve_divergence
from .spectrum import PowerLawFit, Spectrum, tail_estimate

logger = logging.getLogger(__name__)

BOUNDARY_BAND = 1e-9


class PhaseLabel(str, Enum):
    SIGNAL_DOMINATED = "signal_dominated"
    NOISE_DOMINATED = "noise_dominated"
    BOUNDARY = "boundary"
    EVENTUAL_DIVERGENCE = "eventual_divergence"
    IMMEDIATE_DIVERGENCE = "immediate_divergence"

    @property
    def divergent(self) -> bool:
        return self in (PhaseLabel.EVENTUAL_DIVERGENCE, PhaseLabel.IMMEDIATE_DIVERGENCE)


def gamma_fn(x: float) -> float:
    if x <= 0 and float(x).is_integer():
        raise BoundaryCaseError(f"Gamma has a pole at {x}")
    return float(special.gamma(x))


def classify_phase(nu: float, zeta: float) -> PhaseLabel:
    if nu <= 0 or zeta <= 0:
        raise ValueError("nu and zeta must be positive")
    if nu <= 0.5:
        return PhaseLabel.IMMEDIATE_DIVERGENCE
    if nu <= 1.0:
        return PhaseLabel.EVENTUAL_DIVERGENCE
    gap = zeta - (2.0 - 1.0 / nu)
    if abs(gap) < BOUNDARY_BAND:
        return PhaseLabel.BOUNDARY
    return PhaseLabel.SIGNAL_DOMINATED if gap < 0 else PhaseLabel.NOISE_DOMINATED


class AsymptoteReport(BaseModel):
    phase: PhaseLabel
    exponent: float
    constant: float
    c_signal: float
    c_noise: float
    t_trans: Optional[float] = None
    xi: float
    recommendation: str
    alpha_opt: Optional[float] = None
    alpha_max: float
    U1: float
    V1: float
    nu: float
    zeta: float
    tail: Dict[str, float] = {}


def _constants(ctx: GenFuncContext, fit: PowerLawFit) -> Tuple[float, float, float, float]:
    ctx.check()
    u1 = eval_U1(ctx)
    if not u1 < 1.0:
        raise NotConvergentError(f"U(1) = {u1:.6g} >= 1; no convergent asymptote")
    v1 = eval_V1(ctx)
    zeta, nu = fit.zeta, fit.nu
    s = 2.0 * ctx.alpha * fit.Lambda / (1.0 - ctx.beta)
    c_signal = fit.K * gamma_fn(zeta + 1.0) / (2.0 * (1.0 - u1)) * s ** (-zeta)
    c_noise = ctx.gamma * v1 * gamma_fn(2.0 - 1.0 / nu) / (8.0 * nu * (1.0 - u1) ** 2) * s ** (1.0 / nu)
    return u1, v1, c_signal, c_noise


def transition_time(report: AsymptoteReport) -> float:
    """Time at which the noise term overtakes the signal term."""
    if report.phase != PhaseLabel.NOISE_DOMINATED:
        raise NotApplicableError(f"transition time needs the noise-dominated phase, got {report.phase.value}")
    if not (report.c_signal > 0 and report.c_noise > 0):
        raise NotApplicableError("transition time needs positive signal and noise constants")
    power = report.zeta - 2.0 + 1.0 / report.nu
    return (report.c_signal / report.c_noise) ** (1.0 / power)


def xi_criterion(spectrum: Spectrum, c0=None, nu: float = 1.0,
                 phase: Optional[PhaseLabel] = None) -> Tuple[float, str]:
    c0 = spectrum.c0 if c0 is None else np.asarray(c0, dtype=float)
    lam = spectrum.lambdas
    xi = float(nu * np.sum(lam) * np.sum(lam * c0) - (nu - 1.0) * np.sum(lam * lam) * np.sum(c0))
    if phase == PhaseLabel.SIGNAL_DOMINATED:
        return xi, "positive momentum improves"
    if xi > 0:
        return xi, "negative momentum improves at alpha_opt"
    if xi < 0:
        return xi, "positive momentum improves"
    return xi, "momentum has no first-order effect at alpha_opt"


def optimal_alpha(spectrum: Spectrum, phase: PhaseLabel, nu: Optional[float] = None,
                  zeta: Optional[float] = None) -> Tuple[float, float]:
    trace = spectrum.trace()
    alpha_max = 2.0 / trace
    if phase == PhaseLabel.NOISE_DOMINATED:
        if nu is None or nu <= 1.0:
            raise NotApplicableError(f"noise-phase alpha_opt needs nu > 1, got {nu}")
        alpha_opt = 2.0 * (nu - 1.0) / ((3.0 * nu - 1.0) * trace)
    elif phase == PhaseLabel.SIGNAL_DOMINATED:
        if zeta is None or zeta <= 0:
            raise NotApplicableError("signal-phase alpha_opt needs zeta > 0")
        alpha_opt = 2.0 * zeta / ((zeta + 1.0) * trace)
    else:
        raise NotApplicableError(f"no alpha_opt formula in the {PhaseLabel(phase).value} phase")
    assert alpha_opt < alpha_max
    return alpha_opt, alpha_max


def loss_asymptote(ctx: GenFuncContext, fit: PowerLawFit) -> AsymptoteReport:
    phase = classify_phase(fit.nu, fit.zeta)
    if phase.divergent:
        raise NotConvergentError(f"{phase.value}: no convergent asymptote for nu={fit.nu:g}")
    if phase == PhaseLabel.BOUNDARY:
        raise BoundaryCaseError(f"zeta={fit.zeta:g} sits on the phase boundary 2 - 1/nu")
    u1, v1, c_signal, c_noise = _constants(ctx, fit)
    xi, recommendation = xi_criterion(ctx.spectrum, nu=fit.nu, phase=phase)
    try:
        alpha_opt, alpha_max = optimal_alpha(ctx.spectrum, phase, fit.nu, fit.zeta)
    except NotApplicableError:
        alpha_opt, alpha_max = None, 2.0 / ctx.spectrum.trace()
    if phase == PhaseLabel.SIGNAL_DOMINATED:
        exponent, constant = -fit.zeta, c_signal
    else:
        exponent, constant = 1.0 / fit.nu - 2.0, c_noise
    report = AsymptoteReport(
        phase=phase, exponent=exponent, constant=constant, c_signal=c_signal, c_noise=c_noise,
        xi=xi, recommendation=recommendation, alpha_opt=alpha_opt, alpha_max=alpha_max,
        U1=u1, V1=v1, nu=fit.nu, zeta=fit.zeta, tail=tail_estimate(fit, ctx.spectrum.size),
    )
    if phase == PhaseLabel.NOISE_DOMINATED and c_noise > 0:
        report = report.model_copy(update={"t_trans": transition_time(report)})
    return report


def approx_loss(ctx: GenFuncContext, fit: PowerLawFit, t: float) -> float:
    """Dominant power-law term of L(t); +inf outside the convergent region."""
    phase = classify_phase(fit.nu, fit.zeta)
    if phase.divergent or ctx.domain_violation() is not None or eval_U1(ctx) >= 1.0:
        return math.inf
    if phase == PhaseLabel.BOUNDARY:
        raise BoundaryCaseError("no single dominant term on the phase boundary")
    _, _, c_signal, c_noise = _constants(ctx, fit)
    if phase == PhaseLabel.SIGNAL_DOMINATED:
        return c_signal * t ** (-fit.zeta)
    return c_noise * t ** (1.0 / fit.nu - 2.0)


def numerical_alpha_opt(ctx: GenFuncContext, fit: PowerLawFit, t: float = 1.0) -> float:
    """Bounded Brent minimisation of L_approx over alpha at beta = 0."""
    alpha_max = 2.0 / ctx.spectrum.trace()
    base = ctx.replace(beta=0.0)

    def objective(alpha: float) -> float:
        value = approx_loss(base.replace(alpha=alpha), fit, t)
        return math.log(value) if 0 < value < math.inf else 1e300

    res = optimize.minimize_scalar(
        objective, bounds=(alpha_max * 1e-9, alpha_max * (1 - 1e-9)), method="bounded",
        options={"xatol": 1e-12 * alpha_max, "maxiter": 500},
    )
    return float(res.x)


def momentum_slope(ctx: GenFuncContext, fit: PowerLawFit, h: float = 1e-3, t: float = 1.0) -> float:
    """Central difference of L_approx in beta around beta = 0."""
    up = approx_loss(ctx.replace(beta=h), fit, t)
    down = approx_loss(ctx.replace(beta=-h), fit, t)
    return (up - down) / (2.0 * h)


def early_asymptote(fit: PowerLawFit, alpha: float, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    zeta = fit.zeta
    return 0.5 * fit.K * gamma_fn(zeta + 1.0) * (2.0 * alpha * fit.Lambda * t) ** (-zeta)


class BlowupReport(BaseModel):
    a_star: float
    a_residual: float
    epsilon_star: float
    epsilon_measured: float
    t_div: float
    t_blowup: float
    r_L: float


def solve_a_star(nu: float, zeta: float) -> float:
    """Root of (1/nu - 1)/Gamma(1 - zeta) a^-zeta = e^a."""
    coef = (1.0 / nu - 1.0) / gamma_fn(1.0 - zeta)
    if coef <= 0:
        raise NoRootError("a* equation needs nu < 1")
    log_coef = math.log(coef)

    def gap(a: float) -> float:
        return log_coef - zeta * math.log(a) - a

    lo = 1e-12
    while gap(lo) <= 0:
        lo *= 1e-6
        if lo < 1e-300:
            raise NoRootError("a* equation has no root above 1e-300")
    hi = 1.0
    while gap(hi) > 0:
        hi *= 2.0
    return float(optimize.bisect(gap, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=2000))


def blowup_time(ctx: GenFuncContext, fit: PowerLawFit) -> BlowupReport:
    """Crossover time from the early power law to exponential divergence."""
    if not (ctx.beta == 0 and ctx.tau == 1 and ctx.gamma == 1):
        raise NotApplicableError("blow-up time is only defined for beta=0, tau=gamma=1")
    nu, zeta = fit.nu, fit.zeta
    if not (0.5 < nu < 1.0 and zeta < 1.0):
        raise NotApplicableError(f"blow-up time needs 1/2 < nu < 1 and zeta < 1, got nu={nu:g}, zeta={zeta:g}")
    a_star = solve_a_star(nu, zeta)
    residual = abs((1.0 / nu - 1.0) / gamma_fn(1.0 - zeta) * a_star ** (-zeta) - math.exp(a_star))
    base = (gamma_fn(2.0 - 1.0 / nu) * gamma_fn(1.0 / nu - 1.0) / (4.0 * nu)) ** (nu / (1.0 - nu))
    eps_star = base * (2.0 * ctx.alpha * fit.Lambda) ** (1.0 / (1.0 - nu))
    div = solve_divergence(ctx)
    logger.debug("a*=%.6g eps*=%.6g 1-r_L=%.6g", a_star, eps_star, 1.0 - div.r_L)
    return BlowupReport(
        a_star=a_star, a_residual=residual, epsilon_star=eps_star,
        epsilon_measured=1.0 - div.r_L, t_div=div.t_div, t_blowup=a_star * div.t_div, r_L=div.r_L,
    )


def budget_params(spectrum: Spectrum, batch: int, beta: float, margin: float = 0.5,
                  tau: float = 1.0, steps: int = 10_000) -> SGDParams:
    """Per-batch settings at a fixed fraction of the critical learning rate, gamma = 1/b."""
    if not 0 < margin < 1:
        raise ValueError("margin must lie in (0, 1)")
    gamma = 1.0 / batch
    alpha = margin * critical_alpha(spectrum, beta, gamma, tau)
    return SGDParams(alpha=alpha, beta=beta, gamma=gamma, tau1=1.0, tau2=tau, steps=steps, batch=batch)
