import math
import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from sgdphaselab.asymptotics import (
    PhaseLabel,
    approx_loss,
    blowup_time,
    budget_params,
    classify_phase,
    early_asymptote,
    gamma_fn,
    loss_asymptote,
    momentum_slope,
    numerical_alpha_opt,
    optimal_alpha,
    solve_a_star,
    transition_time,
    xi_criterion,
)
from sgdphaselab.config import PowerLawSpec, SGDParams
from sgdphaselab.errors import BoundaryCaseError, NotApplicableError, NotConvergentError
from sgdphaselab.genfunc import GenFuncContext, solve_divergence
from sgdphaselab.simulate import run_noiseless, run_se
from sgdphaselab.spectrum import PowerLawFit, Spectrum, build_power_law


def power_law(nu, kappa, modes):
    spec = PowerLawSpec(nu=nu, kappa=kappa, modes=modes)
    return build_power_law(spec), PowerLawFit.from_spec(spec)


@pytest.mark.parametrize(
    "nu,zeta,expected",
    [
        (1.5, 0.25, PhaseLabel.SIGNAL_DOMINATED),
        (1.5, 2.0, PhaseLabel.NOISE_DOMINATED),
        (1.5, 4.0 / 3.0, PhaseLabel.BOUNDARY),
        (0.75, 0.5, PhaseLabel.EVENTUAL_DIVERGENCE),
        (1.0, 0.5, PhaseLabel.EVENTUAL_DIVERGENCE),
        (0.4, 1.0, PhaseLabel.IMMEDIATE_DIVERGENCE),
    ],
)
def test_classify_phase(nu, zeta, expected):
    label = classify_phase(nu, zeta)
    assert label is expected
    assert label.divergent == (nu <= 1.0)


def test_classify_phase_rejects_non_positive():
    with pytest.raises(ValueError):
        classify_phase(0.0, 1.0)
    with pytest.raises(ValueError):
        classify_phase(1.5, -0.1)


@pytest.mark.parametrize(
    "x,expected",
    [
        (1.0, 1.0),
        (2.0, 1.0),
        (3.0, 2.0),
        (5.0, 24.0),
        (0.5, 1.7724538509055159),
        (1.5, 0.8862269254527580),
        (2.5, 1.3293403881791370),
        (1.0 / 3.0, 2.6789385347077476),
        (2.0 / 3.0, 1.3541179394264005),
        (0.25, 3.6256099082219083),
        (-0.5, -3.5449077018110318),
        (-1.5, 2.3632718012073548),
    ],
)
def test_gamma_fn_table(x, expected):
    assert gamma_fn(x) == pytest.approx(expected, rel=1e-12)


def test_gamma_fn_poles():
    for pole in (0.0, -1.0, -2.0):
        with pytest.raises(BoundaryCaseError):
            gamma_fn(pole)


def test_asymptote_exponents():
    spectrum, fit = power_law(1.5, 3.0, 200)
    ctx = GenFuncContext(spectrum, 0.3, 0.0, 0.1)
    report = loss_asymptote(ctx, fit)
    assert report.phase is PhaseLabel.NOISE_DOMINATED
    assert report.exponent == pytest.approx(-4.0 / 3.0)
    assert report.constant == report.c_noise
    assert report.t_trans is not None and report.t_trans > 0

    spectrum, fit = power_law(1.5, 0.375, 200)
    report = loss_asymptote(GenFuncContext(spectrum, 0.3, 0.0, 0.1), fit)
    assert report.phase is PhaseLabel.SIGNAL_DOMINATED
    assert report.exponent == pytest.approx(-0.25)
    assert report.constant == report.c_signal
    assert report.t_trans is None
    assert report.recommendation == "positive momentum improves"


def test_asymptote_refuses_divergent_and_boundary():
    spectrum, fit = power_law(0.75, 0.375, 200)
    with pytest.raises(NotConvergentError):
        loss_asymptote(GenFuncContext(spectrum, 0.1, 0.0, 1.0), fit)
    spectrum, fit = power_law(1.5, 2.0, 200)
    with pytest.raises(BoundaryCaseError):
        loss_asymptote(GenFuncContext(spectrum, 0.1, 0.0, 1.0), fit)
    spectrum, fit = power_law(1.5, 3.0, 200)
    with pytest.raises(NotConvergentError, match="U\\(1\\)"):
        loss_asymptote(GenFuncContext(spectrum, 1.9, 0.0, 1.0), fit)


def test_signal_constant_depends_on_alpha_eff_and_U1_only():
    spectrum, fit = power_law(1.5, 0.375, 300)
    t = 1e3
    for alpha, beta in [(0.2, 0.0), (0.1, 0.5), (0.3, -0.5)]:
        ctx = GenFuncContext(spectrum, alpha, beta, 0.2)
        report = loss_asymptote(ctx, fit)
        rescaled = report.c_signal * t ** (-fit.zeta) * (1.0 - report.U1)
        assert rescaled == pytest.approx(float(early_asymptote(fit, ctx.alpha_eff, t)), rel=1e-12)


def test_optimal_alpha_closed_forms():
    spectrum = Spectrum([0.5, 0.3, 0.2], [1.0, 1.0, 1.0])
    alpha, alpha_max = optimal_alpha(spectrum, PhaseLabel.NOISE_DOMINATED, nu=1.5)
    assert alpha == pytest.approx(2.0 / 7.0)
    assert alpha_max == pytest.approx(2.0)
    alpha, _ = optimal_alpha(spectrum, PhaseLabel.SIGNAL_DOMINATED, zeta=0.25)
    assert alpha == pytest.approx(0.4)
    assert alpha < alpha_max
    with pytest.raises(NotApplicableError):
        optimal_alpha(spectrum, PhaseLabel.BOUNDARY, nu=1.5, zeta=4.0 / 3.0)


@pytest.mark.parametrize("nu,kappa", [(1.5, 3.0), (1.5, 0.375), (2.5, 6.0)])
def test_numerical_alpha_opt_matches_closed_form(nu, kappa):
    spectrum, fit = power_law(nu, kappa, 500)
    phase = classify_phase(fit.nu, fit.zeta)
    expected, _ = optimal_alpha(spectrum, phase, fit.nu, fit.zeta)
    ctx = GenFuncContext(spectrum, expected, 0.0, 1.0)
    assert numerical_alpha_opt(ctx, fit) == pytest.approx(expected, rel=1e-5)


def test_approx_loss_is_infinite_outside_convergence():
    spectrum, fit = power_law(1.5, 3.0, 200)
    assert math.isinf(approx_loss(GenFuncContext(spectrum, 1.9, 0.0, 1.0), fit, 10.0))
    spectrum, fit = power_law(0.75, 0.375, 200)
    assert math.isinf(approx_loss(GenFuncContext(spectrum, 0.01, 0.0, 1.0), fit, 10.0))


def test_xi_for_scaled_identity_and_single_mode():
    spectrum = Spectrum([0.5] * 4, [1.0, 2.0, 3.0, 4.0])
    xi, text = xi_criterion(spectrum, nu=1.7)
    assert xi == pytest.approx(4 * 0.25 * 10.0)
    assert text == "negative momentum improves at alpha_opt"
    single = Spectrum([2.0], [3.0])
    assert xi_criterion(single, nu=2.5)[0] == pytest.approx(12.0)
    assert xi_criterion(single, nu=2.5, phase=PhaseLabel.SIGNAL_DOMINATED)[1] == "positive momentum improves"


def test_xi_negative_recommends_positive_momentum():
    spectrum = Spectrum([1.0, 0.01], [0.0, 1.0])
    xi, text = xi_criterion(spectrum, nu=3.0)
    assert xi < 0
    assert text == "positive momentum improves"


@pytest.mark.parametrize("nu,kappa", [(1.5, 2.5), (1.5, 5.5), (2.5, 4.5), (2.5, 6.0)])
def test_momentum_slope_sign_follows_xi(nu, kappa):
    spectrum, fit = power_law(nu, kappa, 1000)
    phase = classify_phase(fit.nu, fit.zeta)
    assert phase is PhaseLabel.NOISE_DOMINATED
    alpha, _ = optimal_alpha(spectrum, phase, fit.nu, fit.zeta)
    ctx = GenFuncContext(spectrum, alpha, 0.0, 1.0)
    xi, _ = xi_criterion(spectrum, nu=fit.nu)
    slope = momentum_slope(ctx, fit)
    assert np.sign(slope) == np.sign(xi)


def test_momentum_slope_negative_when_xi_negative():
    # power-law tail under a dominant leading mode that starts at its optimum
    spectrum, fit = power_law(2.0, 3.5, 500)
    lambdas = spectrum.lambdas.copy()
    c0 = spectrum.c0.copy()
    lambdas[0], c0[0] = 4.0, 0.0
    spiked = Spectrum(lambdas, c0)
    assert classify_phase(fit.nu, fit.zeta) is PhaseLabel.NOISE_DOMINATED
    xi, text = xi_criterion(spiked, nu=fit.nu)
    assert xi < 0
    assert text == "positive momentum improves"
    alpha, _ = optimal_alpha(spiked, PhaseLabel.NOISE_DOMINATED, fit.nu, fit.zeta)
    slope = momentum_slope(GenFuncContext(spiked, alpha, 0.0, 1.0), fit)
    assert slope < 0


def test_momentum_slope_tracks_xi_in_closed_form():
    # at alpha_opt, beta = 0, gamma = tau = 1: dlog L/dbeta = alpha * Xi / (nu Tr[H] Tr[C0])
    spectrum = Spectrum([3.0, 0.5, 0.1, 0.02], [0.0, 0.4, 2.0, 5.0])
    fit = PowerLawFit(Lambda=1.0, nu=2.0, K=1.0, kappa=4.0)
    alpha, _ = optimal_alpha(spectrum, PhaseLabel.NOISE_DOMINATED, nu=2.0)
    ctx = GenFuncContext(spectrum, alpha, 0.0, 1.0)
    xi, _ = xi_criterion(spectrum, nu=2.0)
    expected = alpha * xi / (2.0 * spectrum.trace() * float(np.sum(spectrum.c0)))
    slope = momentum_slope(ctx, fit, h=1e-5) / approx_loss(ctx, fit, 1.0)
    assert xi < 0
    assert slope == pytest.approx(expected, rel=1e-4)


def test_momentum_helps_in_signal_phase():
    spectrum, fit = power_law(1.5, 0.375, 1000)
    alpha, _ = optimal_alpha(spectrum, PhaseLabel.SIGNAL_DOMINATED, fit.nu, fit.zeta)
    assert momentum_slope(GenFuncContext(spectrum, alpha, 0.0, 1.0), fit) < 0


def test_transition_time():
    spectrum, fit = power_law(1.5, 3.0, 1000)
    report = loss_asymptote(GenFuncContext(spectrum, 0.5, 0.0, 0.002), fit)
    equal = report.model_copy(update={"c_signal": 2.0, "c_noise": 2.0})
    assert transition_time(equal) == pytest.approx(1.0)

    # noise constant is linear in gamma for small gamma
    halved = loss_asymptote(GenFuncContext(spectrum, 0.5, 0.0, 0.001), fit)
    power = fit.zeta - 2.0 + 1.0 / fit.nu
    assert halved.t_trans / report.t_trans == pytest.approx(2.0 ** (1.0 / power), rel=0.01)

    signal_spectrum, signal_fit = power_law(1.5, 0.375, 200)
    signal = loss_asymptote(GenFuncContext(signal_spectrum, 0.5, 0.0, 0.01), signal_fit)
    with pytest.raises(NotApplicableError):
        transition_time(signal)


def test_solve_a_star():
    a = solve_a_star(0.75, 0.5)
    assert 0.01 < a < 0.1
    coef = (1.0 / 0.75 - 1.0) / math.gamma(0.5)
    assert abs(coef * a ** -0.5 - math.exp(a)) <= 1e-10


def test_blowup_time_requires_plain_sgd():
    spectrum, fit = power_law(0.75, 0.375, 200)
    with pytest.raises(NotApplicableError):
        blowup_time(GenFuncContext(spectrum, 0.2, 0.1, 1.0), fit)
    with pytest.raises(NotApplicableError):
        blowup_time(GenFuncContext(spectrum, 0.2, 0.0, 0.5), fit)
    spectrum, fit = power_law(1.5, 3.0, 200)
    with pytest.raises(NotApplicableError):
        blowup_time(GenFuncContext(spectrum, 0.2, 0.0, 1.0), fit)


def test_blowup_report_fields():
    spectrum, fit = power_law(0.75, 0.375, 2000)
    report = blowup_time(GenFuncContext(spectrum, 0.2, 0.0, 1.0), fit)
    assert report.a_residual <= 1e-10
    assert report.t_blowup == pytest.approx(report.a_star * report.t_div)
    assert report.epsilon_measured == pytest.approx(1.0 - report.r_L)


def test_divergence_rate_matches_radius():
    spectrum, _ = power_law(0.75, 0.375, 2000)
    ctx = GenFuncContext(spectrum, 0.2, 0.0, 1.0)
    div = solve_divergence(ctx)
    params = SGDParams(alpha=0.2, gamma=1.0, steps=int(math.ceil(10 * div.t_div)) + 1, batch=1)
    traj = run_se(spectrum, params)
    t = np.arange(int(math.ceil(5 * div.t_div)), int(math.floor(10 * div.t_div)) + 1)
    assert t.size >= 3
    assert np.all(np.isfinite(traj.losses[t]))
    rate = np.polyfit(t, np.log(traj.losses[t]), 1)[0]
    assert rate == pytest.approx(-math.log(div.r_L), rel=0.05)


def test_signal_phase_asymptote_matches_se():
    # T = 1e4: at M = 4000 the last decade is already within 2% of the asymptote
    spectrum, fit = power_law(1.5, 0.375, 4000)
    params = SGDParams(alpha=0.5, gamma=0.1, steps=10_000, batch=10)
    report = loss_asymptote(GenFuncContext.from_params(spectrum, params), fit)
    traj = run_se(spectrum, params)
    assert traj.diverged_at is None
    t = np.unique(np.logspace(3, 4, 40).astype(int))
    slope = np.polyfit(np.log(t), np.log(traj.losses[t]), 1)[0]
    assert slope == pytest.approx(report.exponent, abs=0.05)
    level = traj.losses[t[-1]] / (report.c_signal * t[-1] ** report.exponent)
    assert level == pytest.approx(1.0, abs=0.2)


@pytest.mark.slow
def test_noise_phase_asymptote_matches_se():
    spectrum, fit = power_law(1.5, 3.0, 20_000)
    params = SGDParams(alpha=0.5, gamma=0.1, steps=100_000, batch=10)
    report = loss_asymptote(GenFuncContext.from_params(spectrum, params), fit)
    traj = run_se(spectrum, params)
    assert traj.diverged_at is None
    t = np.unique(np.logspace(4, 5, 40).astype(int))
    noise = traj.losses[t] - report.c_signal * t.astype(float) ** (-fit.zeta)
    slope = np.polyfit(np.log(t), np.log(noise), 1)[0]
    assert slope == pytest.approx(-4.0 / 3.0, abs=0.05)
    level = np.median(noise * t ** (4.0 / 3.0)) / report.c_noise
    assert level == pytest.approx(1.0, abs=0.2)


@pytest.mark.slow
def test_blowup_crossover_near_predicted_time():
    spectrum, fit = power_law(0.75, 0.375, 100_000)
    report = blowup_time(GenFuncContext(spectrum, 0.07, 0.0, 1.0), fit)
    steps = int(math.ceil(3 * report.t_div)) + 1
    traj = run_se(spectrum, SGDParams(alpha=0.07, gamma=1.0, steps=steps, batch=1))
    assert np.all(np.isfinite(traj.losses))

    # exponential branch fitted well past the crossover, extrapolated back to the early power law
    late = np.arange(int(1.5 * report.t_div), steps + 1)
    rate, offset = np.polyfit(late, np.log(traj.losses[late]), 1)
    assert rate == pytest.approx(1.0 / report.t_div, rel=0.1)
    t = np.arange(1, steps + 1)
    reached = rate * t + offset >= np.log(early_asymptote(fit, 0.07, t))
    assert reached.any() and not reached[0]
    t_cross = int(t[np.argmax(reached)])
    assert 0.5 <= t_cross / report.t_blowup <= 2.0, (t_cross, report.t_blowup)


@pytest.mark.slow
def test_blowup_scale_gap_shrinks_with_alpha():
    spectrum, fit = power_law(0.75, 0.375, 1_000_000)
    gaps = []
    for alpha in (0.4, 0.2, 0.1):
        report = blowup_time(GenFuncContext(spectrum, alpha, 0.0, 1.0), fit)
        gaps.append(abs(report.epsilon_star / report.epsilon_measured - 1.0))
    assert np.all(np.diff(gaps) < 0), gaps


@pytest.mark.slow
def test_budget_curves_collapse_across_batch_sizes():
    spectrum, _ = power_law(1.5, 0.375, 2000)
    budgets = np.logspace(5, 6, 6)
    curves = []
    for b in (8, 16, 32):
        params = budget_params(spectrum, b, 0.99, steps=1_000_000 // b + 1)
        traj = run_se(spectrum, params)
        assert traj.diverged_at is None
        curves.append(traj.losses[np.rint(budgets / b).astype(int)])
    curves = np.array(curves)
    spread = curves.max(axis=0) / curves.min(axis=0) - 1.0
    assert np.all(spread <= 0.15)


def test_budget_params_validation():
    spectrum, _ = power_law(1.5, 0.375, 100)
    params = budget_params(spectrum, 4, 0.9, margin=0.25, steps=10)
    assert params.gamma == 0.25
    assert params.batch == 4
    with pytest.raises(ValueError):
        budget_params(spectrum, 4, 0.9, margin=1.0)


@pytest.mark.slow
def test_noiseless_stability_grid_matches_bound():
    spectrum = Spectrum([1.0, 0.5, 0.25, 0.1], [1.0, 1.0, 1.0, 1.0])
    alphas = np.linspace(0.05, 4.0, 30)
    step = alphas[1] - alphas[0]
    for beta in np.linspace(-0.9, 0.9, 30):
        bound = 2.0 * (1.0 + beta)
        for alpha in alphas:
            traj = run_noiseless(spectrum, SGDParams(alpha=float(alpha), beta=float(beta), steps=1000))
            if abs(alpha - bound) > step:
                assert traj.converged() == (alpha < bound), (alpha, beta)
