import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from sgdphaselab.config import SGDParams
from sgdphaselab.errors import InputError
from sgdphaselab.simulate import momentum_step, run_full_moments, run_generator, run_mc, run_noiseless
from sgdphaselab.spectrum import eigendecompose, gamma_for_batch, random_feature_problem


def test_momentum_step_full_batch_is_gradient_descent():
    problem = random_feature_problem(4, 6, seed=1)
    dw = np.tile(problem.deviation, (2, 1))
    v = np.zeros_like(dw)
    batches = np.tile(np.arange(6), (2, 1))
    new_dw, new_v = momentum_step(problem.features, dw, v, batches, alpha=0.3, beta=0.5)
    expected = problem.deviation - 0.3 * problem.hessian @ problem.deviation
    np.testing.assert_allclose(new_dw[0], expected, rtol=1e-12)
    np.testing.assert_allclose(new_v[1], expected - problem.deviation, rtol=1e-12, atol=1e-15)


def test_run_generator_streams_are_independent_of_order():
    a = run_generator(7, 3).standard_normal(4)
    run_generator(7, 2).standard_normal(100)
    b = run_generator(7, 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, run_generator(7, 4).standard_normal(4))


def test_mc_full_batch_is_deterministic():
    problem = random_feature_problem(5, 8, seed=2)
    params = SGDParams(alpha=0.4, beta=0.2, gamma=gamma_for_batch(8, 8), steps=40, batch=8)
    traj = run_mc(problem, params, runs=10, seed=1, threads=1)
    expected = run_noiseless(eigendecompose(problem)[0], params).losses
    np.testing.assert_allclose(traj.losses, expected, rtol=1e-10, atol=1e-14 * expected[0])
    np.testing.assert_allclose(traj.stderr, 0.0, atol=1e-12 * expected[0])
    assert traj.metadata["gamma_effective"] == 0.0


def test_mc_thread_count_does_not_change_result():
    problem = random_feature_problem(4, 10, seed=3)
    params = SGDParams(alpha=0.3, beta=0.3, steps=20, batch=3)
    one = run_mc(problem, params, runs=300, seed=42, threads=1)
    many = run_mc(problem, params, runs=300, seed=42, threads=8)
    assert np.array_equal(one.losses, many.losses)
    assert np.array_equal(one.stderr, many.stderr)


def test_mc_seed_changes_result():
    problem = random_feature_problem(4, 10, seed=3)
    params = SGDParams(alpha=0.3, steps=10, batch=2)
    a = run_mc(problem, params, runs=64, seed=1)
    b = run_mc(problem, params, runs=64, seed=2)
    assert a.losses[0] == b.losses[0]
    assert not np.array_equal(a.losses, b.losses)


def test_mc_rejects_bad_inputs():
    problem = random_feature_problem(3, 4, seed=0)
    with pytest.raises(InputError):
        run_mc(problem, SGDParams(alpha=0.1, steps=2, batch=5), runs=4)
    with pytest.raises(InputError):
        run_mc(problem, SGDParams(alpha=0.1, steps=2, batch=2), runs=0)


@pytest.mark.slow
def test_mc_mean_matches_exact_moments():
    problem = random_feature_problem(8, 16, seed=5)
    params = SGDParams(alpha=0.2, beta=0.3, gamma=gamma_for_batch(16, 4), steps=50, batch=4)
    exact = run_full_moments(problem, params)
    mc = run_mc(problem, params, runs=10_000, seed=2024)
    assert mc.diverged_at is None
    gap = np.abs(mc.losses - exact.losses)
    assert np.all(gap <= 4.0 * mc.stderr + 1e-12 * exact.losses[0])
