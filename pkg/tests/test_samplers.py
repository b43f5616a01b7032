import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from mcmcsel.errors import ConfigMismatch, OutOfSupport, ValidationError
from mcmcsel.samplers import (
    AMParams,
    ChainState,
    InitialLaw,
    MWGParams,
    StrategyConfig,
    am_covariance,
    am_step,
    gibbs_step,
    is_step,
    mwg_step,
    run_chain,
    run_ensemble,
    rwmh_step,
)
from mcmcsel.targets import (
    ConjugatePosteriorSpec,
    GaussianSpec,
    TargetModel,
    UnnormalizedSpec,
    oscillating_log_density,
)

STD = TargetModel(GaussianSpec(0.0, 1.0))
OSC = TargetModel(UnnormalizedSpec(oscillating_log_density, ((-4.0, 4.0),)))


def posterior():
    return TargetModel(ConjugatePosteriorSpec(np.array([1.0, 2.0, 0.5, 1.5]), 0.0, 10.0, 2.0, 2.0))


def start(x, target, n=1, history=False):
    return ChainState.start(np.tile(np.atleast_1d(x), (n, 1)), target, track_history=history)


# -- independence sampler -----------------------------------------------------

def test_is_with_target_as_proposal_always_accepts():
    state = start(0.3, STD, n=500)
    rng = np.random.default_rng(0)
    for _ in range(20):
        is_step(state, STD, GaussianSpec(0.0, 1.0), rng)
    assert np.all(state.acceptance_rate() == 1.0)


def test_is_with_target_as_proposal_is_exact_after_one_step():
    snaps = run_ensemble(StrategyConfig("IS", GaussianSpec(0.0, 1.0)), STD, InitialLaw.point_mass([5.0]), [1], 3000, 4)
    assert stats.kstest(snaps[0].points[:, 0], "norm").pvalue > 0.01


def test_is_acceptance_strictly_between_zero_and_one():
    state = start(0.0, STD, n=2000)
    rng = np.random.default_rng(1)
    for _ in range(10):
        is_step(state, STD, GaussianSpec(0.0, 3.0), rng)
    rate = state.accepted.sum() / (state.n * state.t)
    assert 0.0 < rate < 1.0


def test_is_from_out_of_support_state_raises():
    target = posterior()
    state = start([1.0, 1.0], target)
    state.x[0, 1] = -1.0
    state.logp[0] = -np.inf
    with pytest.raises(OutOfSupport):
        is_step(state, target, GaussianSpec(np.zeros(2), np.eye(2)), np.random.default_rng(0))


# -- random walk --------------------------------------------------------------

def test_rwmh_stationary_mean():
    path = run_chain(StrategyConfig("RWMH", GaussianSpec(0.0, 2.0)), STD, [0.0], 20000, np.random.default_rng(2))
    # effective sample size is a few thousand here; 0.1 is several standard errors
    assert abs(path[1000:].mean()) < 0.1
    assert abs(path[1000:].var() - 1.0) < 0.15


def test_rwmh_never_accepts_nonpositive_variance():
    target = posterior()
    path = run_chain(StrategyConfig("RWMH", GaussianSpec(np.zeros(2), np.diag([4.0, 4.0]))),
                     target, [1.0, 0.5], 3000, np.random.default_rng(3))
    assert np.all(path[:, 1] > 0)


def test_rwmh_stays_in_bounded_support():
    path = run_chain(StrategyConfig("RWMH", GaussianSpec(0.0, 5.0)), OSC, [0.0], 3000, np.random.default_rng(4))
    assert np.all(np.abs(path) <= 4.0)


def test_tiny_increment_almost_always_accepts():
    state = start(0.0, STD, n=1000)
    rng = np.random.default_rng(5)
    for _ in range(5):
        rwmh_step(state, STD, GaussianSpec(0.0, 1e-8), rng)
    assert state.accepted.sum() / (state.n * state.t) > 0.99


# -- adaptive Metropolis --------------------------------------------------------

def _history_state(values):
    st = ChainState.start(np.array([[values[0]]]), STD, track_history=True)
    for v in values[1:]:
        st.x = np.array([[v]])
        st.record()
    return st


def test_am_uses_initial_covariance_during_warmup():
    cfg = StrategyConfig("AM", GaussianSpec(0.0, 5.0), am=AMParams(t0=15))
    st = _history_state([0.0, 1.0])
    for t in (1, 15):
        assert am_covariance(st, cfg, t)[0, 0, 0] == 5.0


def test_am_adapted_covariance_example():
    # history with unbiased variance exactly 5, d = 1 so S_d = 5.76
    values = [-math.sqrt(5.0), math.sqrt(5.0), 0.0]
    assert np.var(values, ddof=1) == pytest.approx(5.0)
    cfg = StrategyConfig("AM", GaussianSpec(0.0, 1.0), am=AMParams(t0=2))
    st = _history_state(values)
    assert am_covariance(st, cfg, 3)[0, 0, 0] == pytest.approx(5.76 * (5 + 1e-6), rel=1e-12)


def test_am_identical_history_gives_regularizer_only():
    cfg = StrategyConfig("AM", GaussianSpec(np.zeros(2), np.eye(2)), am=AMParams(t0=2))
    st = ChainState.start(np.array([[0.5, 0.5]]), TargetModel(GaussianSpec(np.zeros(2), np.eye(2))), track_history=True)
    for _ in range(4):
        st.record()
    c = am_covariance(st, cfg, 5)[0]
    assert np.allclose(c, (2.4 ** 2 / 2) * 1e-6 * np.eye(2), atol=1e-18)


def test_am_running_covariance_matches_batch():
    target = TargetModel(GaussianSpec(np.zeros(2), np.array([[2.0, 0.5], [0.5, 1.0]])))
    cfg = StrategyConfig("AM", GaussianSpec(np.zeros(2), np.eye(2)), am=AMParams(t0=5))
    state = ChainState.start(np.zeros((1, 2)), target, track_history=True)
    hist = [state.x[0].copy()]
    rng = np.random.default_rng(6)
    for _ in range(400):
        am_step(state, target, cfg, rng)
        hist.append(state.x[0].copy())
    batch = np.cov(np.array(hist).T, ddof=1)
    assert np.allclose(state.cov[0], batch, atol=1e-10)


def test_am_requires_history():
    state = start(0.0, STD)
    with pytest.raises(ValidationError):
        am_step(state, STD, StrategyConfig("AM", GaussianSpec(0.0, 1.0)), np.random.default_rng(0))


# -- Gibbs and Metropolis-within-Gibbs ------------------------------------------

def test_gibbs_always_accepts():
    target = posterior()
    state = start([1.0, 1.0], target, n=200)
    rng = np.random.default_rng(7)
    for _ in range(10):
        gibbs_step(state, target, rng)
    assert np.all(state.acceptance_rate() == 1.0)


def test_gibbs_marginal_mean_matches_quadrature():
    target = posterior()
    spec = target.spec

    def dens(s2, m):
        return math.exp(spec.logpdf(np.array([[m, s2]]))[0])

    z, _ = integrate.dblquad(dens, -10, 12, 1e-6, 60)
    mm, _ = integrate.dblquad(lambda s2, m: m * dens(s2, m), -10, 12, 1e-6, 60)
    exact_mean_m = mm / z

    snaps = run_ensemble(StrategyConfig("Gibbs"), target, InitialLaw.point_mass([1.0, 1.0]), [30], 4000, 8)
    ms = snaps[0].points[:, 0]
    assert abs(ms.mean() - exact_mean_m) < 4 * ms.std() / math.sqrt(ms.size)


def test_gibbs_rejects_nonpositive_variance_state():
    target = posterior()
    state = start([1.0, 1.0], target)
    state.x[0, 1] = 0.0
    with pytest.raises(OutOfSupport):
        gibbs_step(state, target, np.random.default_rng(0))


def test_mwg_selection_moves_only_the_chosen_coordinate():
    target = posterior()
    cfg = StrategyConfig("MWG", GaussianSpec(np.zeros(2), np.diag([1.0, 1.0])), mwg=MWGParams((1.0, 0.0)))
    state = start([1.0, 1.0], target, n=300)
    rng = np.random.default_rng(9)
    for _ in range(20):
        mwg_step(state, target, cfg, rng)
    assert np.all(state.x[:, 1] == 1.0)
    assert np.unique(state.x[:, 0]).size > 100


def test_mwg_systematic_scan_moves_both():
    target = posterior()
    cfg = StrategyConfig("MWG", GaussianSpec(np.zeros(2), np.diag([0.5, 0.5])),
                         mwg=MWGParams((0.5, 0.5), scan="systematic"))
    state = start([1.0, 1.0], target, n=300)
    rng = np.random.default_rng(10)
    for _ in range(10):
        mwg_step(state, target, cfg, rng)
    assert np.mean(state.x[:, 0] != 1.0) > 0.5
    assert np.mean(state.x[:, 1] != 1.0) > 0.5


def test_mwg_needs_two_dimensions():
    with pytest.raises(ConfigMismatch):
        run_ensemble(StrategyConfig("MWG", GaussianSpec(0.0, 1.0)), STD, InitialLaw.point_mass([0.0]), [1], 10, 0)


# -- configuration ----------------------------------------------------------------

def test_invalid_strategy_configs():
    with pytest.raises(ValidationError):
        StrategyConfig("HMC", GaussianSpec(0.0, 1.0))
    with pytest.raises(ValidationError):
        StrategyConfig("RWMH")
    with pytest.raises(ValidationError):
        MWGParams((0.7, 0.7))
    with pytest.raises(ValidationError):
        StrategyConfig("RWMH", GaussianSpec(0.0, 1.0), am=AMParams())


def test_config_mismatch():
    with pytest.raises(ConfigMismatch):
        run_ensemble(StrategyConfig("Gibbs"), STD, InitialLaw.point_mass([0.0]), [1], 10, 0)
    with pytest.raises(ConfigMismatch):
        run_ensemble(StrategyConfig("RWMH", GaussianSpec(np.zeros(2), np.eye(2))), STD,
                     InitialLaw.point_mass([0.0]), [1], 10, 0)
    with pytest.raises(ConfigMismatch):
        run_ensemble(StrategyConfig("RWMH", GaussianSpec(0.0, 1.0)), STD,
                     InitialLaw.point_mass([0.0, 0.0]), [1], 10, 0)


@pytest.mark.parametrize("cps", [[], [2, 1], [-1, 3], [1, 1]])
def test_bad_checkpoints(cps):
    with pytest.raises(ValidationError):
        run_ensemble(StrategyConfig("RWMH", GaussianSpec(0.0, 1.0)), STD, InitialLaw.point_mass([0.0]), cps, 10, 0)


# -- ensemble runner --------------------------------------------------------------

def test_checkpoint_zero_is_the_point_mass():
    snaps = run_ensemble(StrategyConfig("RWMH", GaussianSpec(0.0, 1.0)), STD, InitialLaw.point_mass([2.5]), [0, 3], 50, 0)
    assert np.all(snaps[0].points == 2.5)
    assert snaps[0].points.shape == (50, 1)
    assert [s.iteration for s in snaps] == [0, 3]


def test_initial_law_draws_are_shared_across_strategies():
    init = InitialLaw(law=GaussianSpec(0.0, 4.0))
    a = run_ensemble(StrategyConfig("RWMH", GaussianSpec(0.0, 1.0)), STD, init, [0], 100, 3)
    b = run_ensemble(StrategyConfig("IS", GaussianSpec(0.0, 2.0)), STD, init, [0], 100, 3)
    assert np.array_equal(a[0].points, b[0].points)


def test_same_seed_is_reproducible_and_different_seed_differs():
    cfg = StrategyConfig("RWMH", GaussianSpec(0.0, 1.0))
    init = InitialLaw.point_mass([0.0])
    a = run_ensemble(cfg, STD, init, [5], 300, 11)[0].points
    b = run_ensemble(cfg, STD, init, [5], 300, 11)[0].points
    c = run_ensemble(cfg, STD, init, [5], 300, 12)[0].points
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("kind", ["RWMH", "AM"])
def test_output_independent_of_thread_count(kind):
    cfg = StrategyConfig(kind, GaussianSpec(0.0, 1.0))
    init = InitialLaw.point_mass([0.0])
    one = run_ensemble(cfg, STD, init, [3, 20], 700, 13, threads=1)
    four = run_ensemble(cfg, STD, init, [3, 20], 700, 13, threads=4)
    for s1, s4 in zip(one, four):
        assert np.array_equal(s1.points, s4.points)


def test_chain_prefix_does_not_depend_on_ensemble_size():
    cfg = StrategyConfig("RWMH", GaussianSpec(0.0, 1.0))
    init = InitialLaw.point_mass([0.0])
    small = run_ensemble(cfg, STD, init, [7], 100, 14)[0].points
    big = run_ensemble(cfg, STD, init, [7], 600, 14)[0].points
    assert np.array_equal(small, big[:100])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 20.0))
def test_rwmh_keeps_states_finite(seed, var):
    path = run_chain(StrategyConfig("RWMH", GaussianSpec(0.0, var)), OSC, [0.0], 50, np.random.default_rng(seed))
    assert np.all(np.isfinite(path))
    assert np.all(np.abs(path) <= 4.0)
