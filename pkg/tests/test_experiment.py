import math

import numpy as np
import pytest
from scipy import stats

from mcmcsel import rng as rngmod
from mcmcsel.divergence import DivergenceEstimate, DivergenceKind
from mcmcsel.errors import ConfigMismatch, ValidationError
from mcmcsel.experiment import (
    ComparisonSetup,
    DivergenceCurve,
    build_reference_sample,
    compare_strategies,
    divergence_curve,
    rank,
    score,
)
from mcmcsel.samplers import InitialLaw, StrategyConfig, run_chain
from mcmcsel.targets import GaussianSpec, TargetModel

STD = TargetModel(GaussianSpec(0.0, 1.0))
CHI2 = DivergenceKind("alpha", 2.0)


def fake_curve(sid, ns, values):
    kind = CHI2
    pts = [(n, DivergenceEstimate(v, kind, 1.0, (v, v), 0.95, 3, 100, 0, "known-f")) for n, v in zip(ns, values)]
    return DivergenceCurve(sid, kind, pts)


# -- reference sample --------------------------------------------------------------------

def test_direct_reference_is_iid_from_target():
    ref = build_reference_sample(STD, 3000, seed=1)
    assert ref.M == 3000 and ref.generator == "direct"
    assert stats.kstest(ref.points[:, 0], "norm").pvalue > 0.01


def test_unthinned_reference_is_the_chain_prefix():
    gen = StrategyConfig("RWMH", GaussianSpec(0.0, 1.0))
    ref = build_reference_sample(STD, 200, burn_in=0, n0=1, generator=gen, seed=2, x0=[0.5])
    path = run_chain(gen, STD, [0.5], 199, rngmod.generator(2, "reference"))
    assert np.array_equal(ref.points, path)


def test_burn_in_and_thinning_select_states():
    gen = StrategyConfig("RWMH", GaussianSpec(0.0, 1.0))
    ref = build_reference_sample(STD, 20, burn_in=7, n0=3, generator=gen, seed=3, x0=[0.0])
    path = run_chain(gen, STD, [0.0], 7 + 19 * 3, rngmod.generator(3, "reference"))
    assert np.array_equal(ref.points, path[7::3])


def test_thinned_reference_has_small_autocorrelation():
    gen = StrategyConfig("RWMH", GaussianSpec(0.0, 1.0))
    ref = build_reference_sample(STD, 2000, burn_in=1000, n0=50, generator=gen, seed=4, x0=[0.0])
    x = ref.points[:, 0]
    assert abs(np.corrcoef(x[:-1], x[1:])[0, 1]) < 0.1


def test_reference_validation():
    with pytest.raises(ValidationError):
        build_reference_sample(STD, 1)
    with pytest.raises(ValidationError):
        build_reference_sample(STD, 10, generator=StrategyConfig("RWMH", GaussianSpec(0.0, 1.0)))


# -- curves -----------------------------------------------------------------------------

def test_exact_sampler_curve_is_null():
    exact = StrategyConfig("IS", GaussianSpec(0.0, 1.0), id="exact")
    init = InitialLaw(law=GaussianSpec(0.0, 1.0))
    for kind in (CHI2, DivergenceKind("tsallis", 0.99), DivergenceKind("renyi", 0.3)):
        curve = divergence_curve(exact, STD, kind, [0, 1, 5], 1000, seed=5, init=init)
        for _, e in curve.points:
            assert abs(e.value) <= 3 * e.half_width


def test_good_independence_proposal_converges_by_ten():
    cfg = StrategyConfig("IS", GaussianSpec(0.0, 3.0))
    vals = [divergence_curve(cfg, STD, CHI2, [10], 1000, seed=s, init=InitialLaw.point_mass([0.0]),
                             jitter=True).values[0] for s in range(20)]
    assert np.median(vals) < 0.05


def test_identical_seeds_give_identical_curves():
    cfg = StrategyConfig("RWMH", GaussianSpec(0.0, 2.0))
    a = divergence_curve(cfg, STD, CHI2, [1, 4], 300, seed=6, init=InitialLaw.point_mass([1.0]), jitter=True)
    b = divergence_curve(cfg, STD, CHI2, [1, 4], 300, seed=6, init=InitialLaw.point_mass([1.0]), jitter=True)
    assert np.all(np.isfinite(a.values))
    assert np.array_equal(a.values, b.values)
    assert [e.ci for _, e in a.points] == [e.ci for _, e in b.points]


def test_curve_accessors():
    c = fake_curve("s", [0, 2, 5], [3.0, 1.0, 0.5])
    assert list(c.iterations) == [0, 2, 5]
    assert c.at(2).value == 1.0
    with pytest.raises(KeyError):
        c.at(3)


def test_duplicates_without_jitter_are_recorded_as_nan(caplog):
    # rejected moves leave several chains at the common start point
    cfg = StrategyConfig("RWMH", GaussianSpec(0.0, 2.0))
    c = divergence_curve(cfg, STD, CHI2, [1], 300, seed=6, init=InitialLaw.point_mass([1.0]))
    assert math.isnan(c.values[0])
    assert "duplicate" in caplog.text


# -- ranking ---------------------------------------------------------------------------------

def test_scores():
    c = fake_curve("s", [0, 2, 4], [4.0, 2.0, 1.0])
    assert score(c, "final-value") == 1.0
    assert score(c, "area-under-curve") == pytest.approx(0.5 * (4 + 2) * 2 + 0.5 * (2 + 1) * 2)
    assert score(c, "first-crossing", 2.5) == 2.0
    assert score(c, "first-crossing", 0.5) == math.inf
    with pytest.raises(ValidationError):
        score(c, "first-crossing")
    with pytest.raises(ValidationError):
        score(c, "median")


def test_nan_scores_lose():
    good = fake_curve("z", [0, 1], [1.0, 0.9])
    bad = fake_curve("a", [0, 1], [1.0, math.nan])
    winner, scores = rank([good, bad], "final-value")
    assert winner == "z" and scores["a"] == math.inf
    assert rank([good, bad], "area-under-curve")[0] == "z"


def test_tie_broken_by_id():
    a = fake_curve("beta", [0, 1], [1.0, 0.5])
    b = fake_curve("alpha", [0, 1], [1.0, 0.5])
    assert rank([a, b], "final-value")[0] == "alpha"


def test_identical_copy_ties_and_is_broken_lexicographically():
    shared = ComparisonSetup(STD, CHI2, [0, 2, 4], 400, InitialLaw.point_mass([0.0]), seed=7, jitter=True)
    one = StrategyConfig("RWMH", GaussianSpec(0.0, 2.0), id="rw-b", seed_label="rw")
    two = StrategyConfig("RWMH", GaussianSpec(0.0, 2.0), id="rw-a", seed_label="rw")
    rep = compare_strategies([one, two], shared)
    assert np.array_equal(rep.curves[0].values, rep.curves[1].values)
    assert rep.winner == "rw-a"


def test_comparison_needs_two():
    shared = ComparisonSetup(STD, CHI2, [1], 100, InitialLaw.point_mass([0.0]))
    with pytest.raises(ConfigMismatch):
        compare_strategies([StrategyConfig("RWMH", GaussianSpec(0.0, 1.0))], shared)


# -- recipes -------------------------------------------------------------------------------------

def test_recipe_one_winner(recipe_report):
    assert recipe_report(1, 0).winner == "IS-N(0,3)"


def test_recipe_four_winner(recipe_report):
    assert recipe_report(4, 0).winner == "Gibbs"


@pytest.mark.parametrize("figure", [1, 2, 3, 4, 5])
def test_shared_origin(recipe_report, figure):
    rep = recipe_report(figure, 0)
    first = [c.points[0] for c in rep.curves]
    assert all(n == 0 for n, _ in first)
    assert len({e.value for _, e in first}) == 1


@pytest.mark.parametrize("figure", [1, 2, 3])
def test_convergent_strategies_decrease(recipe_report, figure):
    reps = [recipe_report(figure, s) for s in range(20)]
    for j, sid in enumerate(c.strategy_id for c in reps[0].curves):
        first = np.median([r.curves[j].values[0] for r in reps])
        last = np.median([r.curves[j].values[-1] for r in reps])
        assert last < first, sid


@pytest.mark.parametrize("figure,winner", [(1, "IS-N(0,3)"), (2, "IS-N(-2.5,15)"), (4, "Gibbs"), (5, "MWG")])
def test_winner_stable_across_seeds(recipe_report, figure, winner):
    assert [recipe_report(figure, s).winner for s in range(10)] == [winner] * 10


def test_doubling_reference_size_moves_points_less_than_ci_width():
    cfg = StrategyConfig("RWMH", GaussianSpec(0.0, 2.0))
    kind = DivergenceKind("alpha", 0.5)
    ratios = []
    for s in range(20):
        curves = []
        for M in (1000, 2000):
            ref = build_reference_sample(STD, M, seed=100 + s)
            curves.append(divergence_curve(cfg, STD, kind, [1, 3, 10], 1000, ref, seed=s,
                                           init=InitialLaw.point_mass([2.0]), jitter=True))
        ratios.append([abs(a.value - b.value) / (b.ci[1] - b.ci[0])
                       for (_, a), (_, b) in zip(curves[0].points, curves[1].points)])
    assert np.all(np.median(ratios, axis=0) < 1.0)
