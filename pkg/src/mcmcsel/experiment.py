"""Strategy comparison: reference samples, divergence curves, rankings, recipes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .divergence import DivergenceEstimate, DivergenceKind, estimate_divergence
from .errors import ConfigMismatch, NonPositiveM, ValidationError, ZeroDistance
from .knn import default_k
from .samplers import InitialLaw, StrategyConfig, check_compatible, run_chain, run_ensemble
from .targets import TargetModel, as_model

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ReferenceSample:
    points: np.ndarray
    burn_in: int
    n0: int
    generator: str
    seed: int

    @property
    def M(self) -> int:
        return self.points.shape[0]


def build_reference_sample(
    target,
    M: int,
    burn_in: int = 1000,
    n0: int = 50,
    generator: Optional[StrategyConfig] = None,
    seed: int = 0,
    x0=None,
) -> ReferenceSample:
    """Draw M points from f.

    With ``generator=None`` the target is sampled directly.  Otherwise one
    long chain is run from ``x0``; the first ``burn_in`` steps are discarded
    and every ``n0``-th state after that is kept, starting with X_burn_in.
    """
    target = as_model(target)
    if M < 2:
        raise ValidationError("a reference sample needs M >= 2")
    rng = rngmod.generator(seed, "reference")
    if generator is None:
        return ReferenceSample(target.sample(rng, M), 0, 1, "direct", seed)
    check_compatible(generator, target)
    if x0 is None:
        raise ValidationError("an MCMC reference sample needs a starting point x0")
    steps = burn_in + (M - 1) * n0
    path = run_chain(generator, target, x0, steps, rng)
    return ReferenceSample(path[burn_in::n0][:M].copy(), burn_in, n0, generator.id, seed)


@dataclass(frozen=True, eq=False)
class DivergenceCurve:
    strategy_id: str
    kind: DivergenceKind
    points: list  # (n, DivergenceEstimate)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([n for n, _ in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for _, e in self.points])

    def at(self, n: int) -> DivergenceEstimate:
        for m, e in self.points:
            if m == n:
                return e
        raise KeyError(n)


def _failed_estimate(kind, k, N, M, mode, seed, level) -> DivergenceEstimate:
    nan = float("nan")
    return DivergenceEstimate(nan, kind, nan, (nan, nan), level, k, N, M, mode, seed)


def divergence_curve(
    strategy: StrategyConfig,
    target,
    kind: DivergenceKind,
    checkpoints: Sequence[int],
    N: int,
    reference: Optional[ReferenceSample] = None,
    k: Optional[int] = None,
    seed: int = 0,
    *,
    init: InitialLaw,
    level: float = 0.95,
    jitter: bool = False,
    threads: Optional[int] = None,
) -> DivergenceCurve:
    """Estimate the divergence between p^n and f at each checkpoint.

    One ensemble of N chains serves all checkpoints.  ``reference=None``
    selects known-f mode.  Estimator failures (a non-positive M for Renyi,
    duplicate points without jitter) are logged and recorded as NaN.
    """
    target = as_model(target)
    k = default_k(N) if k is None else k
    if reference is None and not target.exact:
        raise ValidationError("known-f mode needs an exactly normalized target")
    snaps = run_ensemble(strategy, target, init, checkpoints, N, seed, threads=threads)
    mode = "known-f" if reference is None else "unknown-f"
    M = 0 if reference is None else reference.M
    out = []
    for snap in snaps:
        jit = rngmod.generator(seed, "jitter", snap.iteration) if jitter else None
        try:
            est = estimate_divergence(
                kind, snap.points, k,
                ys=None if reference is None else reference.points,
                f=target if reference is None else None,
                level=level, jitter_rng=jit, seed=seed,
            )
        except (NonPositiveM, ZeroDistance) as exc:
            log.warning("%s n=%d: %s", strategy.id, snap.iteration, exc)
            est = _failed_estimate(kind, k, N, M, mode, seed, level)
        log.info("%s n=%d %s=%.6g", strategy.id, snap.iteration, kind, est.value)
        out.append((snap.iteration, est))
    return DivergenceCurve(strategy.id, kind, out)


@dataclass(frozen=True, eq=False)
class ComparisonSetup:
    target: TargetModel
    kind: DivergenceKind
    checkpoints: list
    N: int
    init: InitialLaw
    reference: Optional[ReferenceSample] = None
    k: Optional[int] = None
    seed: int = 0
    level: float = 0.95
    jitter: bool = False
    threads: Optional[int] = None


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    curves: list
    winner: str
    criterion: str
    threshold: Optional[float]
    scores: dict = field(default_factory=dict)


def score(curve: DivergenceCurve, criterion: str, threshold: Optional[float] = None) -> float:
    """Lower is better; NaN estimates count as +inf."""
    n = curve.iterations.astype(float)
    v = np.where(np.isnan(curve.values), np.inf, curve.values)
    if criterion == "final-value":
        return float(v[-1])
    if criterion == "area-under-curve":
        if np.isinf(v).any():
            return math.inf
        return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(n))) if len(v) > 1 else float(v[0])
    if criterion == "first-crossing":
        if threshold is None:
            raise ValidationError("first-crossing needs a threshold")
        below = np.nonzero(v < threshold)[0]
        return float(n[below[0]]) if below.size else math.inf
    raise ValidationError(f"unknown criterion {criterion!r}")


def rank(curves: list, criterion: str, threshold: Optional[float] = None) -> tuple[str, dict]:
    scores = {c.strategy_id: score(c, criterion, threshold) for c in curves}
    winner = min(scores, key=lambda sid: (scores[sid], sid))
    return winner, scores


def compare_strategies(
    configs: Sequence[StrategyConfig],
    shared: ComparisonSetup,
    criterion: str = "final-value",
    threshold: Optional[float] = None,
) -> ComparisonReport:
    if len(configs) < 2:
        raise ConfigMismatch("a comparison needs at least two strategies")
    curves = [
        divergence_curve(
            s, shared.target, shared.kind, shared.checkpoints, shared.N, shared.reference, shared.k,
            shared.seed, init=shared.init, level=shared.level, jitter=shared.jitter, threads=shared.threads,
        )
        for s in configs
    ]
    winner, scores = rank(curves, criterion, threshold)
    return ComparisonReport(curves, winner, criterion, threshold, scores)


def setup_from_config(cfg, threads: Optional[int] = None) -> ComparisonSetup:
    reference = None
    if not cfg.known_f:
        x0 = cfg.reference_x0
        if x0 is None and cfg.init.point is not None:
            x0 = cfg.init.point
        reference = build_reference_sample(
            cfg.target, cfg.M, cfg.burn_in, cfg.n0, cfg.reference_generator, cfg.master_seed, x0
        )
    return ComparisonSetup(
        cfg.target, cfg.kind, list(cfg.checkpoints), cfg.N, cfg.init, reference, cfg.k,
        cfg.master_seed, cfg.level, cfg.jitter, threads,
    )


def run_config(cfg, threads: Optional[int] = None) -> ComparisonReport:
    """Run every strategy of a :class:`~mcmcsel.config.RunConfig`."""
    setup = setup_from_config(cfg, threads)
    if len(cfg.strategies) < 2:
        curve = divergence_curve(
            cfg.strategies[0], setup.target, setup.kind, setup.checkpoints, setup.N, setup.reference,
            setup.k, setup.seed, init=setup.init, level=setup.level, jitter=setup.jitter, threads=threads,
        )
        winner, scores = rank([curve], cfg.criterion, cfg.threshold)
        return ComparisonReport([curve], winner, cfg.criterion, cfg.threshold, scores)
    return compare_strategies(cfg.strategies, setup, cfg.criterion, cfg.threshold)


# -- reproduction recipes --------------------------------------------------------

def _g(mean, variance):
    return {"mean": mean, "variance": variance}


_POSTERIOR = {
    "kind": "posterior",
    "synthetic": {"n": 20, "mean": 1.0, "variance": 2.0, "seed": 7},
    "m0": 0.0,
    "s0sq": 10.0,
    "shape": 2.0,
    "rate": 2.0,
}
_POSTERIOR_X0 = [6.0, 30.0]
_POOR_DIAGONAL = [25.0, 25.0]
# Once both chains of a pair have mixed, their curves differ only by estimator
# noise, so the final-value criterion is only meaningful while one strategy
# is still in its transient.  Recipes 1 and 2 stop their schedules there.
_TRANSIENT = list(range(11))
_MIXTURE_TRANSIENT = list(range(8))

RECIPES = {
    1: {
        "target": {"kind": "gaussian", **_g(0.0, 1.0)},
        "initial": {"kind": "point", "x0": [0.0]},
        "strategies": [
            {"id": "IS-N(-3,2)", "kind": "IS", "proposal": _g(-3.0, 2.0)},
            {"id": "IS-N(0,3)", "kind": "IS", "proposal": _g(0.0, 3.0)},
        ],
        "divergence": {"family": "alpha", "alpha": 2.0},
        "estimation": {"mode": "known-f", "jitter": True},
        "checkpoints": _TRANSIENT + [15, 20, 30],
    },
    2: {
        "target": {
            "kind": "mixture",
            "components": [{"weight": 0.4, **_g(-8.0, 2.0)}, {"weight": 0.6, **_g(0.0, 6.0)}],
        },
        "initial": {"kind": "point", "x0": [0.0]},
        "strategies": [
            {"id": "IS-N(-2.5,15)", "kind": "IS", "proposal": _g(-2.5, 15.0)},
            {"id": "RWMH-15", "kind": "RWMH", "proposal": _g(0.0, 15.0)},
        ],
        "divergence": {"family": "alpha", "alpha": 2.0},
        "estimation": {"mode": "known-f", "jitter": True, "N": 4000},
        "checkpoints": list(_MIXTURE_TRANSIENT),
    },
    3: {
        "target": {"kind": "unnormalized", "density": "oscillating", "support": [[-4.0, 4.0]]},
        "initial": {"kind": "point", "x0": [0.0]},
        "strategies": [
            {"id": "AM", "kind": "AM", "proposal": _g(0.0, 5.0), "am": {"t0": 15, "scale": None, "eps": 1e-6}},
            {"id": "RWMH-5", "kind": "RWMH", "proposal": _g(0.0, 5.0)},
        ],
        "divergence": {"family": "alpha", "alpha": 0.5},
        "estimation": {
            "mode": "unknown-f",
            "jitter": True,
            "reference": {"generator": {"id": "reference-RWMH", "kind": "RWMH", "proposal": _g(0.0, 1.0)}, "x0": [0.0]},
        },
    },
    4: {
        "target": dict(_POSTERIOR),
        "initial": {"kind": "point", "x0": list(_POSTERIOR_X0)},
        "strategies": [
            {"id": "Gibbs", "kind": "Gibbs"},
            {"id": "RWMH", "kind": "RWMH", "proposal": _g([0.0, 0.0], _POOR_DIAGONAL)},
        ],
        "divergence": {"family": "tsallis", "alpha": 0.99},
        "estimation": {
            "mode": "unknown-f",
            "jitter": True,
            "reference": {"generator": {"id": "reference-Gibbs", "kind": "Gibbs"}, "x0": list(_POSTERIOR_X0)},
        },
    },
    5: {
        "target": dict(_POSTERIOR),
        "initial": {"kind": "point", "x0": list(_POSTERIOR_X0)},
        "strategies": [
            {
                "id": "MWG",
                "kind": "MWG",
                "proposal": _g([0.0, 0.0], _POOR_DIAGONAL),
                "mwg": {"selection": [0.5, 0.5], "scan": "systematic"},
            },
            {"id": "RWMH", "kind": "RWMH", "proposal": _g([0.0, 0.0], _POOR_DIAGONAL)},
        ],
        "divergence": {"family": "renyi", "alpha": 0.3},
        "estimation": {
            "mode": "unknown-f",
            "jitter": True,
            "reference": {"generator": {"id": "reference-Gibbs", "kind": "Gibbs"}, "x0": list(_POSTERIOR_X0)},
        },
    },
}


def recipe_dict(figure: int) -> dict:
    if figure not in RECIPES:
        raise ValidationError(f"figure must be one of {sorted(RECIPES)}, got {figure}")
    import copy

    return copy.deepcopy(RECIPES[figure])


def reproduction_recipe(figure: int, master_seed: int = 0):
    """Fully resolved :class:`~mcmcsel.config.RunConfig` for one of the five comparisons."""
    from .config import from_dict

    return from_dict({"reproduce_figure": figure, "master_seed": master_seed})
