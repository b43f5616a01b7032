"""Transition kernels and the ensemble runner.

A :class:`ChainState` holds a batch of ``n`` chains as an ``(n, d)`` array and
every kernel advances all of them by one step in lockstep.  Kernels draw their
randomness from a stream object (see :mod:`mcmcsel.rng`); a plain
:class:`numpy.random.Generator` is accepted too.

Kernels update the state in place and return it.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigMismatch, DegenerateCovariance, OutOfSupport, ValidationError
from .targets import ConjugatePosteriorSpec, GaussianSpec, MixtureSpec, TargetModel, as_model

KINDS = ("IS", "RWMH", "AM", "Gibbs", "MWG")


@dataclass(frozen=True)
class AMParams:
    t0: int = 15
    scale: Optional[float] = None  # S_d; None means 2.4^2 / d
    eps: float = 1e-6

    def __post_init__(self):
        if self.t0 < 1 or self.eps <= 0 or (self.scale is not None and self.scale <= 0):
            raise ValidationError("AM needs t0 >= 1, eps > 0 and a positive scale")

    def scale_for(self, d: int) -> float:
        return 2.4 ** 2 / d if self.scale is None else self.scale


@dataclass(frozen=True)
class MWGParams:
    selection: tuple
    scan: str = "random"

    def __post_init__(self):
        sel = tuple(float(a) for a in self.selection)
        if any(a < 0 for a in sel) or abs(sum(sel) - 1.0) > 1e-9:
            raise ValidationError("selection probabilities must be nonnegative and sum to 1")
        if self.scan not in ("random", "systematic"):
            raise ValidationError(f"unknown scan mode {self.scan!r}")
        object.__setattr__(self, "selection", sel)


@dataclass(frozen=True, eq=False)
class StrategyConfig:
    """One simulation strategy.

    ``proposal`` is the fixed law for IS, the increment law for RWMH and MWG
    (its diagonal gives the per-coordinate variances for MWG), and the initial
    covariance C_0 for AM.  Gibbs takes no proposal.
    """

    kind: str
    proposal: Optional[GaussianSpec] = None
    id: str = ""
    am: Optional[AMParams] = None
    mwg: Optional[MWGParams] = None
    seed_label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown strategy kind {self.kind!r}")
        if self.kind != "Gibbs" and self.proposal is None:
            raise ValidationError(f"{self.kind} needs a proposal")
        if self.kind == "AM" and self.am is None:
            object.__setattr__(self, "am", AMParams())
        if self.kind != "AM" and self.am is not None:
            raise ValidationError("AM parameters given for a non-AM strategy")
        if self.kind == "MWG" and self.mwg is None:
            d = self.proposal.dim
            object.__setattr__(self, "mwg", MWGParams(tuple([1.0 / d] * d)))
        if self.kind != "MWG" and self.mwg is not None:
            raise ValidationError("MWG parameters given for a non-MWG strategy")
        if self.kind == "MWG" and len(self.mwg.selection) != self.proposal.dim:
            raise ValidationError("one selection probability per coordinate is required")
        if not self.id:
            object.__setattr__(self, "id", self.kind)

    @property
    def stream_label(self) -> str:
        return self.seed_label or self.id


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Point mass at ``point`` or draws from ``law``."""

    point: Optional[np.ndarray] = None
    law: Optional[object] = None

    def __post_init__(self):
        if (self.point is None) == (self.law is None):
            raise ValidationError("initial law needs exactly one of point or law")
        if self.point is not None:
            object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=float)))

    @classmethod
    def point_mass(cls, x0) -> "InitialLaw":
        return cls(point=x0)

    @property
    def dim(self) -> int:
        return self.point.size if self.point is not None else self.law.dim

    def draw(self, master_seed: int, chain_ids) -> np.ndarray:
        """Initial states for the given chains; independent of the strategy."""
        ids = np.asarray(chain_ids)
        if self.point is not None:
            return np.tile(self.point, (ids.size, 1))
        if not isinstance(self.law, (GaussianSpec, MixtureSpec)):
            raise ValidationError("initial law must be a Gaussian or mixture")
        return np.vstack([self.law.sample(rngmod.generator(master_seed, "init", int(i)), 1) for i in ids])


@dataclass
class ChainState:
    x: np.ndarray
    logp: np.ndarray
    t: int = 0
    accepted: np.ndarray = None
    # AM history of X_0..X_t: count, running mean, scatter matrix sum (z - mean)(z - mean)^T
    count: int = 0
    hist_mean: Optional[np.ndarray] = None
    hist_scatter: Optional[np.ndarray] = None

    @classmethod
    def start(cls, x0, target, track_history: bool = False) -> "ChainState":
        target = as_model(target)
        x = np.array(x0, dtype=float, ndmin=2)
        if x.shape[1] != target.dimension:
            x = x.reshape(-1, target.dimension)
        logp = target.logpdf(x)
        if np.any(np.isneginf(logp)) or np.any(np.isnan(logp)):
            raise OutOfSupport("initial state outside the support of the target")
        st = cls(x=x, logp=logp, accepted=np.zeros(x.shape[0], dtype=np.int64))
        if track_history:
            n, d = x.shape
            st.count = 1
            st.hist_mean = x.copy()
            st.hist_scatter = np.zeros((n, d, d))
        return st

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def cov(self) -> np.ndarray:
        """Unbiased empirical covariance of the recorded history, ``(n, d, d)``."""
        if self.count < 2:
            return np.zeros_like(self.hist_scatter)
        return self.hist_scatter / (self.count - 1)

    def record(self):
        self.count += 1
        delta = self.x - self.hist_mean
        self.hist_mean += delta / self.count
        self.hist_scatter += delta[:, :, None] * (self.x - self.hist_mean)[:, None, :]

    def acceptance_rate(self) -> np.ndarray:
        return self.accepted / max(self.t, 1)


def _check_support(state: ChainState):
    if np.any(np.isneginf(state.logp)):
        raise OutOfSupport("chain state outside the support of the target")


def _metropolis(state: ChainState, y: np.ndarray, logp_y: np.ndarray, log_ratio: np.ndarray, u: np.ndarray):
    with np.errstate(divide="ignore"):
        accept = np.log(u) < log_ratio
    accept &= np.isfinite(logp_y)
    state.x[accept] = y[accept]
    state.logp[accept] = logp_y[accept]
    state.accepted += accept
    state.t += 1
    return accept


def is_step(state: ChainState, target, proposal: GaussianSpec, rng) -> ChainState:
    """Independence sampler: candidate from ``proposal`` regardless of the current state."""
    target = as_model(target)
    _check_support(state)
    s = rngmod.as_stream(rng, state.n)
    y = proposal.mean + s.normal(proposal.dim) @ proposal.chol.T
    u = s.uniform()
    logp_y = target.logpdf(y)
    with np.errstate(invalid="ignore"):
        log_ratio = (logp_y - proposal.logpdf(y)) - (state.logp - proposal.logpdf(state.x))
    _metropolis(state, y, logp_y, log_ratio, u)
    return state


def rwmh_step(state: ChainState, target, increment: GaussianSpec, rng) -> ChainState:
    """Random-walk Metropolis with a Gaussian increment centred at the current point."""
    target = as_model(target)
    s = rngmod.as_stream(rng, state.n)
    y = state.x + s.normal(increment.dim) @ increment.chol.T
    u = s.uniform()
    logp_y = target.logpdf(y)
    with np.errstate(invalid="ignore"):
        log_ratio = logp_y - state.logp
    _metropolis(state, y, logp_y, log_ratio, u)
    return state


def am_covariance(state: ChainState, config: StrategyConfig, t: int) -> np.ndarray:
    """Proposal covariance used to produce X_t, one ``(d, d)`` matrix per chain."""
    c0 = config.proposal.variance
    if t <= config.am.t0:
        return np.broadcast_to(c0, (state.n,) + c0.shape)
    d = c0.shape[0]
    sd = config.am.scale_for(d)
    return sd * state.cov + sd * config.am.eps * np.eye(d)


def am_step(state: ChainState, target, config: StrategyConfig, rng) -> ChainState:
    """Adaptive Metropolis step; the history statistics absorb the new state."""
    target = as_model(target)
    if state.hist_scatter is None:
        raise ValidationError("AM needs a state started with track_history=True")
    t = state.t + 1
    s = rngmod.as_stream(rng, state.n)
    z = s.normal(target.dimension)
    u = s.uniform()
    if t <= config.am.t0:
        y = state.x + z @ config.proposal.chol.T
    else:
        try:
            chol = np.linalg.cholesky(am_covariance(state, config, t))
        except np.linalg.LinAlgError:
            raise DegenerateCovariance("adapted covariance is not positive definite") from None
        y = state.x + np.einsum("nij,nj->ni", chol, z)
    logp_y = target.logpdf(y)
    with np.errstate(invalid="ignore"):
        log_ratio = logp_y - state.logp
    _metropolis(state, y, logp_y, log_ratio, u)
    state.record()
    return state


def gibbs_step(state: ChainState, posterior: ConjugatePosteriorSpec, rng) -> ChainState:
    """Draw m from its conditional, then sigma^2 given the new m.  Never rejects."""
    if isinstance(posterior, TargetModel):
        posterior = posterior.spec
    if np.any(state.x[:, 1] <= 0):
        raise OutOfSupport("sigma^2 must be positive")
    s = rngmod.as_stream(rng, state.n)
    M, S2 = posterior.mean_conditional(state.x[:, 1])
    m = M + np.sqrt(S2) * s.normal(1)[:, 0]
    shape, rate = posterior.variance_conditional(m)
    s2 = rate / s.gamma(shape)
    state.x = np.column_stack([m, s2])
    state.logp = posterior.logpdf(state.x)
    state.accepted += 1
    state.t += 1
    return state


def mwg_step(state: ChainState, target, config: StrategyConfig, rng) -> ChainState:
    """Metropolis-within-Gibbs with symmetric Gaussian coordinate proposals.

    Random scan updates one coordinate chosen with the selection
    probabilities; systematic scan sweeps every coordinate in order.  The
    full-conditional ratio equals the joint ratio with the other coordinates
    held fixed.
    """
    target = as_model(target)
    d = target.dimension
    if d < 2:
        raise ConfigMismatch("Metropolis-within-Gibbs needs d >= 2")
    s = rngmod.as_stream(rng, state.n)
    sds = np.sqrt(np.diag(config.proposal.variance))
    rows = np.arange(state.n)
    if config.mwg.scan == "systematic":
        coords = [np.full(state.n, i) for i in range(d)]
    else:
        cum = np.cumsum(config.mwg.selection)
        pick = np.minimum(np.searchsorted(cum, s.uniform(), side="right"), d - 1)
        coords = [pick]
    accepted = np.zeros(state.n, dtype=bool)
    for i in coords:
        z = s.normal(1)[:, 0]
        u = s.uniform()
        y = state.x.copy()
        y[rows, i] += sds[i] * z
        logp_y = target.logpdf(y)
        with np.errstate(invalid="ignore"):
            log_ratio = logp_y - state.logp
        with np.errstate(divide="ignore"):
            acc = (np.log(u) < log_ratio) & np.isfinite(logp_y)
        state.x[acc] = y[acc]
        state.logp[acc] = logp_y[acc]
        accepted |= acc
    state.accepted += accepted
    state.t += 1
    return state


def check_compatible(strategy: StrategyConfig, target: TargetModel):
    d = target.dimension
    if strategy.kind == "Gibbs":
        if not isinstance(target.spec, ConjugatePosteriorSpec):
            raise ConfigMismatch("Gibbs is only available for the conjugate normal posterior")
        return
    if strategy.proposal.dim != d:
        raise ConfigMismatch(f"{strategy.id}: proposal dimension {strategy.proposal.dim}, target dimension {d}")
    if strategy.kind == "MWG" and d < 2:
        raise ConfigMismatch("Metropolis-within-Gibbs needs d >= 2")


def kernel(strategy: StrategyConfig, target: TargetModel):
    """Return ``step(state, rng)`` for the strategy."""
    check_compatible(strategy, target)
    kind = strategy.kind
    if kind == "IS":
        return lambda st, r: is_step(st, target, strategy.proposal, r)
    if kind == "RWMH":
        return lambda st, r: rwmh_step(st, target, strategy.proposal, r)
    if kind == "AM":
        return lambda st, r: am_step(st, target, strategy, r)
    if kind == "Gibbs":
        return lambda st, r: gibbs_step(st, target.spec, r)
    return lambda st, r: mwg_step(st, target, strategy, r)


@dataclass(frozen=True, eq=False)
class EnsembleSnapshot:
    iteration: int
    points: np.ndarray
    master_seed: int
    strategy_id: str

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise ValidationError("a snapshot needs N >= 2 points")


BLOCK_SIZE = 256


def _run_block(strategy, target, init, checkpoints, ids, master_seed):
    x0 = init.draw(master_seed, ids)
    state = ChainState.start(x0, target, track_history=strategy.kind == "AM")
    stream = rngmod.ChainStreams(master_seed, "chains/" + strategy.stream_label, ids)
    step = kernel(strategy, target)
    wanted = set(checkpoints)
    out = []
    for n in range(checkpoints[-1] + 1):
        if n in wanted:
            out.append(state.x.copy())
        if n < checkpoints[-1]:
            step(state, stream)
    return out


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MCMCSEL_THREADS", "1")))
    except ValueError:
        return 1


def run_ensemble(
    strategy: StrategyConfig,
    target,
    init: InitialLaw,
    checkpoints: Sequence[int],
    N: int,
    master_seed: int,
    threads: Optional[int] = None,
) -> list[EnsembleSnapshot]:
    """Run ``N`` independent chains and harvest their states at each checkpoint.

    Chains are processed in fixed blocks of :data:`BLOCK_SIZE`; ``threads``
    only controls how many blocks run concurrently, so the output does not
    depend on it.
    """
    target = as_model(target)
    check_compatible(strategy, target)
    checkpoints = [int(c) for c in checkpoints]
    if N < 2:
        raise ValidationError("need at least two chains")
    if not checkpoints or any(c < 0 for c in checkpoints) or any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValidationError("checkpoints must be a nonempty strictly increasing list of iterations >= 0")
    if init.dim != target.dimension:
        raise ConfigMismatch("initial law dimension differs from the target dimension")
    blocks = [np.arange(a, min(a + BLOCK_SIZE, N)) for a in range(0, N, BLOCK_SIZE)]
    threads = threads or default_threads()

    def work(ids):
        return _run_block(strategy, target, init, checkpoints, ids, master_seed)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    return [
        EnsembleSnapshot(n, np.vstack([p[j] for p in parts]), master_seed, strategy.id)
        for j, n in enumerate(checkpoints)
    ]


def run_chain(strategy: StrategyConfig, target, x0, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Trajectory ``X_0..X_steps`` of one chain, shape ``(steps + 1, d)``."""
    target = as_model(target)
    check_compatible(strategy, target)
    state = ChainState.start(np.reshape(x0, (1, -1)), target, track_history=strategy.kind == "AM")
    step = kernel(strategy, target)
    stream = rngmod.SharedStream(rng, 1)
    out = np.empty((steps + 1, target.dimension))
    out[0] = state.x[0]
    for t in range(1, steps + 1):
        step(state, stream)
        out[t] = state.x[0]
    return out
