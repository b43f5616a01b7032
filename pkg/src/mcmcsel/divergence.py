"""Alpha-, Renyi- and Tsallis-divergences.

All three families are transforms of the integral

    M_alpha(p, f) = int p(x)^alpha f(x)^(1 - alpha) dx

so every estimator here first estimates M_alpha with k-NN distances, applies
a multiplicative bias correction (``B`` when f is only available through a
reference sample, ``Q`` when f can be evaluated exactly) and then maps the
corrected value through :func:`divergence_from_m`.
"""
from __future__ import annotations

import math

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import gammaln, roots_legendre
from scipy.stats import norm

from .errors import (
    AlphaOutOfTheoremRange,
    DimensionMismatch,
    GammaPole,
    NonIntegrable,
    NonPositiveM,
    TooFewPoints,
    ValidationError,
    ZeroDistance,
)
from .knn import NeighborIndex, ball_volume_constant, jitter as jitter_points
from .targets import (
    ConjugatePosteriorSpec,
    GaussianSpec,
    MixtureSpec,
    TargetModel,
    UnnormalizedSpec,
    as_model,
)


class Family(str, enum.Enum):
    ALPHA = "alpha"
    RENYI = "renyi"
    TSALLIS = "tsallis"


@dataclass(frozen=True)
class DivergenceKind:
    family: Family
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "family", Family(str(self.family).lower()) if not isinstance(self.family, Family) else self.family)
        a = float(self.alpha)
        if not np.isfinite(a) or a <= 0:
            raise ValidationError("alpha must be positive")
        if a == 1.0:
            raise ValidationError("alpha must differ from 1")
        object.__setattr__(self, "alpha", a)

    def __str__(self):
        return f"{self.family.value}(alpha={self.alpha:g})"


def divergence_from_m(kind: DivergenceKind, m: float) -> float:
    a = kind.alpha
    if kind.family is Family.ALPHA:
        return (1.0 - m) / (a * (1.0 - a))
    if kind.family is Family.TSALLIS:
        return (m - 1.0) / (a - 1.0)
    if not m > 0:
        raise NonPositiveM(f"Renyi divergence needs M > 0, got {m!r}")
    return float(np.log(m)) / (a - 1.0)


# -- analytic values -------------------------------------------------------

def _box(spec) -> np.ndarray:
    """``(d, 2)`` integration box carrying essentially all of the mass of ``spec``."""
    if isinstance(spec, GaussianSpec):
        sd = np.sqrt(np.diag(spec.variance))
        return np.column_stack([spec.mean - 12 * sd, spec.mean + 12 * sd])
    if isinstance(spec, MixtureSpec):
        boxes = np.stack([_box(g) for _, g in spec.components])
        return np.column_stack([boxes[:, :, 0].min(axis=0), boxes[:, :, 1].max(axis=0)])
    if isinstance(spec, UnnormalizedSpec):
        return np.asarray(spec.support_hint, dtype=float)
    if isinstance(spec, ConjugatePosteriorSpec):
        return np.asarray(spec.support_box(), dtype=float)
    raise TypeError(f"no integration box for {type(spec).__name__}")


def _breakpoints(spec) -> list:
    if isinstance(spec, GaussianSpec):
        return [float(spec.mean[0])]
    if isinstance(spec, MixtureSpec):
        return [float(g.mean[0]) for _, g in spec.components]
    return []


def _bounded(spec, box):
    """Restrict to the spec's own support hint where it has one."""
    if isinstance(spec, UnnormalizedSpec):
        own = np.asarray(spec.support_hint)
        return np.column_stack([np.maximum(box[:, 0], own[:, 0]), np.minimum(box[:, 1], own[:, 1])])
    return box


def _quad1d(logfun, lo, hi, points) -> tuple[float, float]:
    pts = sorted(p for p in set(points) if lo < p < hi)
    val, err = integrate.quad(
        lambda x: float(np.exp(logfun(np.array([[x]]))[0])),
        lo, hi, points=pts or None, limit=500, epsabs=1e-11, epsrel=1e-11,
    )
    return val, err


def _gl_grid(lo, hi, panels, order):
    nodes, weights = roots_legendre(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w


def _quad2d(logfun, box, panels=60, order=16) -> tuple[float, float]:
    def run(p):
        x, wx = _gl_grid(box[0, 0], box[0, 1], p, order)
        y, wy = _gl_grid(box[1, 0], box[1, 1], p, order)
        X, Y = np.meshgrid(x, y, indexing="ij")
        vals = np.exp(logfun(np.stack([X, Y], axis=-1)))
        return float(wx @ vals @ wy)

    fine = run(panels)
    coarse = run(panels // 2)
    return fine, abs(fine - coarse)


def _integrate(logfun, box, points=()) -> tuple[float, float]:
    if box.shape[0] == 1:
        return _quad1d(logfun, box[0, 0], box[0, 1], points)
    if box.shape[0] == 2:
        return _quad2d(logfun, box)
    raise DimensionMismatch("numeric integration supports d = 1 or 2")


def _log_normalizer(spec, box) -> float:
    if isinstance(spec, (GaussianSpec, MixtureSpec)):
        return 0.0
    z, _ = _integrate(spec.logpdf, _bounded(spec, box), _breakpoints(spec))
    if not (np.isfinite(z) and z > 0):
        raise NonIntegrable("could not normalize the density")
    return float(np.log(z))


def analytic_m(p, f, alpha: float, tol: float = 1e-6) -> float:
    """M_alpha(p, f) by numeric quadrature (adaptive in 1-D, Gauss-Legendre tensor grid in 2-D)."""
    p = p.spec if isinstance(p, TargetModel) else p
    f = f.spec if isinstance(f, TargetModel) else f
    if p.dim != f.dim:
        raise DimensionMismatch("densities differ in dimension")
    bp, bf = _box(p), _box(f)
    box = np.column_stack([np.minimum(bp[:, 0], bf[:, 0]), np.maximum(bp[:, 1], bf[:, 1])])
    for s in (p, f):
        box = _bounded(s, box)
    # support-hint edges truncate the density; only free edges signal divergence
    free = np.ones(box.shape, dtype=bool)
    for s in (p, f):
        if isinstance(s, UnnormalizedSpec):
            own = np.asarray(s.support_hint)
            free &= box != own
    lzp, lzf = _log_normalizer(p, box), _log_normalizer(f, box)

    def logfun(x):
        lp = p.logpdf(x) - lzp
        lf = f.logpdf(x) - lzf
        with np.errstate(invalid="ignore"):
            out = alpha * lp + (1.0 - alpha) * lf
        return np.where(np.isnan(out), -np.inf, out)

    # a divergent integrand shows up as non-negligible mass at the box boundary
    d = box.shape[0]
    probe = np.stack(np.meshgrid(*[np.linspace(lo, hi, 201) for lo, hi in box], indexing="ij"), axis=-1).reshape(-1, d)
    vals = np.exp(logfun(probe))
    edge = np.zeros(len(probe), dtype=bool)
    for j in range(d):
        edge |= ((probe[:, j] == box[j, 0]) & free[j, 0]) | ((probe[:, j] == box[j, 1]) & free[j, 1])
    if vals[edge].max(initial=0.0) > 1e-6 * max(vals.max(), 1e-300):
        raise NonIntegrable("integrand does not decay at the boundary; M_alpha is likely infinite")
    val, err = _integrate(logfun, box, _breakpoints(p) + _breakpoints(f))
    if not np.isfinite(val) or err > tol:
        raise NonIntegrable(f"quadrature failed (value {val}, error estimate {err:.2e})")
    return val


def analytic_divergence(kind: DivergenceKind, p, f) -> float:
    return divergence_from_m(kind, analytic_m(p, f, kind.alpha))


# -- convergence bounds under a minoration condition ------------------------

@dataclass(frozen=True)
class BoundInputs:
    r: float
    delta: float
    n: int

    def __post_init__(self):
        if not self.r >= 0:
            raise ValidationError("r must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        if self.n < 0:
            raise ValidationError("n must be nonnegative")

    @property
    def nu(self) -> float:
        return 1.0 - self.delta


def theorem_bound(kind: DivergenceKind, inputs: BoundInputs) -> float:
    """Upper bound on the divergence between p^n and f for alpha > 1."""
    a = kind.alpha
    if a <= 1:
        raise AlphaOutOfTheoremRange("the bound holds for alpha > 1 only")
    with np.errstate(over="ignore"):
        x = inputs.r * inputs.nu ** inputs.n
        if kind.family is Family.RENYI:
            return a / (a - 1.0) * x
        grow = float(np.power(x + 1.0, a))
    if kind.family is Family.ALPHA:
        return (1.0 - grow) / (a * (1.0 - a))
    return (grow - 1.0) / (a - 1.0)


def _grid(specs, points_1d=20001, points_2d=401, span=10.0) -> np.ndarray:
    boxes = []
    for s in specs:
        if isinstance(s, GaussianSpec):
            sd = np.sqrt(np.diag(s.variance))
            boxes.append(np.column_stack([s.mean - span * sd, s.mean + span * sd]))
        elif isinstance(s, MixtureSpec):
            boxes.append(_grid_box_mixture(s, span))
        else:
            raise ValidationError("grid search needs Gaussian or mixture laws")
    boxes = np.stack(boxes)
    lo, hi = boxes[:, :, 0].min(axis=0), boxes[:, :, 1].max(axis=0)
    m = points_1d if lo.size == 1 else points_2d
    axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _grid_box_mixture(s: MixtureSpec, span):
    bs = []
    for _, g in s.components:
        sd = np.sqrt(np.diag(g.variance))
        bs.append(np.column_stack([g.mean - span * sd, g.mean + span * sd]))
    bs = np.stack(bs)
    return np.column_stack([bs[:, :, 0].min(axis=0), bs[:, :, 1].max(axis=0)])


def minoration_delta(proposal: GaussianSpec, target) -> Optional[float]:
    """Largest delta with q(y) >= delta f(y) on a dense grid, or ``None`` if there is none.

    ``None`` is returned when the ratio q/f falls toward the grid boundary
    (so its infimum over the whole space is 0) or is not positive.
    """
    target = as_model(target)
    if not target.exact:
        raise ValidationError("minoration needs an exactly normalized target")
    grid = _grid([proposal, target.spec])
    with np.errstate(over="ignore"):
        ratio = np.exp(proposal.logpdf(grid) - target.logpdf(grid))
    inner = ratio[(slice(1, -1),) * (grid.ndim - 1)]
    boundary_min = min(np.moveaxis(ratio, j, 0)[[0, -1]].min() for j in range(grid.ndim - 1))
    low = ratio.min()
    if not low > 0 or boundary_min < inner.min() * (1 - 1e-9):
        return None
    return float(min(low, 1.0 - 1e-12))


def ratio_sup_deviation(p0, target) -> float:
    """max |p0/f - 1| over the same dense grid used by :func:`minoration_delta`."""
    target = as_model(target)
    p0 = p0.spec if isinstance(p0, TargetModel) else p0
    grid = _grid([p0, target.spec])
    with np.errstate(over="ignore"):
        ratio = np.exp(p0.logpdf(grid) - target.logpdf(grid))
    return float(np.max(np.abs(ratio - 1.0)))


# -- bias constants ----------------------------------------------------------

def bias_constant_B(k: int, alpha: float) -> float:
    """Gamma(k)^2 / (Gamma(k - alpha + 1) Gamma(k + alpha - 1))."""
    if not (k - alpha + 1 > 0 and k + alpha - 1 > 0):
        raise GammaPole(f"B undefined for k={k}, alpha={alpha}")
    return float(np.exp(2 * gammaln(k) - gammaln(k - alpha + 1) - gammaln(k + alpha - 1)))


def bias_constant_Q(k: int, alpha: float) -> float:
    """Gamma(k - alpha + 1) / (k^(1 - alpha) Gamma(k))."""
    if not k - alpha + 1 > 0:
        raise GammaPole(f"Q undefined for k={k}, alpha={alpha}")
    return float(np.exp(gammaln(k - alpha + 1) - (1 - alpha) * np.log(k) - gammaln(k)))


# -- k-NN estimators -----------------------------------------------------------

def _as_sample(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def log_ratio_terms(xs, ys, k: int) -> np.ndarray:
    """log((N-1) rho_k^d / (M gamma_k^d)) for every X_i: the log of f_hat/p_hat."""
    xs, ys = _as_sample(xs), _as_sample(ys)
    if xs.shape[1] != ys.shape[1]:
        raise DimensionMismatch("samples differ in dimension")
    N, d = xs.shape
    M = ys.shape[0]
    rho = NeighborIndex(xs).kth_distances(xs, k, exclude_self=True)
    gam = NeighborIndex(ys).kth_distances(xs, k)
    if np.any(rho == 0) or np.any(gam == 0):
        raise ZeroDistance("zero k-th neighbour distance (duplicate points); enable jitter")
    return np.log(N - 1) - np.log(M) + d * (np.log(rho) - np.log(gam))


def log_ratio_terms_known_f(xs, f, k: int) -> np.ndarray:
    """log(f(X_i) (N-1) c rho_k^d / k) for every X_i."""
    f = as_model(f)
    if not f.exact:
        raise ValidationError("known-f estimation needs an exactly normalized target")
    xs = _as_sample(xs)
    N, d = xs.shape
    if d != f.dimension:
        raise DimensionMismatch("sample and target differ in dimension")
    rho = NeighborIndex(xs).kth_distances(xs, k, exclude_self=True)
    if np.any(rho == 0):
        raise ZeroDistance("zero k-th neighbour distance (duplicate points); enable jitter")
    return f.logpdf(xs) + np.log(N - 1) + np.log(ball_volume_constant(d)) + d * np.log(rho) - np.log(k)


def _terms(log_ratio: np.ndarray, alpha: float) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.exp((1.0 - alpha) * log_ratio)


def estimate_m_hat(xs, ys, k: int, alpha: float) -> tuple[float, np.ndarray]:
    """B-corrected estimate of M_alpha(p, f) from X ~ p and a reference sample Y ~ f.

    Returns the corrected value and the uncorrected per-point terms h(X_i).
    """
    _check_alpha(alpha)
    B = bias_constant_B(k, alpha)
    h = _terms(log_ratio_terms(xs, ys, k), alpha)
    return B * float(np.mean(h)), h


def estimate_m_hat_known_f(xs, f, k: int, alpha: float) -> tuple[float, np.ndarray]:
    """Q-corrected estimate of M_alpha(p, f) when f is evaluable exactly.

    With U ~ Gamma(k, 1) standing in for the scaled ball mass, the raw terms
    have expectation E[(U / k)^(1 - alpha)] (f/p)^(1 - alpha) = Q (f/p)^(1 - alpha),
    so the mean is divided by Q.
    """
    _check_alpha(alpha)
    Q = bias_constant_Q(k, alpha)
    h = _terms(log_ratio_terms_known_f(xs, f, k), alpha)
    return float(np.mean(h)) / Q, h


def _check_alpha(alpha):
    if alpha == 1:
        raise ValidationError("alpha must differ from 1")


def reference_log_ratio_terms(xs, ys, k: int) -> np.ndarray:
    """log(p_hat / f_hat) at every reference point Y_j.

    p_hat uses the k-th neighbour of Y_j among the X-sample and f_hat the
    k-th neighbour within the Y-sample with Y_j itself excluded.
    """
    xs, ys = _as_sample(xs), _as_sample(ys)
    N, d = xs.shape
    M = ys.shape[0]
    gam = NeighborIndex(ys).kth_distances(ys, k, exclude_self=True)
    rho = NeighborIndex(xs).kth_distances(ys, k)
    if np.any(rho == 0) or np.any(gam == 0):
        raise ZeroDistance("zero k-th neighbour distance (duplicate points); enable jitter")
    return np.log(M - 1) - np.log(N) + d * (np.log(gam) - np.log(rho))


def noise_ratio(k: int, alpha: float, known_f: bool = False) -> float:
    """E[w^2] / E[w]^2 for the multiplicative k-NN noise w in each raw term.

    With U, V ~ Gamma(k, 1) the noise is (U / k)^(1 - alpha) when f is known
    and (U / V)^(1 - alpha) otherwise.  Returns inf when the second moment
    does not exist.
    """
    e = 1.0 - alpha
    args = (k + 2 * e, k + e) if known_f else (k + 2 * e, k - 2 * e, k + e, k - e)
    if min(args) <= 0:
        return math.inf
    if known_f:
        return float(np.exp(gammaln(k + 2 * e) + gammaln(k) - 2 * gammaln(k + e)))
    return float(np.exp(
        gammaln(k + 2 * e) + gammaln(k - 2 * e) + 2 * gammaln(k) - 2 * gammaln(k + e) - 2 * gammaln(k - e)
    ))


def estimator_ci(
    kind: DivergenceKind,
    terms,
    k: int,
    level: float = 0.95,
    known_f: bool = False,
    ref_terms=None,
) -> tuple[float, float]:
    """Normal-approximation confidence interval for the corrected estimate.

    The variance of the estimate of M_alpha follows the first-order (von
    Mises) expansion of the functional int p^alpha f^(1 - alpha):

        C^2 [(alpha^2 V_s + V_n) / N + (1 - alpha)^2 Var(g) / M]

    Here Var(h) = V_s + V_n splits the variance of the per-point terms into
    the spread of (f/p)^(1 - alpha) over the X-sample and the k-NN noise,
    V_n = mean(h^2) (1 - 1/r) with r from :func:`noise_ratio`.  The factor
    alpha on V_s accounts for each X_i also entering the density estimates
    of its neighbours.  ``ref_terms`` are g_j = (p_hat / f_hat)^alpha at the
    reference points (unknown-f mode only).  The result is pushed through
    the family's transform: linearly for the alpha- and Tsallis-divergences,
    by the delta method for Renyi.
    """
    h = np.asarray(terms, dtype=float)
    N = h.size
    if N < 30:
        raise TooFewPoints(f"normal approximation needs N >= 30, got {N}")
    if not 0 < level < 1:
        raise ValidationError("confidence level must lie in (0, 1)")
    a = kind.alpha
    C = 1.0 / bias_constant_Q(k, a) if known_f else bias_constant_B(k, a)
    ybar = float(np.mean(h))
    vh = float(np.var(h, ddof=1))
    r = noise_ratio(k, a, known_f)
    if math.isfinite(r):
        vn = min(vh, float(np.mean(h * h)) * (1.0 - 1.0 / r))
        var = (a * a * (vh - vn) + vn) / N
    else:
        var = max(a * a, 1.0) * vh / N
    if ref_terms is not None:
        g = np.asarray(ref_terms, dtype=float)
        var += (1 - a) ** 2 * float(np.var(g, ddof=1)) / g.size
    se = np.sqrt(var)
    value = divergence_from_m(kind, C * ybar)
    if kind.family is Family.ALPHA:
        sd = C * se / abs(a * (1 - a))
    elif kind.family is Family.TSALLIS:
        sd = C * se / abs(a - 1)
    else:
        sd = se / (abs(a - 1) * ybar)
    half = float(norm.ppf(0.5 + level / 2)) * sd
    return value - half, value + half


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    kind: DivergenceKind
    m_hat: float
    ci: tuple
    level: float
    k: int
    N: int
    M: int
    mode: str
    seed: Optional[int] = None

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci[1] - self.ci[0])


def estimate_divergence(
    kind: DivergenceKind,
    xs,
    k: int,
    ys=None,
    f=None,
    level: float = 0.95,
    jitter_rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
) -> DivergenceEstimate:
    """Estimate a divergence between the law of ``xs`` and f.

    Exactly one of ``ys`` (reference sample from f, unknown-f mode) or ``f``
    (an exactly normalized model, known-f mode) must be given.  With
    ``jitter_rng`` exact ties are broken before the neighbour search.
    """
    if (ys is None) == (f is None):
        raise ValidationError("give exactly one of a reference sample or a known density")
    xs = _as_sample(xs)
    if jitter_rng is not None:
        xs = jitter_points(xs, jitter_rng)
    if ys is not None:
        ys = _as_sample(ys)
        if jitter_rng is not None:
            ys = jitter_points(ys, jitter_rng)
        m, h = estimate_m_hat(xs, ys, k, kind.alpha)
        with np.errstate(over="ignore"):
            g = np.exp(kind.alpha * reference_log_ratio_terms(xs, ys, k))
        known, M, mode = False, ys.shape[0], "unknown-f"
    else:
        m, h = estimate_m_hat_known_f(xs, f, k, kind.alpha)
        g = None
        known, M, mode = True, 0, "known-f"
    value = divergence_from_m(kind, m)
    ci = estimator_ci(kind, h, k, level, known_f=known, ref_terms=g)
    return DivergenceEstimate(value, kind, m, ci, level, k, xs.shape[0], M, mode, seed)
