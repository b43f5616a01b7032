"""Target densities.

Every spec evaluates its log-density on arrays of points shaped ``(..., d)``
and returns an array shaped ``(...)``.  Points outside the support evaluate
to ``-inf``; the module-level :func:`log_density` turns that into an
:class:`~mcmcsel.errors.OutOfSupport` error for single-point queries.

Second parameters of Gaussian laws are always variances.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import invgamma

from .errors import DimensionMismatch, NotDirectlySamplable, OutOfSupport, ValidationError

LOG_2PI = np.log(2.0 * np.pi)


def _as_points(x, d: int) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to an ``(n, d)`` array; the flag tells if ``x`` was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if d != 1:
            raise DimensionMismatch(f"scalar point given for a {d}-dimensional model")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if d == 1 and arr.shape[0] != 1:
            return arr.reshape(-1, 1), False
        if arr.shape[0] != d:
            raise DimensionMismatch(f"point of length {arr.shape[0]}, model dimension {d}")
        return arr.reshape(1, d), True
    if arr.shape[-1] != d:
        raise DimensionMismatch(f"points of dimension {arr.shape[-1]}, model dimension {d}")
    return arr.reshape(-1, d), False


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    """Multivariate normal law with the given mean and covariance (variance) matrix."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1 or mean.size < 1:
            raise ValidationError("mean must be a non-empty vector")
        d = mean.size
        var = np.asarray(self.variance, dtype=float)
        if var.ndim == 0:
            var = var * np.eye(d) if d == 1 else np.diag(np.full(d, float(var)))
        elif var.ndim == 1:
            if var.size != d:
                raise DimensionMismatch("variance diagonal length differs from mean length")
            var = np.diag(var)
        if var.shape != (d, d):
            raise DimensionMismatch(f"variance of shape {var.shape} for a mean of length {d}")
        if not np.allclose(var, var.T, rtol=0, atol=1e-12 * max(1.0, np.abs(var).max())):
            raise ValidationError("variance matrix must be symmetric")
        try:
            np.linalg.cholesky(var)
        except np.linalg.LinAlgError:
            raise ValidationError("variance matrix must be positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.variance)

    @cached_property
    def _inv_chol(self) -> np.ndarray:
        return np.linalg.inv(self.chol)

    @cached_property
    def _log_norm(self) -> float:
        return -0.5 * self.dim * LOG_2PI - np.log(np.diag(self.chol)).sum()

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = (x - self.mean) @ self._inv_chol.T
        return self._log_norm - 0.5 * np.sum(z * z, axis=-1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.chol.T

    def cdf(self, x) -> np.ndarray:
        """Univariate CDF; only defined for ``d = 1``."""
        from scipy.stats import norm

        if self.dim != 1:
            raise DimensionMismatch("cdf is only available in one dimension")
        return norm.cdf(x, loc=self.mean[0], scale=np.sqrt(self.variance[0, 0]))


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), g) for w, g in self.components)
        if not comps:
            raise ValidationError("a mixture needs at least one component")
        weights = np.array([w for w, _ in comps])
        if np.any(weights <= 0) or np.any(weights > 1):
            raise ValidationError("mixture weights must lie in (0, 1]")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValidationError(f"mixture weights sum to {weights.sum()}, not 1")
        if len({g.dim for _, g in comps}) != 1:
            raise DimensionMismatch("mixture components differ in dimension")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0][1].dim

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    def logpdf(self, x) -> np.ndarray:
        parts = [np.log(w) + g.logpdf(x) for w, g in self.components]
        return logsumexp(np.stack(parts), axis=0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        idx = np.searchsorted(np.cumsum(self.weights), u, side="right")
        idx = np.minimum(idx, len(self.components) - 1)
        z = rng.standard_normal((size, self.dim))
        out = np.empty((size, self.dim))
        for j, (_, g) in enumerate(self.components):
            sel = idx == j
            out[sel] = g.mean + z[sel] @ g.chol.T
        return out

    def cdf(self, x) -> np.ndarray:
        return sum(w * g.cdf(x) for w, g in self.components)


@dataclass(frozen=True, eq=False)
class UnnormalizedSpec:
    """Density known up to a constant.

    ``log_unnormalized_density`` must accept an ``(n, d)`` array and return ``n``
    values.  ``support_hint`` is one ``(low, high)`` pair per coordinate and
    bounds the region used for numeric integration.
    """

    log_unnormalized_density: Callable[[np.ndarray], np.ndarray]
    support_hint: tuple
    name: str = "unnormalized"

    def __post_init__(self):
        hint = np.asarray(self.support_hint, dtype=float).reshape(-1, 2)
        if np.any(hint[:, 1] <= hint[:, 0]):
            raise ValidationError("support_hint intervals must have low < high")
        object.__setattr__(self, "support_hint", tuple(map(tuple, hint)))

    @property
    def dim(self) -> int:
        return len(self.support_hint)

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        return np.asarray(self.log_unnormalized_density(flat), dtype=float).reshape(x.shape[:-1])


def oscillating_log_density(x: np.ndarray) -> np.ndarray:
    """log of exp(-x^2) (2 + sin 5x + sin 2x), a bounded multimodal 1-D density."""
    x = np.asarray(x, dtype=float)[..., 0]
    return -x * x + np.log(2.0 + np.sin(5.0 * x) + np.sin(2.0 * x))


UNNORMALIZED_DENSITIES: dict[str, tuple[Callable, tuple]] = {
    "oscillating": (oscillating_log_density, ((-4.0, 4.0),)),
}


@dataclass(frozen=True, eq=False)
class ConjugatePosteriorSpec:
    """Posterior of (m, sigma^2) for normal data under N(m0, s0sq) x InvGamma(shape, rate) priors.

    Points are ``(m, sigma2)``; the support is R x (0, inf).
    """

    data: np.ndarray
    m0: float
    s0sq: float
    shape: float
    rate: float

    def __post_init__(self):
        data = np.atleast_1d(np.asarray(self.data, dtype=float))
        if data.ndim != 1 or data.size < 1:
            raise ValidationError("posterior needs at least one observation")
        if not (self.s0sq > 0 and self.shape > 0 and self.rate > 0):
            raise ValidationError("prior variance, shape and rate must be positive")
        object.__setattr__(self, "data", data)

    dim = 2

    @property
    def n(self) -> int:
        return self.data.size

    @cached_property
    def _xbar(self) -> float:
        return float(self.data.mean())

    @cached_property
    def _ss(self) -> float:
        return float(np.sum((self.data - self._xbar) ** 2))

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m, s2 = x[..., 0], x[..., 1]
        ok = s2 > 0
        s2safe = np.where(ok, s2, 1.0)
        resid = self._ss + self.n * (self._xbar - m) ** 2
        val = (
            -(0.5 * self.n + self.shape + 1.0) * np.log(s2safe)
            - (0.5 * resid + self.rate) / s2safe
            - (m - self.m0) ** 2 / (2.0 * self.s0sq)
        )
        return np.where(ok, val, -np.inf)

    def mean_conditional(self, s2):
        """Parameters (M, Sigma^2) of m | sigma^2, x."""
        s2 = np.asarray(s2, dtype=float)
        denom = s2 + self.n * self.s0sq
        M = (self.s0sq * self.data.sum() + s2 * self.m0) / denom
        return M, s2 * self.s0sq / denom

    def variance_conditional(self, m):
        """Parameters (shape, rate) of sigma^2 | m, x."""
        m = np.asarray(m, dtype=float)
        resid = self._ss + self.n * (self._xbar - m) ** 2
        return 0.5 * self.n + self.shape, 0.5 * resid + self.rate

    def support_box(self, width: float = 8.0) -> tuple:
        """A box holding essentially all posterior mass, for grid integration."""
        shape, rate = self.variance_conditional(self._xbar)
        # the sigma^2 marginal has a polynomial tail, a bit heavier than the
        # conditional at m = xbar; take a far quantile with half a unit less shape
        s2_hi = float(invgamma.ppf(1.0 - 1e-8, max(shape - 0.5, 0.5), scale=rate))
        sd_m = np.sqrt(s2_hi / self.n + 1e-12)
        return ((self._xbar - width * sd_m, self._xbar + width * sd_m), (0.0, s2_hi))


def synthetic_data(n: int, mean: float, variance: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return mean + np.sqrt(variance) * rng.standard_normal(n)


Spec = Union[GaussianSpec, MixtureSpec, UnnormalizedSpec, ConjugatePosteriorSpec]


@dataclass(frozen=True, eq=False)
class TargetModel:
    spec: Spec
    name: str = field(default="target")

    @property
    def dimension(self) -> int:
        return self.spec.dim

    @property
    def normalization(self) -> str:
        return "exact" if isinstance(self.spec, (GaussianSpec, MixtureSpec)) else "up-to-constant"

    @property
    def exact(self) -> bool:
        return self.normalization == "exact"

    @property
    def directly_samplable(self) -> bool:
        return isinstance(self.spec, (GaussianSpec, MixtureSpec))

    def logpdf(self, x) -> np.ndarray:
        """Vectorized log-density over ``(..., d)`` points; ``-inf`` off the support."""
        return self.spec.logpdf(x)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if not self.directly_samplable:
            raise NotDirectlySamplable(f"{type(self.spec).__name__} cannot be sampled directly")
        return self.spec.sample(rng, size)


def as_model(spec_or_model) -> TargetModel:
    return spec_or_model if isinstance(spec_or_model, TargetModel) else TargetModel(spec_or_model)


def log_density(model, x) -> Union[float, np.ndarray]:
    """log f(x), exact or up to an additive constant depending on the model.

    Raises :class:`OutOfSupport` if any queried point has zero density.
    """
    model = as_model(model)
    pts, single = _as_points(x, model.dimension)
    vals = model.logpdf(pts)
    if np.any(np.isneginf(vals)):
        raise OutOfSupport("point outside the support of the target")
    return float(vals[0]) if single else vals


def density_ratio(model, y, x) -> float:
    """f(y) / f(x); zero when y is off the support."""
    model = as_model(model)
    ly = model.logpdf(_as_points(y, model.dimension)[0])[0]
    lx = model.logpdf(_as_points(x, model.dimension)[0])[0]
    if np.isneginf(lx):
        raise OutOfSupport("ratio undefined: x is outside the support")
    if np.isneginf(ly):
        return 0.0
    return float(np.exp(ly - lx))


def sample_direct(model, rng: np.random.Generator) -> np.ndarray:
    """One exact draw from a Gaussian or mixture model."""
    return as_model(model).sample(rng, 1)[0]


def gibbs_conditionals(spec: ConjugatePosteriorSpec, current: Sequence[float]):
    """Return ``((M, Sigma2), (shape, rate))`` of the two full conditionals at ``current``."""
    m, s2 = float(current[0]), float(current[1])
    if not s2 > 0:
        raise OutOfSupport("sigma^2 must be positive")
    M, S2 = spec.mean_conditional(s2)
    shape, rate = spec.variance_conditional(m)
    return (float(M), float(S2)), (float(shape), float(rate))
