"""Parametric families, data-generating laws, datasets and random streams.

Every law used downstream is reduced to one of two primitive representations:
a finite list of Gaussian components ``(weight, mean, cov)`` or a finite list of
weighted atoms ``(weight, point)``.  Cost models only need to know how to
integrate against these two primitives.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import DomainError

DEFAULT_NODES_1D = 200


class FamilyKind(str, Enum):
    GAUSSIAN_LOCATION = "gaussian-location"
    GAUSSIAN_FULL_MEAN = "gaussian-full-mean"
    FINITE_DISCRETE = "finite-discrete"


class DistKind(str, Enum):
    IN_FAMILY = "in-family"
    GAUSSIAN_MIXTURE = "gaussian-mixture"
    EMPIRICAL = "empirical"


def _as_matrix(a, d: int | None = None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if d is not None and a.shape != (d, d):
        raise ValueError(f"expected a {d}x{d} matrix, got shape {a.shape}")
    return a


def _check_spd(cov: np.ndarray, name: str = "cov") -> None:
    if cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ValueError(f"{name} must be positive definite")


@dataclass(frozen=True, eq=False)
class ParamFamily:
    """A parametric family ``{P_theta : theta in Theta}``.

    ``theta_low``/``theta_high`` describe a box for the Gaussian kinds; the
    finite-discrete kind always uses the probability simplex over ``support``.
    For ``gaussian-full-mean`` the parameter is ``(mu_1..mu_d, var_1..var_d)``,
    a Gaussian with free mean and free diagonal variances.
    """

    kind: FamilyKind
    dim_q: int
    dim_d: int
    theta_low: np.ndarray | None = None
    theta_high: np.ndarray | None = None
    fixed_cov: np.ndarray | None = None
    support: np.ndarray | None = None

    def __post_init__(self):
        kind = FamilyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.dim_q < 1 or self.dim_d < 1:
            raise ValueError("dimensions must be positive")
        if kind is FamilyKind.GAUSSIAN_LOCATION:
            if self.dim_q != self.dim_d:
                raise ValueError("gaussian-location requires q == d")
            if self.fixed_cov is None:
                raise ValueError("gaussian-location requires fixed_cov")
            _check_spd(self.fixed_cov, "fixed_cov")
        elif kind is FamilyKind.GAUSSIAN_FULL_MEAN:
            if self.dim_q != 2 * self.dim_d:
                raise ValueError("gaussian-full-mean requires q == 2d")
            if self.theta_low[self.dim_d:].min() <= 0:
                raise ValueError("variance bounds must be positive")
        else:
            if self.support is None or self.support.shape != (self.dim_q, self.dim_d):
                raise ValueError("finite-discrete requires a (K, d) support with K == q")
            if len({tuple(r) for r in self.support}) != self.dim_q:
                raise ValueError("support points must be distinct")
        if kind is not FamilyKind.FINITE_DISCRETE:
            if self.theta_low.shape != (self.dim_q,) or self.theta_high.shape != (self.dim_q,):
                raise ValueError("theta bounds must have length q")
            if np.any(self.theta_high <= self.theta_low):
                raise ValueError("theta bounds must describe a box of positive volume")

    # -- constructors -----------------------------------------------------

    @classmethod
    def gaussian_location(cls, cov, low=-10.0, high=10.0) -> "ParamFamily":
        cov = _as_matrix(cov)
        d = cov.shape[0]
        return cls(
            FamilyKind.GAUSSIAN_LOCATION,
            d,
            d,
            theta_low=np.broadcast_to(np.asarray(low, float), (d,)).copy(),
            theta_high=np.broadcast_to(np.asarray(high, float), (d,)).copy(),
            fixed_cov=cov,
        )

    @classmethod
    def gaussian_full_mean(
        cls, d: int, mean_low=-10.0, mean_high=10.0, var_low=1e-3, var_high=100.0
    ) -> "ParamFamily":
        low = np.concatenate([np.full(d, mean_low, float), np.full(d, var_low, float)])
        high = np.concatenate([np.full(d, mean_high, float), np.full(d, var_high, float)])
        return cls(FamilyKind.GAUSSIAN_FULL_MEAN, 2 * d, d, theta_low=low, theta_high=high)

    @classmethod
    def finite_discrete(cls, support) -> "ParamFamily":
        support = np.asarray(support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        return cls(FamilyKind.FINITE_DISCRETE, support.shape[0], support.shape[1], support=support)

    # -- parameter space --------------------------------------------------

    @property
    def is_gaussian(self) -> bool:
        return self.kind is not FamilyKind.FINITE_DISCRETE

    def contains(self, theta, tol: float = 1e-12) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim_q,) or not np.all(np.isfinite(theta)):
            return False
        if self.kind is FamilyKind.FINITE_DISCRETE:
            return bool(theta.min() >= -tol and abs(theta.sum() - 1.0) <= 1e-9)
        return bool(np.all(theta >= self.theta_low - tol) and np.all(theta <= self.theta_high + tol))

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if not self.contains(theta):
            raise DomainError(f"theta={theta!r} lies outside the parameter space of {self.kind.value}")
        return theta

    def mean_cov(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and covariance matrix of the Gaussian law ``P_theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.kind is FamilyKind.GAUSSIAN_LOCATION:
            return theta.copy(), self.fixed_cov
        if self.kind is FamilyKind.GAUSSIAN_FULL_MEAN:
            d = self.dim_d
            return theta[:d].copy(), np.diag(theta[d:])
        raise TypeError("mean_cov is only defined for Gaussian kinds")

    def law(self, theta, nodes: int | None = None) -> "TrueDistribution":
        return TrueDistribution.in_family(self, theta, nodes=nodes)


@dataclass(frozen=True, eq=False)
class TrueDistribution:
    """The data-generating law ``P``; may or may not belong to a family."""

    kind: DistKind
    weights: np.ndarray | None = None
    means: np.ndarray | None = None
    cov: np.ndarray | None = None
    samples: np.ndarray | None = None
    family: ParamFamily | None = None
    theta: np.ndarray | None = None
    nodes: int | None = None

    def __post_init__(self):
        kind = DistKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is DistKind.GAUSSIAN_MIXTURE:
            w = self.weights
            if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("mixture weights must be nonnegative and sum to 1")
            if self.means.shape != (w.size, self.cov.shape[0]):
                raise ValueError("means must be (k, d) matching the covariance")
            _check_spd(self.cov)
        elif kind is DistKind.EMPIRICAL:
            if self.samples.ndim != 2 or self.samples.shape[0] < 1:
                raise ValueError("empirical law needs at least one sample")
        else:
            object.__setattr__(self, "theta", self.family.check(self.theta))

    @classmethod
    def in_family(cls, family: ParamFamily, theta, nodes: int | None = None) -> "TrueDistribution":
        return cls(DistKind.IN_FAMILY, family=family, theta=np.asarray(theta, float), nodes=nodes)

    @classmethod
    def gaussian_mixture(cls, weights, means, cov, nodes: int | None = None) -> "TrueDistribution":
        weights = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        return cls(DistKind.GAUSSIAN_MIXTURE, weights=weights, means=means, cov=_as_matrix(cov), nodes=nodes)

    @classmethod
    def gaussian(cls, mean, cov, nodes: int | None = None) -> "TrueDistribution":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls.gaussian_mixture([1.0], mean[None, :], cov, nodes=nodes)

    @classmethod
    def empirical(cls, samples) -> "TrueDistribution":
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        return cls(DistKind.EMPIRICAL, samples=samples)

    @property
    def dim(self) -> int:
        if self.kind is DistKind.GAUSSIAN_MIXTURE:
            return self.cov.shape[0]
        if self.kind is DistKind.EMPIRICAL:
            return self.samples.shape[1]
        return self.family.dim_d

    @property
    def is_gaussian(self) -> bool:
        if self.kind is DistKind.IN_FAMILY:
            return self.family.is_gaussian
        return self.kind is DistKind.GAUSSIAN_MIXTURE

    def gaussian_components(self) -> list[tuple[float, np.ndarray, np.ndarray]]:
        if self.kind is DistKind.GAUSSIAN_MIXTURE:
            return [(float(w), m, self.cov) for w, m in zip(self.weights, self.means) if w > 0]
        if self.kind is DistKind.IN_FAMILY and self.family.is_gaussian:
            m, s = self.family.mean_cov(self.theta)
            return [(1.0, m, s)]
        raise TypeError("law has no Gaussian components")

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Weights and points of a discrete law."""
        if self.kind is DistKind.EMPIRICAL:
            n = self.samples.shape[0]
            return np.full(n, 1.0 / n), self.samples
        if self.kind is DistKind.IN_FAMILY and not self.family.is_gaussian:
            return self.theta, self.family.support
        raise TypeError("law is not discrete")

    def mean(self) -> np.ndarray:
        if self.is_gaussian:
            return sum(w * m for w, m, _ in self.gaussian_components())
        w, z = self.atoms()
        return w @ z

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        if self.is_gaussian:
            return sum(w * (s + np.outer(m - mu, m - mu)) for w, m, s in self.gaussian_components())
        w, z = self.atoms()
        zc = z - mu
        return (w[:, None] * zc).T @ zc

    def marginal_cdf(self, x: float, i: int = 0) -> float:
        if self.is_gaussian:
            return float(
                sum(w * special.ndtr((x - m[i]) / math.sqrt(s[i, i])) for w, m, s in self.gaussian_components())
            )
        w, z = self.atoms()
        return float(w[z[:, i] <= x].sum())

    def marginal_quantile(self, prob: float, i: int = 0) -> float:
        """Lower ``prob``-quantile of the i-th coordinate."""
        if not 0.0 < prob < 1.0:
            raise ValueError("prob must lie in (0, 1)")
        if self.is_gaussian:
            comps = self.gaussian_components()
            if len(comps) == 1:
                _, m, s = comps[0]
                return float(m[i] + math.sqrt(s[i, i]) * special.ndtri(prob))
            lo = min(m[i] - 40 * math.sqrt(s[i, i]) for _, m, s in comps)
            hi = max(m[i] + 40 * math.sqrt(s[i, i]) for _, m, s in comps)
            return float(
                optimize.brentq(lambda x: self.marginal_cdf(x, i) - prob, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
            )
        w, z = self.atoms()
        order = np.argsort(z[:, i], kind="stable")
        cum = np.cumsum(w[order])
        k = int(np.searchsorted(cum, prob - 1e-12))
        return float(z[order[min(k, len(order) - 1)], i])

    def sample(self, n: int, rng: "RngStream | np.random.Generator") -> "Dataset":
        gen, tag = _generator(rng)
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.kind is DistKind.IN_FAMILY:
            return sample(self.family, self.theta, n, rng)
        if self.kind is DistKind.EMPIRICAL:
            idx = gen.integers(0, self.samples.shape[0], size=n)
            return Dataset(self.samples[idx].copy(), tag)
        comp = gen.choice(self.weights.size, size=n, p=self.weights)
        chol = np.linalg.cholesky(self.cov)
        eps = gen.standard_normal((n, self.cov.shape[0]))
        return Dataset(self.means[comp] + eps @ chol.T, tag)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(base_seed, stream_index)``.

    ``namespace`` separates otherwise identical indices used for different
    purposes (for example different sample sizes of one experiment).
    """

    base_seed: int
    stream_index: int = 0
    namespace: tuple[int, ...] = ()

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be nonnegative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.base_seed, spawn_key=(*self.namespace, self.stream_index))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.base_seed, index, (*self.namespace, self.stream_index))


def _generator(rng) -> tuple[np.random.Generator, int]:
    if isinstance(rng, RngStream):
        return rng.generator(), rng.stream_index
    if isinstance(rng, np.random.Generator):
        return rng, -1
    raise TypeError("rng must be an RngStream or numpy Generator")


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    seed_tag: int = -1

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("dataset rows must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.samples).tobytes()).hexdigest()[:16]


# -- sampling and densities ---------------------------------------------------


def sample(family: ParamFamily, theta, n: int, rng: RngStream | np.random.Generator) -> Dataset:
    """Draw ``n`` i.i.d. samples from ``P_theta``."""
    theta = family.check(theta)
    if n < 1:
        raise ValueError("n must be >= 1")
    gen, tag = _generator(rng)
    if family.kind is FamilyKind.FINITE_DISCRETE:
        p = np.clip(theta, 0.0, None)
        idx = gen.choice(family.dim_q, size=n, p=p / p.sum())
        return Dataset(family.support[idx].copy(), tag)
    mean, cov = family.mean_cov(theta)
    chol = np.linalg.cholesky(cov)
    return Dataset(mean + gen.standard_normal((n, family.dim_d)) @ chol.T, tag)


def _support_index(family: ParamFamily, z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    hits = np.all(np.isclose(z[:, None, :], family.support[None, :, :], rtol=0, atol=1e-12), axis=2)
    if not np.all(hits.any(axis=1)):
        raise DomainError("sample point is not on the support grid")
    return hits.argmax(axis=1)


def log_density(family: ParamFamily, theta, z) -> float | np.ndarray:
    """``log p_theta(z)``; accepts a single point or an ``(N, d)`` batch."""
    theta = family.check(theta)
    z = np.asarray(z, dtype=float)
    single = z.ndim <= 1
    zz = z.reshape(1, -1) if single else z
    if family.kind is FamilyKind.FINITE_DISCRETE:
        with np.errstate(divide="ignore"):
            out = np.log(theta[_support_index(family, zz)])
    else:
        mean, cov = family.mean_cov(theta)
        out = stats.multivariate_normal(mean, cov).logpdf(zz)
        out = np.atleast_1d(out)
    return float(out[0]) if single else out


def score_and_hessian(family: ParamFamily, theta, z) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of ``log p_theta(z)`` in theta.

    For an ``(N, d)`` batch the results have shapes ``(N, q)`` and ``(N, q, q)``.
    """
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    single = z.ndim <= 1
    zz = z.reshape(1, -1) if single else z
    n, q = zz.shape[0], family.dim_q
    if family.kind is FamilyKind.GAUSSIAN_LOCATION:
        prec = np.linalg.inv(family.fixed_cov)
        grad = (zz - theta) @ prec
        hess = np.broadcast_to(-prec, (n, q, q)).copy()
    elif family.kind is FamilyKind.GAUSSIAN_FULL_MEAN:
        d = family.dim_d
        mu, var = theta[:d], theta[d:]
        r = zz - mu
        grad = np.concatenate([r / var, -0.5 / var + 0.5 * r**2 / var**2], axis=1)
        hess = np.zeros((n, q, q))
        ii = np.arange(d)
        hess[:, ii, ii] = -1.0 / var
        hess[:, ii, d + ii] = -r / var**2
        hess[:, d + ii, ii] = -r / var**2
        hess[:, d + ii, d + ii] = 0.5 / var**2 - r**2 / var**3
    else:
        idx = _support_index(family, zz)
        grad = np.zeros((n, q))
        hess = np.zeros((n, q, q))
        with np.errstate(divide="ignore"):
            grad[np.arange(n), idx] = 1.0 / theta[idx]
            hess[np.arange(n), idx, idx] = -1.0 / theta[idx] ** 2
    if single:
        return grad[0], hess[0]
    return grad, hess


# -- total variation ----------------------------------------------------------


def tv_distance(family: ParamFamily, theta1, theta2) -> float:
    """Exact total-variation distance between two members of the family."""
    theta1 = family.check(theta1)
    theta2 = family.check(theta2)
    if family.kind is FamilyKind.GAUSSIAN_LOCATION:
        diff = theta1 - theta2
        maha = math.sqrt(max(diff @ np.linalg.solve(family.fixed_cov, diff), 0.0))
        return float(2.0 * special.ndtr(maha / 2.0) - 1.0)
    if family.kind is FamilyKind.FINITE_DISCRETE:
        return float(0.5 * np.abs(theta1 - theta2).sum())
    raise NotImplementedError(f"no closed-form total variation for {family.kind.value}")


def tv_lipschitz_constant(family: ParamFamily) -> float:
    """A constant ``D`` with ``tv(theta1, theta2) <= D * ||theta1 - theta2||_2``."""
    if family.kind is FamilyKind.GAUSSIAN_LOCATION:
        # 2*Phi(m/2) - 1 <= m * phi(0) and m <= ||diff|| / sqrt(lambda_min).
        lam = np.linalg.eigvalsh(family.fixed_cov).min()
        return float(1.0 / math.sqrt(2.0 * math.pi * lam))
    if family.kind is FamilyKind.FINITE_DISCRETE:
        return 0.5 * math.sqrt(family.dim_q)
    raise NotImplementedError(f"no total-variation Lipschitz constant for {family.kind.value}")


# -- expectations -------------------------------------------------------------


@dataclass(frozen=True)
class Expectation:
    value: float | np.ndarray
    nodes: int
    error_estimate: float = 0.0
    warning: str | None = None

    def __float__(self) -> float:
        return float(self.value)


def default_nodes(d: int) -> int:
    return {1: DEFAULT_NODES_1D, 2: 60, 3: 20}.get(d, 8)


@lru_cache(maxsize=64)
def _hermite_rule(nodes: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(all="ignore"):
        x, w = np.polynomial.hermite_e.hermegauss(nodes)
    if not np.all(np.isfinite(w)):
        raise ValueError(f"Gauss-Hermite rule with {nodes} nodes is numerically unstable")
    w = w / math.sqrt(2.0 * math.pi)
    keep = w > 1e-300
    x, w = x[keep], w[keep]
    if d == 1:
        return x[:, None], w
    grid = np.array(list(itertools.product(x, repeat=d)))
    wgrid = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
    return grid, wgrid


def _gh_expectation(dist: TrueDistribution, f: Callable, nodes: int):
    total = 0.0
    for w, m, s in dist.gaussian_components():
        x, wx = _hermite_rule(nodes, m.size)
        pts = m + x @ np.linalg.cholesky(s).T
        vals = np.asarray(f(pts), dtype=float)
        total = total + w * np.tensordot(wx, vals, axes=(0, 0))
    return total


def _adaptive_expectation(dist: TrueDistribution, f: Callable, kinks: Sequence[float]):
    total = 0.0
    for w, m, s in dist.gaussian_components():
        sd = math.sqrt(s[0, 0])
        cuts = sorted((k - m[0]) / sd for k in kinks)

        def integrand(x, m=m, sd=sd):
            val = np.asarray(f(np.array([[m[0] + sd * x]])), dtype=float)[0]
            return val * math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)

        edges = [-np.inf, *cuts, np.inf]
        for a, b in zip(edges[:-1], edges[1:]):
            if a == b:
                continue
            val, _ = integrate.quad_vec(integrand, a, b, epsabs=1e-13, epsrel=1e-12)
            total = total + w * val
    return total


def expectation_under(
    dist: TrueDistribution,
    f: Callable[[np.ndarray], np.ndarray],
    nodes: int | None = None,
    rtol: float | None = None,
    kinks: Sequence[float] | None = None,
) -> Expectation:
    """``E_P[f(z)]`` by Gauss-Hermite quadrature or an exact discrete average.

    ``f`` receives an ``(N, d)`` array of points and returns values whose
    leading axis has length ``N``; vector- and matrix-valued ``f`` are allowed.
    With ``rtol`` set, the rule is compared against one with half the nodes and
    an accuracy warning is attached when the two disagree by more than ``rtol``.
    ``kinks`` lists points where a one-dimensional ``f`` is not smooth; the
    integral is then split there and done adaptively, since Gauss-Hermite
    converges only at a first-order rate across a kink.
    """
    if not dist.is_gaussian:
        w, z = dist.atoms()
        vals = np.asarray(f(z), dtype=float)
        return Expectation(np.tensordot(w, vals, axes=(0, 0)), nodes=z.shape[0])
    if kinks is not None:
        if dist.dim != 1:
            raise ValueError("kinks are only supported for one-dimensional laws")
        value = _adaptive_expectation(dist, f, kinks)
        return Expectation(float(value) if np.ndim(value) == 0 else value, nodes=0)
    nodes = nodes or dist.nodes or default_nodes(dist.dim)
    value = _gh_expectation(dist, f, nodes)
    err, msg = 0.0, None
    if rtol is not None:
        coarse = _gh_expectation(dist, f, max(nodes // 2, 2))
        err = float(np.max(np.abs(np.asarray(value) - np.asarray(coarse))))
        scale = max(float(np.max(np.abs(value))), 1e-300)
        if err > rtol * scale:
            msg = f"quadrature did not reach rtol={rtol:g} with {nodes} nodes (estimated error {err:.3g})"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if np.ndim(value) == 0:
        value = float(value)
    return Expectation(value, nodes=nodes, error_estimate=err, warning=msg)
