"""Weighted chi-square mixtures ``sum_i lambda_i chi2_1`` and quadratic forms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ConditioningError

MC_DRAWS = 1_000_000
MC_SEED = 20240917
SIGNED_TOL = 1e-8


@dataclass(frozen=True)
class ChiSqMixture:
    """Law of ``sum_i w_i X_i^2`` with ``X_i`` i.i.d. standard normal.

    ``signed`` marks a mixture built from an indefinite matrix; its weights may
    then be negative.
    """

    weights: tuple[float, ...]
    signed: bool = False

    def __post_init__(self):
        w = tuple(float(x) for x in np.atleast_1d(self.weights))
        object.__setattr__(self, "weights", w)
        if not w:
            raise ValueError("a mixture needs at least one weight")
        if not self.signed and min(w) < 0:
            raise ValueError("weights must be nonnegative for an unsigned mixture")

    @property
    def mean(self) -> float:
        return float(sum(self.weights))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.chisquare(1, size=(n, len(self.weights))) @ np.asarray(self.weights)


@dataclass(frozen=True)
class TailProbability:
    value: float
    stderr: float

    def __float__(self) -> float:
        return self.value


@lru_cache(maxsize=8)
def _base_draws(q: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(MC_SEED, spawn_key=(q,))))
    return rng.chisquare(1, size=(MC_DRAWS, q))


@lru_cache(maxsize=32)
def _sorted_draws(weights: tuple[float, ...]) -> np.ndarray:
    # common draws for every mixture of the same dimension keep differences smooth
    return np.sort(_base_draws(len(weights)) @ np.asarray(weights))


def mixture_tail(mix: ChiSqMixture, t: float) -> TailProbability:
    """``P(G >= t)`` from a fixed-seed sample of one million draws."""
    if t <= 0 and not mix.signed:
        return TailProbability(1.0, 0.0)
    draws = _sorted_draws(mix.weights)
    p = 1.0 - np.searchsorted(draws, t, side="left") / draws.size
    return TailProbability(float(p), math.sqrt(p * (1.0 - p) / draws.size))


def mixture_cdf(mix: ChiSqMixture, x) -> np.ndarray:
    """``P(G <= x)`` on the same fixed sample, vectorized in ``x``."""
    draws = _sorted_draws(mix.weights)
    return np.searchsorted(draws, np.asarray(x, dtype=float), side="right") / draws.size


def interval_probability(mix: ChiSqMixture, lo: float, hi: float) -> TailProbability:
    """``P(lo <= G <= hi)``; zero when the interval is empty."""
    if hi < lo:
        return TailProbability(0.0, 0.0)
    draws = _sorted_draws(mix.weights)
    count = np.searchsorted(draws, hi, side="right") - np.searchsorted(draws, lo, side="left")
    p = count / draws.size
    return TailProbability(float(p), math.sqrt(p * (1.0 - p) / draws.size))


def mixture_quantile(mix: ChiSqMixture, prob: float) -> float:
    """Smallest ``x`` with ``P(G <= x) >= prob``, by bisection on the sample."""
    if not 0.0 < prob < 1.0:
        raise ValueError("prob must lie in (0, 1)")
    draws = _sorted_draws(mix.weights)
    lo, hi = 0, draws.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if (mid + 1) / draws.size >= prob:
            hi = mid
        else:
            lo = mid + 1
    return float(draws[lo])


def quadratic_form_weights(matrix: np.ndarray) -> np.ndarray:
    """Eigenvalues ``lambda`` with ``Y' A Y = sum lambda_i chi2_1`` for ``Y ~ N(0, I)``."""
    a = np.asarray(matrix, dtype=float)
    return np.linalg.eigvalsh(0.5 * (a + a.T))[::-1]


def quadratic_form_decomposition(matrix, mean, cov) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Write ``X'AX`` with ``X ~ (mean, cov)`` as ``sum_j lambda_j (U_j + b_j)^2``.

    Returns ``(lambda, b, R)`` where ``U = R (cov^{-1/2} X - cov^{-1/2} mean)``
    has mean zero and identity covariance.
    """
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0:
        raise ConditioningError("covariance must be positive definite")
    root = (vecs * np.sqrt(vals)) @ vecs.T
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    lam, rot = np.linalg.eigh(root @ (0.5 * (a + a.T)) @ root)
    b = rot.T @ inv_root @ np.asarray(mean, dtype=float)
    return lam, b, rot.T


def _mixture_from(m1: np.ndarray, hess: np.ndarray, name: str, allow_signed: bool) -> ChiSqMixture:
    w = 0.5 * quadratic_form_weights(m1 @ hess @ m1)
    if w.min() < -SIGNED_TOL:
        if not allow_signed:
            raise ConditioningError(f"{name} has a negative weight {w.min():.3e}; the Hessian is not PSD")
        return ChiSqMixture(tuple(w), signed=True)
    return ChiSqMixture(tuple(np.clip(w, 0.0, None)))


def second_order_limits(summary) -> tuple[ChiSqMixture, ChiSqMixture]:
    """Laws of the 1/n regret terms for ETO and IEO.

    An indefinite ETO curvature yields a signed mixture; IEO must be PSD since
    theta* is an interior minimum.
    """
    eto = _mixture_from(summary.m1_eto, summary.hess_v0_at_kl, "G_ETO", allow_signed=True)
    ieo = _mixture_from(summary.m1_ieo, summary.hess_v0_at_star, "G_IEO", allow_signed=False)
    return eto, ieo


def coupled_second_order_draws(summary, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draws of both limit laws driven by one standard normal vector each."""
    y = rng.standard_normal((n, summary.m1_eto.shape[0]))
    a_eto = summary.m1_eto @ summary.hess_v0_at_kl @ summary.m1_eto
    a_ieo = summary.m1_ieo @ summary.hess_v0_at_star @ summary.m1_ieo
    g_eto = 0.5 * np.einsum("ni,ij,nj->n", y, a_eto, y)
    g_ieo = 0.5 * np.einsum("ni,ij,nj->n", y, a_ieo, y)
    return g_eto, g_ieo
