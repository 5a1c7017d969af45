"""Evaluators for the finite-sample bounds.

Unknown absolute constants never get invented values here.  They enter as
caller-supplied numbers, and every evaluator reports the computable leading
term plus whatever budget the caller declares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import PreconditionError, RegionError
from .mixtures import ChiSqMixture, interval_probability, mixture_quantile
from .population import AsymptoticSummary

ZERO_TOL = 1e-12


@dataclass(frozen=True)
class BoundResult:
    value: float
    case: str
    detail: dict = field(default_factory=dict)


def _ieo_mixture(summary: AsymptoticSummary) -> ChiSqMixture:
    return ChiSqMixture(tuple(max(w, 0.0) for w in summary.lambda_ieo))


def lower_bound_D(summary: AsymptoticSummary, n: int, t: float, error_budget: float = 0.0,
                  grad_v0_kl_norm: float | None = None) -> BoundResult:
    """Lower bound on ``P(R_ETO >= t) - P(R_IEO >= t)``.

    ``grad_v0_kl_norm`` defaults to ``||grad v0(omega_theta^KL) M1_ETO||`` from
    the summary; ``error_budget`` stands for the sum of the two statistical
    error terms, which have no closed form.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    k_ieo, k_eto = summary.kappa0_ieo, summary.kappa0_eto
    s = summary.eto_first_order_sd if grad_v0_kl_norm is None else grad_v0_kl_norm
    if t <= k_ieo:
        return BoundResult(0.0, "case1: t <= kappa0_ieo", {"C": None})
    if math.isclose(t, k_eto, rel_tol=1e-12, abs_tol=1e-15):
        c, case = 0.5, "t = kappa0_eto"
    elif t < k_eto:
        expo = math.inf if s == 0 else n * (k_eto - t) ** 2 / (2.0 * s * s)
        c, case = 1.0 - math.exp(-expo), "kappa0_ieo < t < kappa0_eto"
    else:
        c, case = 0.0, "t > kappa0_eto"
    return BoundResult(c - error_budget, case, {"C": c, "s": s, "budget": error_budget})


def upper_bound_D(summary: AsymptoticSummary, n: int, t: float, epsilon: float | None = None,
                  error_budget: float = 0.0, grad_v0_kl_norm: float | None = None) -> BoundResult:
    """Upper bound on ``P(R_ETO >= t) - P(R_IEO >= t)``.

    Needs ``tau1 >= 0``.  With ``delta > 0`` the bound covers only thresholds
    beyond ``kappa0_ieo + (tau6 + tau1) / tau1 * delta`` and requires a slack
    ``epsilon`` inside the admissible interval.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    tau1, tau6 = summary.tau1, summary.tau6
    if tau1 < -1e-10:
        raise PreconditionError(f"the upper bound needs tau1 >= 0, got {tau1:.3e}")
    tau1 = max(tau1, 0.0)
    k_ieo, delta = summary.kappa0_ieo, summary.delta
    if t <= k_ieo:
        return BoundResult(0.0, "case1: t <= kappa0_ieo")
    if tau6 <= 0:
        raise PreconditionError("tau6 must be positive")
    ratio = 1.0 + tau1 / tau6
    mix = _ieo_mixture(summary)
    lo = n * (t - k_ieo)
    if delta <= ZERO_TOL:
        prob = interval_probability(mix, lo, ratio * lo)
        return BoundResult(-prob.value + error_budget, "case2: delta = 0",
                           {"probability": prob.value, "stderr": prob.stderr, "ratio": ratio})
    if tau1 == 0.0 or t <= k_ieo + (tau6 + tau1) / tau1 * delta:
        raise RegionError("t lies in the intermediate region where no ordering is available")
    eps_max = tau1 / (tau1 + tau6) * (t - k_ieo) - delta
    if epsilon is None or not 0.0 < epsilon < eps_max:
        raise PreconditionError(f"epsilon must lie in (0, {eps_max:.6g}); got {epsilon}")
    s = summary.eto_first_order_sd if grad_v0_kl_norm is None else grad_v0_kl_norm
    e_term = 0.0 if s == 0 else math.exp(-n * epsilon**2 / (2.0 * s * s))
    prob = interval_probability(mix, lo, ratio * (lo - n * delta - n * epsilon))
    return BoundResult(-prob.value + e_term + error_budget, "case2: delta > 0",
                       {"probability": prob.value, "stderr": prob.stderr, "E": e_term, "ratio": ratio})


def generalization_bound(L_c: float, rho_c: float, B_c: float, D_theta: float, E_theta: float,
                         C_abs: float, q: int, n: int, confidence: float) -> float:
    """Additive slack over ``R(omega_theta*)`` for the IEO decision.

    Holds with probability ``1 - confidence``; the caller adds the floor.
    """
    for name, val in (("L_c", L_c), ("rho_c", rho_c), ("B_c", B_c), ("D_theta", D_theta),
                      ("E_theta", E_theta), ("C_abs", C_abs)):
        if not val > 0:
            raise ValueError(f"{name} must be positive")
    if q < 1 or n < 1:
        raise ValueError("q and n must be positive")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    complexity = 4.0 * math.sqrt(2.0) * L_c**2 * C_abs * D_theta * E_theta / rho_c * math.sqrt(q / n)
    return complexity + 2.0 * B_c * math.sqrt(math.log(2.0 / confidence) / (2.0 * n))


@dataclass(frozen=True)
class GaussianTailBounds:
    norm_tail: float  # bound on P(||X|| >= t)
    linear_tail: float  # bound on P(v'X >= t)
    interval_mass: float  # bound on P(s1 <= v'X <= s2)


def gaussian_tail_bounds(m1, v, t: float, s1: float, s2: float) -> GaussianTailBounds:
    """Tail bounds for ``X = M' Y`` with ``Y`` standard normal.

    The interval bound is ``(s2 - s1) / (sqrt(2 pi) ||M v||)``: the density of
    ``v'X`` never exceeds ``1 / (sqrt(2 pi) ||M v||)``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if s1 > s2:
        raise ValueError("need s1 <= s2")
    m = np.atleast_2d(np.asarray(m1, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    q = m.shape[0]
    mnorm = float(np.linalg.norm(m, 2))
    mv = float(np.linalg.norm(m @ v))
    norm_tail = 2.0 * q * math.exp(-t * t / (2.0 * q * mnorm**2)) if mnorm > 0 else (2.0 * q if t == 0 else 0.0)
    linear = math.exp(-t * t / (2.0 * mv**2)) if mv > 0 else (1.0 if t == 0 else 0.0)
    interval = (s2 - s1) / (math.sqrt(2.0 * math.pi) * mv) if mv > 0 else math.inf
    return GaussianTailBounds(norm_tail, linear, interval)


# -- individual finite-sample evaluators --------------------------------------
# ``c_abs`` scales the hidden "<~" constant and ``c_nq`` is the caller's value
# for the M-estimation Berry-Esseen term; neither is known in closed form.


def eto_first_order_error(summary: AsymptoticSummary, n: int, q: int, L2: float,
                          c_abs: float, c_nq: float) -> float:
    """``G^ETO_{n,q}``: Kolmogorov error of the sqrt(n) ETO regret."""
    s = summary.eto_first_order_sd
    if s <= 0:
        raise PreconditionError("the ETO first-order term is degenerate (zero gradient)")
    m = float(np.linalg.norm(summary.m1_eto, 2))
    return c_abs * m**2 * L2 / s * q * math.log(n) / math.sqrt(n) + c_nq


def ieo_first_order_tail(summary: AsymptoticSummary, n: int, q: int, t: float, L2: float,
                         c_abs: float, c_nq: float) -> float:
    """``G^IEO_{n,q,t}``: tail bound of the sqrt(n) IEO regret at level t > 0."""
    if t <= 0:
        raise ValueError("t must be positive")
    m = float(np.linalg.norm(summary.m1_ieo, 2))
    return c_abs * q * math.exp(-math.sqrt(n) * t / (q * L2 * m**2)) + c_nq


def second_order_error(lambdas, m1, n: int, L1: float, c_abs: float, c_nq: float) -> float:
    """``D_{n,q}``: Kolmogorov error of the n-scaled regret for either method."""
    lam = np.sort(np.asarray(lambdas, dtype=float))[::-1]
    q = lam.size
    m = float(np.linalg.norm(np.atleast_2d(m1), 2))
    if q == 1:
        if lam[0] <= 0:
            raise PreconditionError("the leading weight must be positive")
        lead = L1**0.5 * m**1.5 * math.log(n) ** 0.75 * n**-0.25 / math.sqrt(lam[0])
    else:
        spread = float(np.sum(lam**2) * np.sum(lam[1:] ** 2))
        if spread <= 0:
            raise PreconditionError("need at least two positive weights")
        lead = spread**-0.25 * L1 * m**3 * q**1.5 * math.log(n) ** 1.5 / math.sqrt(n)
    return c_abs * lead + c_nq


def ieo_high_probability_bound(summary: AsymptoticSummary, n: int, epsilon: float) -> float:
    """Regret level the IEO decision stays below with probability ``1 - epsilon``
    once n clears the caller's sample-size threshold."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return summary.kappa0_ieo + mixture_quantile(_ieo_mixture(summary), 1.0 - epsilon / 2.0) / n


def classify_regime(summary: AsymptoticSummary, n: int, delta_factor: float = 10.0, zero_tol: float = 1e-6) -> dict:
    """Classify the instance into one of the comparison regimes.

    ``delta >> 0`` means ``delta > delta_factor * q99(G_IEO) / n``; "about
    zero" means below ``zero_tol``.  Both thresholds are conventions.
    """
    q99 = mixture_quantile(_ieo_mixture(summary), 0.99)
    big = delta_factor * q99 / n
    if summary.delta <= zero_tol and summary.b0 <= zero_tol:
        regime = "delta = 0 and B0 = 0"
    elif summary.delta > big:
        regime = "delta >> 0"
    elif summary.b0 <= zero_tol or summary.tau1 >= 0:
        regime = "delta ~ 0, B0 ~ 0"
    else:
        regime = "delta ~ 0, B0 > 0"
    return {"regime": regime, "delta_threshold": big, "zero_tol": zero_tol, "delta_factor": delta_factor}
