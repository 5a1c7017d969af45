"""Population quantities: theta^KL, theta*, regret floors, sandwich matrices.

Everything here is deterministic.  Inner expectations come from the closed-form
Gaussian expressions in :mod:`decision_oracle` or from Gauss-Hermite rules,
which are exact for the polynomial score terms of the Gaussian families.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, special

from ..core_model import (
    FamilyKind,
    ParamFamily,
    TrueDistribution,
    _support_index,
    expectation_under,
    score_and_hessian,
)
from ..decision_oracle import (
    CostModel,
    expected_cost,
    expected_grad,
    grad_covariance,
    oracle_decision,
    oracle_jacobian,
    true_optimum,
)
from ..errors import ConditioningError, DomainError, SolverError

SCHEMA_VERSION = 1
GRAD_TOL = 1e-10
PSD_CLAMP = 1e-10
SWEEP_RADIUS = 0.1


# -- small linear-algebra helpers -------------------------------------------


def psd_sqrt(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Symmetric square root; eigenvalues in ``[-1e-10, 0]`` are clamped."""
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    if vals.min() < -PSD_CLAMP:
        raise ConditioningError(f"{name} has a negative eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _sandwich(hess: np.ndarray, var: np.ndarray, name: str) -> np.ndarray:
    if np.linalg.cond(hess) > 1e12:
        raise ConditioningError(f"the Hessian inside {name} is singular")
    hinv = np.linalg.inv(hess)
    return psd_sqrt(hinv @ var @ hinv.T, name)


def _opnorm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


# -- theta^KL and theta* -----------------------------------------------------


def theta_kl(P: TrueDistribution, family: ParamFamily) -> np.ndarray:
    """Maximizer of ``E_P[log p_theta(z)]``.

    Every supported family has a closed-form population MLE (moment matching
    for the Gaussian kinds, cell probabilities for a finite support).
    """
    if family.kind is FamilyKind.GAUSSIAN_LOCATION:
        theta = np.asarray(P.mean(), dtype=float)
    elif family.kind is FamilyKind.GAUSSIAN_FULL_MEAN:
        theta = np.concatenate([P.mean(), np.diag(P.covariance())])
    else:
        if P.is_gaussian:
            raise DomainError("a continuous law has infinite divergence from a finite-support family")
        w, z = P.atoms()
        theta = np.bincount(_support_index(family, z), weights=w, minlength=family.dim_q)
        if np.any(theta <= 0.0):
            raise DomainError(f"theta^KL {theta} lies on the boundary of the simplex")
    if not family.contains(theta) or _on_boundary(family, theta):
        raise DomainError(f"theta^KL {theta} is not interior to the parameter space")
    return theta


def _on_boundary(family: ParamFamily, theta: np.ndarray) -> bool:
    if family.kind is FamilyKind.FINITE_DISCRETE:
        return bool(np.any(theta <= 0.0))
    return bool(np.any(theta <= family.theta_low) or np.any(theta >= family.theta_high))


def decision_value(model: CostModel, family: ParamFamily, law: TrueDistribution, theta) -> float:
    """``v(omega_theta, Q)`` for a fixed law ``Q``."""
    return expected_cost(model, law, oracle_decision(model, family, theta).omega)


def decision_gradient(model: CostModel, family: ParamFamily, law: TrueDistribution, theta) -> np.ndarray:
    """``grad_theta v(omega_theta, Q) = J(theta)' grad_omega v(omega_theta, Q)``."""
    omega = oracle_decision(model, family, theta).omega
    return oracle_jacobian(model, family, theta).T @ expected_grad(model, law, omega)


def _fd_steps(theta: np.ndarray) -> np.ndarray:
    return np.full(theta.size, max(1e-4, 1e-4 * float(np.linalg.norm(theta))))


def _fd_hessian(model, family, law, theta) -> np.ndarray:
    q = theta.size
    steps = _fd_steps(theta)
    hess = np.empty((q, q))
    for j in range(q):
        e = np.zeros(q)
        e[j] = steps[j]
        up = decision_gradient(model, family, law, theta + e)
        dn = decision_gradient(model, family, law, theta - e)
        hess[:, j] = (up - dn) / (2.0 * steps[j])
    return _sym(hess)


@dataclass(frozen=True)
class HessianEstimate:
    matrix: np.ndarray
    lipschitz: float | None  # local estimate of the Hessian-Lipschitz constant L1


def hess_v0_of_omega_theta(
    P: TrueDistribution,
    family: ParamFamily,
    model: CostModel,
    theta,
    sweep_radius: float | None = SWEEP_RADIUS,
) -> HessianEstimate:
    """Hessian of ``theta -> v0(omega_theta)``.

    Central differences are taken of the chain-rule gradient rather than of
    the scalar map, which loses two fewer digits.  With ``sweep_radius`` set,
    Hessians at ``theta +/- r e_j`` give the largest chord slope as a local
    estimate of the Lipschitz constant of the Hessian.
    """
    theta = family.check(theta)
    hess = _fd_hessian(model, family, P, theta)
    lip = None
    if sweep_radius:
        slopes = []
        for j in range(theta.size):
            for sgn in (-1.0, 1.0):
                e = np.zeros(theta.size)
                e[j] = sgn * sweep_radius
                if not family.contains(theta + e):
                    continue
                other = _fd_hessian(model, family, P, theta + e)
                slopes.append(_opnorm(other - hess) / sweep_radius)
        lip = max(slopes) if slopes else None
    return HessianEstimate(hess, lip)


def theta_star(P: TrueDistribution, family: ParamFamily, model: CostModel, n_starts: int = 5) -> np.ndarray:
    """Minimizer of ``v0(omega_theta)`` over the parameter box."""
    if family.kind is FamilyKind.FINITE_DISCRETE:
        raise NotImplementedError("theta* over the simplex is not supported")
    if model.kinked and family.kind is FamilyKind.GAUSSIAN_LOCATION:
        # the location family reaches every decision, so omega_theta* = omega*
        offset = np.sqrt(np.diag(family.fixed_cov)) * special.ndtri(model.critical_ratio)
        theta = true_optimum(model, P).omega - offset
        if _on_boundary(family, theta):
            raise SolverError(f"theta* {theta} is not interior to the parameter box")
        return theta

    from ..estimators import _starting_points

    base = theta_kl(P, family)
    value = lambda th: decision_value(model, family, P, th)  # noqa: E731
    grad = lambda th: decision_gradient(model, family, P, th)  # noqa: E731
    bounds = list(zip(family.theta_low, family.theta_high))
    found = []
    for idx, start in enumerate(_starting_points(base, family, n_starts)):
        try:
            res = optimize.minimize(value, start, jac=grad, method="L-BFGS-B", bounds=bounds,
                                    options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 500})
            theta = _newton_polish(model, family, P, res.x)
        except (SolverError, DomainError, ConditioningError, np.linalg.LinAlgError):
            continue
        found.append((value(theta), idx, theta))
    if not found:
        raise SolverError("no start reached a stationary point of v0(omega_theta)")
    best = min(f[0] for f in found)
    _, _, theta = min((f for f in found if f[0] <= best + 1e-12 * max(1.0, abs(best))), key=lambda f: f[1])
    if _on_boundary(family, theta):
        raise SolverError(f"theta* {theta} is not interior to the parameter box")
    return theta


def _newton_polish(model, family, law, theta, max_iter: int = 50) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    f = decision_value(model, family, law, theta)
    for _ in range(max_iter):
        g = decision_gradient(model, family, law, theta)
        if np.linalg.norm(g) <= GRAD_TOL * max(1.0, abs(f)):
            return theta
        step = -np.linalg.solve(_fd_hessian(model, family, law, theta), g)
        t = 1.0
        while t > 1e-10:
            cand = theta + t * step
            if family.contains(cand):
                fc = decision_value(model, family, law, cand)
                if fc <= f + 1e-12 * max(1.0, abs(f)):
                    break
            t *= 0.5
        theta, f = cand, fc
    gnorm = float(np.linalg.norm(decision_gradient(model, family, law, theta)))
    if gnorm <= 1e3 * GRAD_TOL * max(1.0, abs(f)):
        return theta
    raise SolverError(f"Newton polish of theta* stalled at |grad|={gnorm:.3e}", gnorm)


# -- regret floors -------------------------------------------------------------


@dataclass(frozen=True)
class Kappas:
    kappa0_eto: float
    kappa0_ieo: float
    delta: float


def _clamp(x: float) -> float:
    if x < -1e-9:
        raise SolverError(f"population regret {x:.3e} is negative beyond rounding")
    return max(x, 0.0)


def kappas_and_delta(P, family, model, theta_kl_=None, theta_star_=None) -> Kappas:
    tkl = theta_kl(P, family) if theta_kl_ is None else theta_kl_
    tst = theta_star(P, family, model) if theta_star_ is None else theta_star_
    v_star = true_optimum(model, P).value
    v_kl = decision_value(model, family, P, tkl)
    v_ts = decision_value(model, family, P, tst)
    k_eto = _clamp(v_kl - v_star)
    k_ieo = _clamp(v_ts - v_star)
    if k_eto < k_ieo:
        # theta* minimizes v0(omega_theta), so any excess is solver rounding
        if k_ieo - k_eto > 1e-9:
            raise SolverError("theta* is worse than theta^KL; the theta* search failed")
        k_ieo = k_eto
    return Kappas(k_eto, k_ieo, k_eto - k_ieo)


# -- sandwich matrices -------------------------------------------------------


def _score_moments(family: ParamFamily, law: TrueDistribution, theta) -> tuple[np.ndarray, np.ndarray]:
    """``E_Q[hess log p_theta]`` and ``Var_Q(score)``."""
    def outer(z):
        g = score_and_hessian(family, theta, z)[0]
        return g[:, :, None] * g[:, None, :]

    hess = expectation_under(law, lambda z: score_and_hessian(family, theta, z)[1]).value
    mean = expectation_under(law, lambda z: score_and_hessian(family, theta, z)[0]).value
    second = expectation_under(law, outer).value
    mean = np.atleast_1d(mean)
    return _sym(np.atleast_2d(hess)), _sym(np.atleast_2d(second) - np.outer(mean, mean))


def _decision_grad_var(model, family, law, theta) -> np.ndarray:
    """``Var_Q(grad_theta c(omega_theta, z))``."""
    omega = oracle_decision(model, family, theta).omega
    jac = oracle_jacobian(model, family, theta)
    return _sym(jac.T @ grad_covariance(model, law, omega) @ jac)


@dataclass(frozen=True)
class M1Matrices:
    eto: np.ndarray
    ieo: np.ndarray
    eto_tilde: np.ndarray
    ieo_tilde: np.ndarray


@dataclass(frozen=True)
class TauSpectrum:
    tau1: float
    tau2: float
    tau3: float
    tau6: float


@dataclass
class AsymptoticSummary:
    """Population-level theory quantities for one instance."""

    theta_kl: np.ndarray
    theta_star: np.ndarray
    omega_star: np.ndarray
    omega_kl: np.ndarray
    omega_theta_star: np.ndarray
    v0_star: float
    kappa0_eto: float
    kappa0_ieo: float
    delta: float
    hess_v0_at_kl: np.ndarray
    hess_v0_at_star: np.ndarray
    hess_v_tilde: np.ndarray  # Hessian of v(omega_theta, P^KL) at theta^KL
    grad_v0_at_kl: np.ndarray
    eto_first_order_sd: float  # ||grad v0(omega_theta^KL) M1_ETO||
    m1_eto: np.ndarray
    m1_ieo: np.ndarray
    m1_eto_tilde: np.ndarray
    m1_ieo_tilde: np.ndarray
    lambda_eto: list
    lambda_ieo: list
    tau1: float
    tau2: float
    tau3: float
    tau3_kl_hessian: float
    tau6: float
    b0: float
    b0_components: list
    lipschitz_hessian: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def m1(self) -> M1Matrices:
        return M1Matrices(self.m1_eto, self.m1_ieo, self.m1_eto_tilde, self.m1_ieo_tilde)

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        for key, val in asdict(self).items():
            out[key] = val.tolist() if isinstance(val, np.ndarray) else val
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "AsymptoticSummary":
        data = dict(data)
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported summary schema version {version!r}")
        kwargs = {}
        for name in cls.__dataclass_fields__:
            val = data.get(name)
            kwargs[name] = np.asarray(val, dtype=float) if name in _ARRAY_FIELDS else val
        kwargs["extras"] = kwargs["extras"] or {}
        return cls(**kwargs)


_ARRAY_FIELDS = {
    "theta_kl", "theta_star", "omega_star", "omega_kl", "omega_theta_star", "hess_v0_at_kl",
    "hess_v0_at_star", "hess_v_tilde", "grad_v0_at_kl", "m1_eto", "m1_ieo", "m1_eto_tilde", "m1_ieo_tilde",
}


def _quad_spectrum(m: np.ndarray, h: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(_sym(m @ h @ m))


def tau_spectrum(summary: AsymptoticSummary, tau3_hessian: str = "printed") -> TauSpectrum:
    """Extreme eigenvalues that govern the second-order comparison.

    ``tau3_hessian="printed"`` uses ``grad^2 v0(omega_theta*)`` in both terms of
    the tilde difference; ``"kl"`` uses the Hessian of ``v(omega_theta, P^KL)``
    at theta^KL instead.
    """
    s = summary
    diff = s.m1_ieo @ s.hess_v0_at_star @ s.m1_ieo - s.m1_eto @ s.hess_v0_at_kl @ s.m1_eto
    eig = np.linalg.eigvalsh(_sym(diff))
    if tau3_hessian == "printed":
        h3 = s.hess_v0_at_star
    elif tau3_hessian == "kl":
        h3 = s.hess_v_tilde
    else:
        raise ValueError("tau3_hessian must be 'printed' or 'kl'")
    tilde = s.m1_ieo_tilde @ h3 @ s.m1_ieo_tilde - s.m1_eto_tilde @ h3 @ s.m1_eto_tilde
    tau3 = float(np.linalg.eigvalsh(_sym(tilde)).min())
    tau6 = float(_quad_spectrum(s.m1_eto, s.hess_v0_at_kl).max())
    return TauSpectrum(float(eig.min()), float(eig.max()), tau3, tau6)


def analyze(P: TrueDistribution, family: ParamFamily, model: CostModel, lipschitz: bool = True) -> AsymptoticSummary:
    """Compute the full :class:`AsymptoticSummary` for ``(P, family, model)``."""
    if family.dim_d != model.dim_p or P.dim != family.dim_d:
        raise ValueError("family, law and cost model dimensions disagree")
    tkl = theta_kl(P, family)
    tst = theta_star(P, family, model)
    opt = true_optimum(model, P)
    kap = kappas_and_delta(P, family, model, tkl, tst)
    p_kl = family.law(tkl)

    h_kl = hess_v0_of_omega_theta(P, family, model, tkl, sweep_radius=None).matrix
    h_star_est = hess_v0_of_omega_theta(P, family, model, tst, sweep_radius=SWEEP_RADIUS if lipschitz else None)
    h_star = h_star_est.matrix
    h_tilde = hess_v0_of_omega_theta(p_kl, family, model, tkl, sweep_radius=None).matrix

    ell_p, var_p = _score_moments(family, P, tkl)
    ell_kl, var_kl = _score_moments(family, p_kl, tkl)
    w_p = _decision_grad_var(model, family, P, tst)
    w_kl = _decision_grad_var(model, family, p_kl, tkl)

    m_eto = _sandwich(ell_p, var_p, "M1_ETO")
    m_ieo = _sandwich(h_star, w_p, "M1_IEO")
    m_eto_t = _sandwich(ell_kl, var_kl, "tilde M1_ETO")
    m_ieo_t = _sandwich(h_tilde, w_kl, "tilde M1_IEO")

    grad_kl = decision_gradient(model, family, P, tkl)
    sd = float(np.linalg.norm(grad_kl @ m_eto))

    gaps = [
        _opnorm(ell_p - ell_kl),
        _opnorm(var_p - var_kl),
        _opnorm(h_star - h_tilde),
        _opnorm(w_p - w_kl),
        _opnorm(h_star - h_kl),
    ]
    lam_eto = sorted((0.5 * _quad_spectrum(m_eto, h_kl)).tolist(), reverse=True)
    lam_ieo = sorted((0.5 * _quad_spectrum(m_ieo, h_star)).tolist(), reverse=True)
    summary = AsymptoticSummary(
        theta_kl=tkl,
        theta_star=tst,
        omega_star=opt.omega,
        omega_kl=oracle_decision(model, family, tkl).omega,
        omega_theta_star=oracle_decision(model, family, tst).omega,
        v0_star=opt.value,
        kappa0_eto=kap.kappa0_eto,
        kappa0_ieo=kap.kappa0_ieo,
        delta=kap.delta,
        hess_v0_at_kl=h_kl,
        hess_v0_at_star=h_star,
        hess_v_tilde=h_tilde,
        grad_v0_at_kl=grad_kl,
        eto_first_order_sd=sd,
        m1_eto=m_eto,
        m1_ieo=m_ieo,
        m1_eto_tilde=m_eto_t,
        m1_ieo_tilde=m_ieo_t,
        lambda_eto=lam_eto,
        lambda_ieo=lam_ieo,
        tau1=math.nan,
        tau2=math.nan,
        tau3=math.nan,
        tau3_kl_hessian=math.nan,
        tau6=math.nan,
        b0=max(gaps),
        b0_components=gaps,
        lipschitz_hessian=h_star_est.lipschitz,
    )
    taus = tau_spectrum(summary)
    summary.tau1, summary.tau2, summary.tau3, summary.tau6 = taus.tau1, taus.tau2, taus.tau3, taus.tau6
    summary.tau3_kl_hessian = tau_spectrum(summary, "kl").tau3
    return summary


def m1_matrices(P, family, model) -> M1Matrices:
    return analyze(P, family, model, lipschitz=False).m1


def b0_measure(P, family, model) -> float:
    """Largest of the five misspecification gaps (spectral norms)."""
    return analyze(P, family, model, lipschitz=False).b0
