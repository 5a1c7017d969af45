"""Cost models, the oracle map ``theta -> omega_theta`` and regret.

Both cost models have closed-form expectations under a Gaussian component, so
``v(omega, Q)`` and its first two derivatives in ``omega`` are evaluated
exactly whenever ``Q`` is Gaussian or a Gaussian mixture.  The smoothed
newsvendor falls back to one-dimensional adaptive quadrature per coordinate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate, special

from .core_model import FamilyKind, ParamFamily, TrueDistribution, expectation_under
from .errors import ConditioningError, DomainError, SolverError

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200
ARMIJO_C = 1e-4


class CostKind(str, Enum):
    NEWSVENDOR = "newsvendor"
    PORTFOLIO = "portfolio"


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return special.expit(x)


@dataclass(frozen=True, eq=False)
class CostModel:
    """A cost ``c(omega, z)`` with its decision box ``Omega``.

    newsvendor: ``h'(omega - z)^+ + b'(z - omega)^+``; with ``smoothing > 0``
    every ``(x)^+`` becomes ``s * softplus(x / s)``.
    portfolio: ``exp(-z'omega) + gamma * ||omega||^2``.
    """

    kind: CostKind
    dim_p: int
    h: np.ndarray | None = None
    b: np.ndarray | None = None
    smoothing: float = 0.0
    gamma: float | None = None
    omega_low: np.ndarray | None = None
    omega_high: np.ndarray | None = None

    def __post_init__(self):
        kind = CostKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = self.dim_p
        if kind is CostKind.NEWSVENDOR:
            if self.h.shape != (p,) or self.b.shape != (p,):
                raise ValueError("h and b must have length p")
            if np.any(self.h <= 0) or np.any(self.b <= 0):
                raise ValueError("h and b must be strictly positive")
            if self.smoothing < 0:
                raise ValueError("smoothing width must be nonnegative")
        elif self.gamma is None or self.gamma <= 0:
            raise ValueError("portfolio requires gamma > 0")
        low = np.full(p, -10.0) if self.omega_low is None else np.asarray(self.omega_low, float)
        high = np.full(p, 10.0) if self.omega_high is None else np.asarray(self.omega_high, float)
        object.__setattr__(self, "omega_low", low)
        object.__setattr__(self, "omega_high", high)

    @classmethod
    def newsvendor(cls, h, b, smoothing: float = 0.0, low=-10.0, high=10.0) -> "CostModel":
        h = np.atleast_1d(np.asarray(h, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        p = h.size
        return cls(
            CostKind.NEWSVENDOR, p, h=h, b=b, smoothing=float(smoothing),
            omega_low=np.full(p, low, float), omega_high=np.full(p, high, float),
        )

    @classmethod
    def portfolio(cls, gamma: float, p: int = 1, low=-10.0, high=10.0) -> "CostModel":
        return cls(
            CostKind.PORTFOLIO, p, gamma=float(gamma),
            omega_low=np.full(p, low, float), omega_high=np.full(p, high, float),
        )

    @property
    def critical_ratio(self) -> np.ndarray:
        return self.b / (self.b + self.h)

    @property
    def kinked(self) -> bool:
        return self.kind is CostKind.NEWSVENDOR and self.smoothing == 0.0

    def smoothed(self, width: float) -> "CostModel":
        if self.kind is not CostKind.NEWSVENDOR:
            return self
        return CostModel(
            self.kind, self.dim_p, h=self.h, b=self.b, smoothing=float(width),
            omega_low=self.omega_low, omega_high=self.omega_high,
        )

    # -- pointwise (batched over rows of z) -------------------------------

    def values(self, omega, z) -> np.ndarray:
        z = np.atleast_2d(z)
        if self.kind is CostKind.PORTFOLIO:
            return np.exp(-z @ omega) + self.gamma * float(omega @ omega)
        x = omega - z
        if self.smoothing > 0:
            s = self.smoothing
            over, under = s * _softplus(x / s), s * _softplus(-x / s)
        else:
            over, under = np.maximum(x, 0.0), np.maximum(-x, 0.0)
        return over @ self.h + under @ self.b

    def grads(self, omega, z) -> np.ndarray:
        """Gradient in omega (an a.e. gradient for the kinked newsvendor)."""
        z = np.atleast_2d(z)
        if self.kind is CostKind.PORTFOLIO:
            return -z * np.exp(-z @ omega)[:, None] + 2.0 * self.gamma * omega
        x = omega - z
        if self.smoothing > 0:
            sig = _sigmoid(x / self.smoothing)
            return self.h * sig - self.b * (1.0 - sig)
        return np.where(x > 0, self.h, 0.0) - np.where(x < 0, self.b, 0.0)

    def hessians(self, omega, z) -> np.ndarray:
        z = np.atleast_2d(z)
        n, p = z.shape
        if self.kind is CostKind.PORTFOLIO:
            e = np.exp(-z @ omega)
            return e[:, None, None] * z[:, :, None] * z[:, None, :] + 2.0 * self.gamma * np.eye(p)
        out = np.zeros((n, p, p))
        if self.smoothing > 0:
            sig = _sigmoid((omega - z) / self.smoothing)
            ii = np.arange(p)
            out[:, ii, ii] = (self.h + self.b) * sig * (1.0 - sig) / self.smoothing
        return out

    # -- Gaussian component closed forms ----------------------------------

    def _newsvendor_marginals(self, omega, m, s):
        sd = np.sqrt(np.diag(s))
        u = (omega - m) / sd
        return sd, u

    def gaussian_value(self, omega, m, s) -> float:
        if self.kind is CostKind.PORTFOLIO:
            e = math.exp(-m @ omega + 0.5 * omega @ s @ omega)
            return e + self.gamma * float(omega @ omega)
        if self.smoothing > 0:
            return float(sum(self._smooth_1d(omega[i], m[i], s[i, i], i, 0) for i in range(self.dim_p)))
        sd, u = self._newsvendor_marginals(omega, m, s)
        over = sd * (u * special.ndtr(u) + _phi(u))
        under = over - (omega - m)
        return float(self.h @ over + self.b @ under)

    def gaussian_grad(self, omega, m, s) -> np.ndarray:
        if self.kind is CostKind.PORTFOLIO:
            e = math.exp(-m @ omega + 0.5 * omega @ s @ omega)
            return e * (s @ omega - m) + 2.0 * self.gamma * omega
        if self.smoothing > 0:
            return np.array([self._smooth_1d(omega[i], m[i], s[i, i], i, 1) for i in range(self.dim_p)])
        _, u = self._newsvendor_marginals(omega, m, s)
        return (self.h + self.b) * special.ndtr(u) - self.b

    def gaussian_hess(self, omega, m, s) -> np.ndarray:
        if self.kind is CostKind.PORTFOLIO:
            e = math.exp(-m @ omega + 0.5 * omega @ s @ omega)
            a = s @ omega - m
            return e * (np.outer(a, a) + s) + 2.0 * self.gamma * np.eye(self.dim_p)
        if self.smoothing > 0:
            return np.diag([self._smooth_1d(omega[i], m[i], s[i, i], i, 2) for i in range(self.dim_p)])
        sd, u = self._newsvendor_marginals(omega, m, s)
        return np.diag((self.h + self.b) * _phi(u) / sd)

    def gaussian_grad_moments(self, omega, m, s) -> tuple[np.ndarray, np.ndarray]:
        """First and second moments of the omega-gradient under ``N(m, s)``."""
        p = self.dim_p
        if self.kind is CostKind.PORTFOLIO:
            g = self.gamma
            e1 = math.exp(-m @ omega + 0.5 * omega @ s @ omega)
            ze1 = e1 * (m - s @ omega)
            e2 = math.exp(-2.0 * m @ omega + 2.0 * omega @ s @ omega)
            mu2 = m - 2.0 * s @ omega
            zz2 = e2 * (np.outer(mu2, mu2) + s)
            mean = -ze1 + 2.0 * g * omega
            second = zz2 - 2.0 * g * (np.outer(ze1, omega) + np.outer(omega, ze1)) + 4.0 * g * g * np.outer(omega, omega)
            return mean, second
        if self.smoothing > 0:
            mean = self.gaussian_grad(omega, m, s)
            second = np.outer(mean, mean)
            for i in range(p):
                second[i, i] = self._smooth_1d(omega[i], m[i], s[i, i], i, 3)
            for i in range(p):
                for j in range(i + 1, p):
                    if s[i, j] != 0.0:
                        sub = TrueDistribution.gaussian(m[[i, j]], s[np.ix_([i, j], [i, j])])
                        gi = lambda z, k: self.h[k] * _sigmoid((omega[k] - z) / self.smoothing) - self.b[k] * _sigmoid((z - omega[k]) / self.smoothing)
                        second[i, j] = second[j, i] = float(
                            expectation_under(sub, lambda zz: gi(zz[:, 0], i) * gi(zz[:, 1], j)).value
                        )
            return mean, second
        sd, u = self._newsvendor_marginals(omega, m, s)
        cdf = special.ndtr(u)
        hb = self.h + self.b
        mean = hb * cdf - self.b
        joint = np.outer(cdf, cdf)
        np.fill_diagonal(joint, cdf)
        for i in range(p):
            for j in range(i + 1, p):
                rho = s[i, j] / (sd[i] * sd[j])
                if rho != 0.0:
                    joint[i, j] = joint[j, i] = _bvn_cdf(u[i], u[j], rho)
        second = (
            np.outer(hb, hb) * joint
            - np.outer(hb * cdf, self.b)
            - np.outer(self.b, hb * cdf)
            + np.outer(self.b, self.b)
        )
        return mean, second

    def _smooth_1d(self, w: float, m: float, var: float, i: int, what: int) -> float:
        """E over z ~ N(m, var) of the smoothed 1-d cost (0), gradient (1),
        curvature (2) or squared gradient (3) for coordinate ``i``."""
        s, h, b = self.smoothing, self.h[i], self.b[i]
        sd = math.sqrt(var)

        def f(x):
            z = m + sd * x
            t = (w - z) / s
            if what == 0:
                val = h * s * _softplus(t) + b * s * _softplus(-t)
            elif what == 1:
                val = h * _sigmoid(t) - b * _sigmoid(-t)
            elif what == 2:
                sg = _sigmoid(t)
                val = (h + b) * sg * (1.0 - sg) / s
            else:
                val = (h * _sigmoid(t) - b * _sigmoid(-t)) ** 2
            return val * math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)

        c = (w - m) / sd
        total = 0.0
        for a, bb in ((-np.inf, c), (c, np.inf)):
            val, _ = integrate.quad(f, a, bb, epsabs=1e-13, epsrel=1e-12, limit=200)
            total += val
        return total


def _phi(u):
    return np.exp(-0.5 * np.square(u)) / math.sqrt(2.0 * math.pi)


def _bvn_cdf(a: float, b: float, rho: float) -> float:
    from scipy.stats import multivariate_normal

    return float(multivariate_normal(mean=[0.0, 0.0], cov=[[1.0, rho], [rho, 1.0]]).cdf([a, b]))


# -- expectations of the cost under a law -------------------------------------


def _fold(model: CostModel, dist: TrueDistribution, omega, gaussian, pointwise):
    if dist.is_gaussian:
        return sum(w * gaussian(omega, m, s) for w, m, s in dist.gaussian_components())
    w, z = dist.atoms()
    return np.tensordot(w, pointwise(omega, z), axes=(0, 0))


def expected_cost(model: CostModel, dist: TrueDistribution, omega) -> float:
    """``v(omega, Q) = E_Q[c(omega, z)]``."""
    omega = np.asarray(omega, dtype=float)
    return float(_fold(model, dist, omega, model.gaussian_value, model.values))


def expected_grad(model: CostModel, dist: TrueDistribution, omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    return np.asarray(_fold(model, dist, omega, model.gaussian_grad, model.grads), dtype=float)


def expected_hess(model: CostModel, dist: TrueDistribution, omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    return np.asarray(_fold(model, dist, omega, model.gaussian_hess, model.hessians), dtype=float)


def grad_covariance(model: CostModel, dist: TrueDistribution, omega) -> np.ndarray:
    """``Var_Q(grad_omega c(omega, z))`` as a ``p x p`` matrix."""
    omega = np.asarray(omega, dtype=float)
    if dist.is_gaussian:
        mean = np.zeros(model.dim_p)
        second = np.zeros((model.dim_p, model.dim_p))
        for w, m, s in dist.gaussian_components():
            mk, sk = model.gaussian_grad_moments(omega, m, s)
            mean += w * mk
            second += w * sk
    else:
        w, z = dist.atoms()
        g = model.grads(omega, z)
        mean = w @ g
        second = (w[:, None] * g).T @ g
    cov = second - np.outer(mean, mean)
    return 0.5 * (cov + cov.T)


# -- the oracle ---------------------------------------------------------------


@dataclass(frozen=True)
class OracleSolution:
    omega: np.ndarray
    stationarity_residual: float
    iterations: int
    method: str  # "closed-form" or "newton"


def cost(model: CostModel, omega, z) -> float:
    """Exact cost of a single decision/outcome pair."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if omega.shape != (model.dim_p,) or z.shape != (model.dim_p,):
        raise ValueError("omega and z must have length p")
    return float(model.values(omega, z[None, :])[0])


def _check_interior(model: CostModel, omega: np.ndarray) -> None:
    if np.any(omega <= model.omega_low) or np.any(omega >= model.omega_high):
        raise DomainError(f"optimal decision {omega} is not interior to the decision box")


def _newton(model: CostModel, dist: TrueDistribution, start: np.ndarray, tol0: float = NEWTON_TOL) -> OracleSolution:
    """Damped Newton with Armijo backtracking on ``omega -> v(omega, dist)``."""
    w = np.clip(np.asarray(start, dtype=float), model.omega_low + 1e-6, model.omega_high - 1e-6)
    f = expected_cost(model, dist, w)
    polished = False
    for it in range(1, NEWTON_MAX_ITER + 1):
        g = expected_grad(model, dist, w)
        gnorm = float(np.linalg.norm(g))
        # the attainable gradient floor grows with the magnitude of the objective
        tol = tol0 * max(1.0, abs(f))
        if gnorm <= tol:
            if polished:
                _check_interior(model, w)
                return OracleSolution(w, gnorm, it, "newton")
            polished = True
        hess = expected_hess(model, dist, w)
        try:
            step = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular Hessian in the oracle Newton solve", gnorm) from exc
        if g @ step >= 0:
            step = -g
        t = 1.0
        while t > 1e-12:
            cand = w + t * step
            fc = expected_cost(model, dist, cand)
            # near the optimum the Armijo test is below rounding; take full steps
            if fc <= f + ARMIJO_C * t * (g @ step) or gnorm <= 1e-6 * max(1.0, abs(f)):
                break
            t *= 0.5
        w, f = cand, fc
    g = expected_grad(model, dist, w)
    gnorm = float(np.linalg.norm(g))
    if gnorm <= tol0 * max(1.0, abs(f)):
        _check_interior(model, w)
        return OracleSolution(w, gnorm, NEWTON_MAX_ITER, "newton")
    raise SolverError(f"oracle Newton did not converge (|grad|={gnorm:.3e})", gnorm)


def _quantile_decision(model: CostModel, dist: TrueDistribution) -> np.ndarray:
    beta = model.critical_ratio
    return np.array([dist.marginal_quantile(beta[i], i) for i in range(model.dim_p)])


def minimize_expected_cost(model: CostModel, dist: TrueDistribution, start=None) -> OracleSolution:
    """``argmin_omega E_Q[c(omega, z)]`` for an arbitrary law ``Q``."""
    if dist.dim != model.dim_p:
        raise ValueError("decision and sample dimensions disagree")
    if model.kinked:
        omega = _quantile_decision(model, dist)
        _check_interior(model, omega)
        return OracleSolution(omega, 0.0, 0, "closed-form")
    if start is None:
        start = dist.mean() if model.kind is CostKind.NEWSVENDOR else np.zeros(model.dim_p)
    return _newton(model, dist, start)


def oracle_decision(model: CostModel, family: ParamFamily, theta, start=None) -> OracleSolution:
    """``omega_theta = argmin_omega E_{P_theta}[c(omega, z)]``."""
    theta = family.check(theta)
    if family.dim_d != model.dim_p:
        raise ValueError("decision and sample dimensions disagree")
    if model.kinked and family.is_gaussian:
        mean, cov = family.mean_cov(theta)
        omega = mean + np.sqrt(np.diag(cov)) * special.ndtri(model.critical_ratio)
        _check_interior(model, omega)
        return OracleSolution(omega, 0.0, 0, "closed-form")
    return minimize_expected_cost(model, family.law(theta), start=start)


def oracle_jacobian(model: CostModel, family: ParamFamily, theta, step: float = 1e-6) -> np.ndarray:
    """``d omega_theta / d theta`` (``p x q``) via the implicit function theorem.

    The mixed derivative of ``grad_omega v(omega, P_theta)`` in theta is taken by
    central differences of the closed-form gradient at the fixed decision.
    """
    theta = family.check(theta)
    omega = oracle_decision(model, family, theta).omega
    hess = expected_hess(model, family.law(theta), omega)
    if np.linalg.cond(hess) > 1e12:
        raise ConditioningError("grad_omega_omega v is singular at the oracle decision")
    cross = np.empty((model.dim_p, family.dim_q))
    if family.kind is FamilyKind.FINITE_DISCRETE:
        cross[:] = model.grads(omega, family.support).T
    else:
        for j in range(family.dim_q):
            e = np.zeros(family.dim_q)
            e[j] = step * max(1.0, abs(theta[j]))
            up = expected_grad(model, family.law(theta + e), omega)
            dn = expected_grad(model, family.law(theta - e), omega)
            cross[:, j] = (up - dn) / (2.0 * e[j])
    return -np.linalg.solve(hess, cross)


def true_expected_cost(model: CostModel, P: TrueDistribution, omega) -> float:
    """``v0(omega) = E_P[c(omega, z)]``."""
    return expected_cost(model, P, omega)


@dataclass(frozen=True)
class TrueOptimum:
    omega: np.ndarray
    value: float


def true_optimum(model: CostModel, P: TrueDistribution) -> TrueOptimum:
    """``omega*`` and ``v0(omega*)``."""
    sol = minimize_expected_cost(model, P)
    return TrueOptimum(sol.omega, expected_cost(model, P, sol.omega))


def regret(model: CostModel, P: TrueDistribution, omega, optimum: TrueOptimum | None = None) -> float:
    """``R(omega) = v0(omega) - v0(omega*)``, clamped at zero."""
    optimum = optimum or true_optimum(model, P)
    raw = expected_cost(model, P, omega) - optimum.value
    if raw < 0:
        if raw < -1e-9:
            log.warning("negative raw regret %.3e clamped to zero", raw)
        return 0.0
    return float(raw)


def raw_regret(model: CostModel, P: TrueDistribution, omega, optimum: TrueOptimum) -> float:
    return expected_cost(model, P, omega) - optimum.value


def portfolio_constants(model: CostModel, z_low, z_high) -> dict[str, float]:
    """Upper bounds on ``L_c``, ``B_c`` and the exact ``rho_c = 2 gamma`` for the
    portfolio cost over the decision box and the outcome box ``[z_low, z_high]``."""
    if model.kind is not CostKind.PORTFOLIO:
        raise TypeError("constants are only available for the portfolio cost")
    z_low = np.broadcast_to(np.asarray(z_low, float), (model.dim_p,))
    z_high = np.broadcast_to(np.asarray(z_high, float), (model.dim_p,))
    zmax = np.maximum(np.abs(z_low), np.abs(z_high))
    wmax = np.maximum(np.abs(model.omega_low), np.abs(model.omega_high))
    exponent = float(zmax @ wmax)
    lip = float(np.linalg.norm(zmax)) * math.exp(exponent) + 2.0 * model.gamma * float(np.linalg.norm(wmax))
    spread = math.exp(exponent) + model.gamma * float(wmax @ wmax)
    return {"L_c": lip, "rho_c": 2.0 * model.gamma, "B_c": spread}
