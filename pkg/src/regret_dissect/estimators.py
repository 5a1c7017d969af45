"""ETO (maximum likelihood) and IEO (empirical decision-loss) estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .core_model import Dataset, FamilyKind, ParamFamily, score_and_hessian
from .decision_oracle import CostKind, CostModel, oracle_decision, oracle_jacobian
from .errors import DomainError, SolverError

MLE_TOL = 1e-9
IEO_TOL = 1e-8
N_STARTS = 5
SMOOTHING_FRACTION = 1e-2


@dataclass(frozen=True)
class FitResult:
    method: str  # "ETO" or "IEO"
    theta_hat: np.ndarray
    omega_hat: np.ndarray
    objective_value: float
    gradient_norm: float
    iterations: int
    converged: bool
    boundary: bool = False
    dataset_digest: str = ""
    notes: dict = field(default_factory=dict)


def _samples(data) -> np.ndarray:
    return data.samples if isinstance(data, Dataset) else Dataset(np.asarray(data, float)).samples


def average_log_likelihood(data, family: ParamFamily, theta) -> float:
    z = _samples(data)
    from .core_model import log_density

    return float(np.mean(log_density(family, theta, z)))


def fit_eto(data, family: ParamFamily, model: CostModel | None = None) -> FitResult:
    """Maximum-likelihood fit; the decision is attached when ``model`` is given."""
    z = _samples(data)
    digest = data.digest() if isinstance(data, Dataset) else ""
    boundary = False
    iterations = 0
    if family.kind is FamilyKind.GAUSSIAN_LOCATION:
        theta = z.mean(axis=0)
    elif family.kind is FamilyKind.FINITE_DISCRETE:
        from .core_model import _support_index

        counts = np.bincount(_support_index(family, z), minlength=family.dim_q)
        theta = counts / counts.sum()
        boundary = bool(np.any(theta == 0.0))
    else:
        d = family.dim_d
        theta = np.concatenate([z.mean(axis=0), z.var(axis=0)])
        if np.any(theta[d:] < family.theta_low[d:]):
            theta[d:] = np.maximum(theta[d:], family.theta_low[d:])
            boundary = True
    if not family.contains(theta):
        raise DomainError(f"maximum-likelihood estimate {theta} falls outside the parameter space")
    if boundary or family.kind is FamilyKind.FINITE_DISCRETE:
        gnorm = 0.0
    else:
        grad, _ = score_and_hessian(family, theta, z)
        gnorm = float(np.linalg.norm(grad.mean(axis=0)))
    omega = oracle_decision(model, family, theta).omega if model is not None else np.full(0, np.nan)
    objective = average_log_likelihood(z, family, theta)
    return FitResult("ETO", theta, omega, objective, gnorm, iterations, gnorm <= MLE_TOL or boundary, boundary, digest)


def empirical_ieo_loss(data, family: ParamFamily, model: CostModel, theta) -> float:
    """``(1/n) sum_i c(omega_theta, z_i)`` with the unsmoothed cost."""
    z = _samples(data)
    omega = oracle_decision(model, family, theta).omega
    return float(np.mean(model.values(omega, z)))


def _empirical_quantile_decision(z: np.ndarray, beta: float, anchor: float) -> float:
    """Minimizer of the empirical newsvendor loss in one coordinate.

    When ``n * beta`` is an integer the minimizers form an interval between two
    order statistics; the point of that interval closest to ``anchor`` is used.
    """
    zs = np.sort(z)
    n = zs.size
    nb = n * beta
    k = math.ceil(nb - 1e-12)
    if abs(nb - round(nb)) < 1e-12 and 1 <= round(nb) < n:
        lo, hi = zs[round(nb) - 1], zs[round(nb)]
        return float(min(max(anchor, lo), hi))
    return float(zs[max(k, 1) - 1])


def fit_ieo(
    data,
    family: ParamFamily,
    model: CostModel,
    n_starts: int = N_STARTS,
    smoothing: float | None = None,
) -> FitResult:
    """Minimize the empirical IEO loss over the parameter space.

    Newsvendor with a Gaussian location family has a closed form (the empirical
    critical-ratio quantile shifted back by the oracle offset).  Otherwise a
    multistart quasi-Newton search runs on a smoothed surrogate, and candidates
    are ranked by the exact empirical loss with ties going to the earliest
    start (the first start is the MLE).
    """
    z = _samples(data)
    digest = data.digest() if isinstance(data, Dataset) else ""
    eto = fit_eto(z, family, model)

    if model.kind is CostKind.NEWSVENDOR and family.kind is FamilyKind.GAUSSIAN_LOCATION:
        sd = np.sqrt(np.diag(family.fixed_cov))
        offset = sd * special.ndtri(model.critical_ratio)
        omega = np.array(
            [_empirical_quantile_decision(z[:, i], model.critical_ratio[i], eto.omega_hat[i]) for i in range(model.dim_p)]
        )
        theta = omega - offset
        if not family.contains(theta):
            raise DomainError(f"IEO estimate {theta} falls outside the parameter space")
        omega = oracle_decision(model, family, theta).omega
        loss = float(np.mean(model.values(omega, z)))
        return FitResult("IEO", theta, omega, loss, 0.0, 0, True, False, digest, {"path": "closed-form"})

    if model.kinked and family.kind is FamilyKind.FINITE_DISCRETE:
        return _fit_ieo_discrete_newsvendor(z, family, model, eto, digest)

    surrogate = model
    if model.kinked:
        width = smoothing if smoothing is not None else SMOOTHING_FRACTION * float(np.mean(np.std(z, axis=0)) or 1.0)
        surrogate = model.smoothed(width)

    def objective(theta):
        omega = oracle_decision(surrogate, family, theta).omega
        return float(np.mean(surrogate.values(omega, z)))

    def gradient(theta):
        omega = oracle_decision(surrogate, family, theta).omega
        jac = oracle_jacobian(surrogate, family, theta)
        return jac.T @ surrogate.grads(omega, z).mean(axis=0)

    starts = _starting_points(eto.theta_hat, family, n_starts)
    candidates = []
    failures = []
    for idx, start in enumerate(starts):
        try:
            res = _minimize(objective, gradient, start, family)
        except (SolverError, DomainError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failures.append((idx, str(exc)))
            continue
        theta = res.x
        try:
            exact = empirical_ieo_loss(z, family, model, theta)
        except (SolverError, DomainError) as exc:
            failures.append((idx, str(exc)))
            continue
        gnorm = float(np.linalg.norm(gradient(theta)))
        candidates.append((exact, idx, theta, gnorm, res.nit, res.success or gnorm <= IEO_TOL))
    if not candidates:
        raise SolverError(f"all {len(starts)} IEO starts failed: {failures}")
    # lexicographic (loss, start index); losses equal to rounding count as ties
    best_loss = min(c[0] for c in candidates)
    tied = [c for c in candidates if c[0] <= best_loss + 1e-12 * max(1.0, abs(best_loss))]
    exact, idx, theta, gnorm, nit, ok = min(tied, key=lambda c: c[1])
    omega = oracle_decision(model, family, theta).omega
    return FitResult(
        "IEO", theta, omega, exact, gnorm, nit, bool(ok), False, digest,
        {"path": "multistart", "start": idx, "failed_starts": len(failures)},
    )


def _starting_points(theta_mle: np.ndarray, family: ParamFamily, n_starts: int) -> list[np.ndarray]:
    scale = 0.5 * float(np.linalg.norm(theta_mle)) + 0.5
    q = family.dim_q
    starts = [theta_mle.copy()]
    # fixed directions: +/- e_1, then +/- (1,...,1)/sqrt(q)
    dirs = [np.eye(q)[0], -np.eye(q)[0], np.ones(q) / math.sqrt(q), -np.ones(q) / math.sqrt(q)]
    k = 0
    while len(starts) < n_starts:
        d = dirs[k % len(dirs)] * (1 + k // len(dirs))
        cand = theta_mle + scale * d
        if family.kind is FamilyKind.FINITE_DISCRETE:
            cand = np.clip(cand, 1e-6, None)
            cand = cand / cand.sum()
        else:
            cand = np.clip(cand, family.theta_low + 1e-6, family.theta_high - 1e-6)
        starts.append(cand)
        k += 1
    return starts[:n_starts]


def _minimize(objective, gradient, start, family: ParamFamily):
    if family.kind is FamilyKind.FINITE_DISCRETE:
        cons = [{"type": "eq", "fun": lambda t: t.sum() - 1.0, "jac": lambda t: np.ones_like(t)}]
        return optimize.minimize(
            objective, start, jac=gradient, method="SLSQP",
            bounds=[(0.0, 1.0)] * family.dim_q, constraints=cons, options={"ftol": 1e-12, "maxiter": 500},
        )
    bounds = list(zip(family.theta_low, family.theta_high))
    return optimize.minimize(
        objective, start, jac=gradient, method="L-BFGS-B", bounds=bounds,
        options={"gtol": IEO_TOL, "ftol": 1e-15, "maxiter": 500},
    )


def _fit_ieo_discrete_newsvendor(z, family, model, eto: FitResult, digest: str) -> FitResult:
    """IEO for the kinked newsvendor over a finite support.

    The empirical loss is piecewise constant in theta, so the search runs along
    the segments from the MLE to every vertex of the simplex and keeps the
    smallest move away from the MLE that reaches the best loss.  In one
    dimension these segments reach every attainable decision.
    """
    lam_grid = np.linspace(0.0, 1.0, 1001)
    base = eto.theta_hat

    def loss(theta):
        return empirical_ieo_loss(z, family, model, theta)

    best = (loss(base), 0.0, -1, base)
    for k in range(family.dim_q):
        vertex = np.eye(family.dim_q)[k]
        for lam in lam_grid[1:]:
            val = loss((1 - lam) * base + lam * vertex)
            if val < best[0] - 1e-12 or (abs(val - best[0]) <= 1e-12 and lam < best[1]):
                best = (val, lam, k, None)
    val, lam, k, theta = best
    if theta is None:
        vertex = np.eye(family.dim_q)[k]
        lo, hi = 0.0, lam
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if loss((1 - mid) * base + mid * vertex) <= val + 1e-12:
                hi = mid
            else:
                lo = mid
        theta = (1 - hi) * base + hi * vertex
    omega = oracle_decision(model, family, theta).omega
    return FitResult(
        "IEO", theta, omega, loss(theta), 0.0, 0, True, bool(np.any(theta == 0.0)), digest, {"path": "simplex-segments"}
    )
