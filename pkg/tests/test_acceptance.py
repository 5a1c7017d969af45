"""Acceptance criteria 1-9, one test each; every test records a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import ALL_FIXTURES, WELL_SPECIFIED, misspec_instance, record, wellspec_instance
from regret_dissect.asymptotics import (
    ChiSqMixture,
    analyze,
    coupled_second_order_draws,
    dominance_tests,
    gaussian_tail_bounds,
    generalization_bound,
    interval_probability,
    kappas_and_delta,
    lower_bound_D,
    mixture_cdf,
    quadratic_form_decomposition,
)
from regret_dissect.config import Instance
from regret_dissect.core_model import ParamFamily, TrueDistribution, log_density, score_and_hessian, tv_distance
from regret_dissect.decision_oracle import CostModel, oracle_decision, oracle_jacobian
from regret_dissect.montecarlo import ExperimentConfig, run_experiment, scaling_check, write_curve_csv, write_diff_csv

pytestmark = pytest.mark.acceptance

WS_N = 2000
WS_M = 5000
T_TILDES = (1.0, 2.0, 4.0)
MS_NS = (250, 1000, 4000)
MS_M = 2000


@pytest.fixture(scope="module")
def ws_summary():
    inst = wellspec_instance()
    return analyze(inst.truth, inst.family, inst.model)


@pytest.fixture(scope="module")
def ms_summary():
    inst = misspec_instance()
    return analyze(inst.truth, inst.family, inst.model)


@pytest.fixture(scope="module")
def ws_run(ws_summary):
    grid = tuple(ws_summary.kappa0_ieo + tt / WS_N for tt in T_TILDES)
    t0 = time.perf_counter()
    res = run_experiment(ExperimentConfig(wellspec_instance(), (WS_N,), WS_M, 20240917, t_grid=grid))
    return res.per_n[0], time.perf_counter() - t0


@pytest.fixture(scope="module")
def ms_run(ms_summary):
    mid = 0.5 * (ms_summary.kappa0_ieo + ms_summary.kappa0_eto)
    t0 = time.perf_counter()
    res = run_experiment(ExperimentConfig(misspec_instance(), MS_NS, MS_M, 20240917, t_grid=(mid,)))
    return res.per_n, time.perf_counter() - t0


def _random_mixture_instances(count=5, seed=2024):
    rng = np.random.default_rng(seed)
    fam = ParamFamily.gaussian_location([[1.0]])
    out = []
    for i in range(count):
        k = int(rng.integers(2, 4))
        w = rng.dirichlet(np.ones(k))
        means = rng.uniform(-3, 3, size=(k, 1))
        var = rng.uniform(0.3, 2.0)
        model = CostModel.newsvendor([rng.uniform(0.5, 4.0)], [rng.uniform(0.5, 4.0)])
        out.append(Instance(f"random-{i}", fam, TrueDistribution.gaussian_mixture(w, means, [[var]]), model))
    return out


def test_criterion_1_zeroth_order():
    t0 = time.perf_counter()
    min_delta = min_ieo = math.inf
    for inst in [misspec_instance(), *_random_mixture_instances()]:
        k = kappas_and_delta(inst.truth, inst.family, inst.model)
        min_delta = min(min_delta, k.kappa0_eto - k.kappa0_ieo)
        min_ieo = min(min_ieo, k.kappa0_ieo)
    ws = wellspec_instance()
    s = analyze(ws.truth, ws.family, ws.model, lipschitz=False)
    ws_max = max(abs(s.kappa0_eto), abs(s.kappa0_ieo), abs(s.delta), abs(s.b0))
    elapsed = time.perf_counter() - t0
    ok = min_delta >= -1e-8 and min_ieo >= -1e-8 and ws_max <= 1e-6 and elapsed < 60
    record(1, ok, f"min kappa_ETO - kappa_IEO {min_delta:.3e}, min kappa_IEO {min_ieo:.1e}, "
                  f"well-specified max |floor| {ws_max:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_second_order_limits(ws_run, ws_summary):
    r, elapsed = ws_run
    ks_ieo = stats.kstest(WS_N * r.ieo.raw_regrets, stats.chi2(1, scale=0.626657).cdf).statistic
    ks_eto = stats.kstest(WS_N * r.eto.raw_regrets, stats.chi2(1, scale=0.398942).cdf).statistic
    ok = ks_ieo < 0.05 and ks_eto < 0.05 and elapsed < 300
    record(2, ok, f"KS IEO {ks_ieo:.4f}, KS ETO {ks_eto:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_rate_separation(ms_run, ms_summary):
    per_n, elapsed = ms_run
    rep = scaling_check(per_n, ms_summary)
    ok = abs(rep.slope_ieo + 1.0) <= 0.15 and abs(rep.slope_eto + 0.5) <= 0.15 and elapsed < 300
    record(3, ok, f"slope IEO {rep.slope_ieo:.3f}, slope ETO {rep.slope_eto:.3f}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_regime_delta_positive(ms_run, ms_summary):
    per_n, _ = ms_run
    r = next(x for x in per_n if x.n == 4000)
    mid = r.eto.t_grid[0]
    d_hat = float(r.diff.d[0])
    c = lower_bound_D(ms_summary, 4000, mid).detail["C"]
    ok = d_hat >= 0.95 and c >= 0.9
    record(4, ok, f"D_hat {d_hat:.4f}, C {c:.6f} at t = {mid:.5f}")
    assert ok


def test_criterion_5_regime_delta_zero(ws_run, ws_summary):
    r, _ = ws_run
    diff = r.diff
    ratio = 1.0 + ws_summary.tau1 / ws_summary.tau6
    mix = ChiSqMixture(tuple(ws_summary.lambda_ieo))
    parts, ok = [], True
    for tt, d_hat, ci in zip(T_TILDES, diff.d, diff.ci_halfwidth):
        p = interval_probability(mix, tt, ratio * tt).value
        good = d_hat <= 2 * ci and abs(-d_hat - p) <= 3 * ci
        ok &= bool(good)
        parts.append(f"t~={tt:g}: D_hat {d_hat:+.4f} vs -{p:.4f} (CI {ci:.4f})")
    record(5, ok, "; ".join(parts))
    assert ok


def test_criterion_6_psd_and_dominance(summaries):
    worst_eig, worst_viol = math.inf, 0.0
    for make in ALL_FIXTURES:
        s = summaries[make().name]
        tilde = (s.m1_ieo_tilde @ s.hess_v0_at_star @ s.m1_ieo_tilde
                 - s.m1_eto_tilde @ s.hess_v0_at_star @ s.m1_eto_tilde)
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(0.5 * (tilde + tilde.T)).min()))
    rng = np.random.default_rng(6)
    for make in WELL_SPECIFIED:
        s = summaries[make().name]
        g_eto, g_ieo = coupled_second_order_draws(s, 100_000, rng)
        rep = dominance_tests(g_eto, g_ieo, tol=1e-3)
        worst_viol = max(worst_viol, rep.first_order.max_violation)
        if not rep.first_order.holds:
            worst_viol = max(worst_viol, 1.0)
    ok = worst_eig >= -1e-6 and worst_viol <= 1e-3
    record(6, ok, f"min tilde eigenvalue {worst_eig:.3e}, max first-order violation {worst_viol:.1e}")
    assert ok


def _score_check() -> float:
    worst = 0.0
    cases = [
        (ParamFamily.gaussian_location([[2.0, 0.4], [0.4, 1.0]]), np.array([0.3, -1.2]), np.array([1.0, 0.5])),
        (ParamFamily.gaussian_full_mean(2), np.array([0.3, -1.2, 1.5, 0.7]), np.array([1.0, 0.5])),
    ]
    h = 1e-5
    for fam, theta, z in cases:
        g, _ = score_and_hessian(fam, theta, z)
        fd = np.array([(log_density(fam, theta + h * e, z) - log_density(fam, theta - h * e, z)) / (2 * h)
                       for e in np.eye(theta.size)])
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    return worst


def _jacobian_check() -> float:
    worst = 0.0
    loc = ParamFamily.gaussian_location([[1.0]])
    h = 1e-5
    for model in (CostModel.portfolio(0.5), CostModel.newsvendor([1.0], [3.0])):
        for theta in (-0.8, 0.0, 1.0):
            fd = (oracle_decision(model, loc, [theta + h]).omega - oracle_decision(model, loc, [theta - h]).omega) / (2 * h)
            jac = oracle_jacobian(model, loc, [theta])[0, 0]
            worst = max(worst, abs(jac - fd[0]) / abs(fd[0]))
    return worst


def _tv_check() -> float:
    loc = ParamFamily.gaussian_location([[1.0]])
    worst = 0.0
    for a, b in [(0.0, 2.0), (-1.0, 0.3), (0.5, 0.51), (1.0, 4.0)]:
        val, _ = integrate.quad(lambda x: abs(stats.norm.pdf(x, a) - stats.norm.pdf(x, b)), -30, 30,
                                points=[(a + b) / 2], epsabs=1e-12, limit=200)
        worst = max(worst, abs(0.5 * val - tv_distance(loc, [a], [b])))
    return worst


def _tail_bound_check() -> int:
    rng = np.random.default_rng(7)
    m = np.array([[1.0, 0.4], [-0.3, 0.8]])
    v = np.array([0.6, -1.0])
    x = rng.standard_normal((100_000, 2)) @ m  # rows are M'Y
    norms, proj = np.linalg.norm(x, axis=1), x @ v
    sd = float(np.linalg.norm(m @ v))
    violations = 0
    for t, s1 in zip(np.linspace(0.0, 4.0, 20), np.linspace(0.25 * sd, 3.0 * sd, 20)):
        s2 = s1 + 0.5 * sd
        b = gaussian_tail_bounds(m, v, t, s1, s2)
        violations += (norms >= t).mean() > b.norm_tail
        violations += (proj >= t).mean() > b.linear_tail
        violations += ((proj >= s1) & (proj <= s2)).mean() > b.interval_mass
    return int(violations)


def _mixture_law_check() -> float:
    rng = np.random.default_rng(8)
    a = np.array([[1.0, 0.3], [0.3, 0.5]])
    cov = np.array([[1.5, 0.4], [0.4, 0.8]])
    x = rng.multivariate_normal([0.0, 0.0], cov, size=100_000)
    q = np.einsum("ni,ij,nj->n", x, a, x)
    lam, _, _ = quadratic_form_decomposition(a, np.zeros(2), cov)
    ks_central = stats.kstest(q, lambda s: mixture_cdf(ChiSqMixture(tuple(lam)), s)).statistic
    mean = np.array([0.7, -0.4])
    x = rng.multivariate_normal(mean, cov, size=100_000)
    q = np.einsum("ni,ij,nj->n", x, a, x)
    lam, b, _ = quadratic_form_decomposition(a, mean, cov)
    u = rng.standard_normal((100_000, 2))
    ks_shifted = stats.ks_2samp(q, ((u + b) ** 2) @ lam).statistic
    return float(max(ks_central, ks_shifted))


def test_criterion_7_numerical_infrastructure():
    score, jac, tv = _score_check(), _jacobian_check(), _tv_check()
    violations, ks = _tail_bound_check(), _mixture_law_check()
    ok = score < 1e-6 and jac < 1e-4 and tv < 1e-4 and violations == 0 and ks < 0.01
    record(7, ok, f"score {score:.1e}, jacobian {jac:.1e}, TV {tv:.1e}, "
                  f"tail-bound violations {violations}, quadratic-form KS {ks:.4f}")
    assert ok


def test_criterion_8_generalization_bound():
    val = generalization_bound(1, 1, 1, 1, 1, 1, 1, 100, 2 / math.e)
    hand = 4 * math.sqrt(2) * 0.1 + 2 * math.sqrt(1 / 200)
    sweep = [generalization_bound(1, 1, 1, 1, 1, 1, 1, n, 2 / math.e) for n in (10**2, 10**4, 10**6)]
    ok = abs(val - hand) < 1e-9 and sweep[0] > sweep[1] > sweep[2]
    record(8, ok, f"value {val:.9f} vs {hand:.9f}; sweep {[round(x, 6) for x in sweep]}")
    assert ok


def test_criterion_9_reproducibility(tmp_path):
    inst = misspec_instance()
    blobs = {}
    for workers in (1, 8):
        res = run_experiment(ExperimentConfig(inst, (40, 80), 120, 99, t_points=11), workers=workers)
        out = tmp_path / f"w{workers}"
        out.mkdir()
        data = b""
        for r in res.per_n:
            write_curve_csv(out / f"tail_{r.n}.csv", r.eto, r.ieo)
            write_diff_csv(out / f"diff_{r.n}.csv", r.diff)
            data += (out / f"tail_{r.n}.csv").read_bytes() + (out / f"diff_{r.n}.csv").read_bytes()
        blobs[workers] = data
    ok = blobs[1] == blobs[8] and len(blobs[1]) > 0
    record(9, ok, f"{len(blobs[1])} CSV bytes, identical across 1 and 8 workers: {blobs[1] == blobs[8]}")
    assert ok
