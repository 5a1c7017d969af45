"""Replicated finite-sample experiments and empirical regret tails.

Each replication draws one dataset from its own random stream and fits both
estimators on it, so the two tail curves are coupled through common random
numbers.  Results are folded in replication order, which makes the output
independent of the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .config import Instance
from .core_model import RngStream
from .decision_oracle import TrueOptimum, raw_regret, true_optimum
from .errors import ExperimentError, RegretDissectError
from .estimators import fit_eto, fit_ieo

log = logging.getLogger(__name__)

CSV_HEADER = ("t", "p_eto", "ci_eto", "p_ieo", "ci_ieo", "d", "ci_d")
REGRET_FLOOR = -1e-8
MAX_FAILURE_FRACTION = 0.01
Z95 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    instance: Instance
    n_list: tuple[int, ...]
    replications: int
    base_seed: int
    t_grid: tuple[float, ...] | None = None  # None: derived from the limit laws per n
    t_points: int = 101
    n_starts: int = 5

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        if self.replications < 100:
            raise ValueError("at least 100 replications are required")
        if not self.n_list or any(a >= b for a, b in zip(self.n_list, self.n_list[1:])) or self.n_list[0] < 1:
            raise ValueError("n_list must be strictly increasing and positive")
        if self.t_grid is not None:
            t = tuple(float(x) for x in self.t_grid)
            if any(a >= b for a, b in zip(t, t[1:])):
                raise ValueError("t_grid must be strictly increasing")
            object.__setattr__(self, "t_grid", t)


@dataclass
class TailCurve:
    method: str
    n: int
    t_grid: np.ndarray
    probs: np.ndarray
    ci_halfwidth: np.ndarray
    raw_regrets: np.ndarray

    @classmethod
    def from_regrets(cls, method: str, n: int, t_grid, regrets) -> "TailCurve":
        t_grid = np.asarray(t_grid, dtype=float)
        r = np.asarray(regrets, dtype=float)
        if r.size == 0:
            raise ExperimentError("no successful replications")
        probs = (r[None, :] >= t_grid[:, None]).mean(axis=1)
        half = Z95 * np.sqrt(probs * (1.0 - probs) / r.size)
        return cls(method, n, t_grid, probs, half, r)

    def to_dict(self, raw: bool = False) -> dict:
        out = {
            "method": self.method,
            "n": self.n,
            "t_grid": self.t_grid.tolist(),
            "probs": self.probs.tolist(),
            "ci_halfwidth": self.ci_halfwidth.tolist(),
            "replications": int(self.raw_regrets.size),
        }
        if raw:
            out["raw_regrets"] = self.raw_regrets.tolist()
        return out


@dataclass
class DiffCurve:
    t_grid: np.ndarray
    d: np.ndarray
    ci_halfwidth: np.ndarray
    metadata: dict = field(default_factory=dict)


def diff_curve(eto: TailCurve, ieo: TailCurve) -> DiffCurve:
    """``P(R_ETO >= t) - P(R_IEO >= t)`` with half-widths added in quadrature.

    The quadrature rule ignores the positive CRN correlation, so the reported
    half-width is conservative.
    """
    if eto.n != ieo.n or eto.t_grid.shape != ieo.t_grid.shape or np.any(eto.t_grid != ieo.t_grid):
        raise ValueError("tail curves must share n and the threshold grid")
    return DiffCurve(
        eto.t_grid.copy(),
        eto.probs - ieo.probs,
        np.hypot(eto.ci_halfwidth, ieo.ci_halfwidth),
        {"pairing": "common random numbers", "n": eto.n},
    )


@dataclass
class SampleSizeResult:
    n: int
    eto: TailCurve
    ieo: TailCurve
    failures: int
    failure_fraction: float
    min_raw_regret: float

    @property
    def diff(self) -> DiffCurve:
        return diff_curve(self.eto, self.ieo)


@dataclass
class ExperimentResult:
    per_n: list[SampleSizeResult]
    metadata: dict

    def pairs(self) -> list[tuple[TailCurve, TailCurve]]:
        return [(r.eto, r.ieo) for r in self.per_n]


# -- replication workers --------------------------------------------------------


def replication_stream(base_seed: int, n_index: int, m: int) -> RngStream:
    return RngStream(base_seed, m, namespace=(n_index,))


def _replicate(inst: Instance, optimum: TrueOptimum, n: int, stream: RngStream, n_starts: int):
    data = inst.truth.sample(n, stream)
    eto = fit_eto(data, inst.family, inst.model)
    ieo = fit_ieo(data, inst.family, inst.model, n_starts=n_starts)
    if eto.dataset_digest != ieo.dataset_digest:
        raise AssertionError("ETO and IEO were fitted on different datasets")
    return (
        raw_regret(inst.model, inst.truth, eto.omega_hat, optimum),
        raw_regret(inst.model, inst.truth, ieo.omega_hat, optimum),
    )


def _run_block(args):
    inst, optimum, n, n_index, base_seed, start, stop, n_starts = args
    out = np.full((stop - start, 2), np.nan)
    errors = []
    for k, m in enumerate(range(start, stop)):
        try:
            out[k] = _replicate(inst, optimum, n, replication_stream(base_seed, n_index, m), n_starts)
        except RegretDissectError as exc:
            errors.append((m, f"{type(exc).__name__}: {exc}"))
    return out, errors


def _blocks(total: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(total / (4 * max(workers, 1))))
    return [(a, min(a + size, total)) for a in range(0, total, size)]


def default_t_grid(kappa0_eto: float, ieo_q99: float, n: int, points: int = 101) -> np.ndarray:
    """``points`` thresholds on ``[0, kappa0_eto + 5 q99(G_IEO) / n]``."""
    return np.linspace(0.0, kappa0_eto + 5.0 * ieo_q99 / n, points)


def run_experiment(config: ExperimentConfig, workers: int = 1, summary=None) -> ExperimentResult:
    """Run every (n, replication) pair and aggregate tail curves.

    ``summary`` (an AsymptoticSummary) is needed only when the threshold grid
    is derived automatically; it is computed on demand.
    """
    inst = config.instance
    optimum = true_optimum(inst.model, inst.truth)
    meta = {"base_seed": config.base_seed, "replications": config.replications, "n_list": list(config.n_list)}
    q99 = None
    if config.t_grid is None:
        from .asymptotics import ChiSqMixture, analyze, mixture_quantile

        summary = summary or analyze(inst.truth, inst.family, inst.model, lipschitz=False)
        q99 = mixture_quantile(ChiSqMixture(tuple(max(w, 0.0) for w in summary.lambda_ieo)), 0.99)
        meta["t_grid_rule"] = f"linspace(0, kappa0_eto + 5*q99(G_IEO)/n, {config.t_points})"
        meta["kappa0_eto"], meta["ieo_q99"] = summary.kappa0_eto, q99
    else:
        meta["t_grid_rule"] = "user-supplied"

    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        results = []
        for n_index, n in enumerate(config.n_list):
            blocks = _blocks(config.replications, workers)
            args = [(inst, optimum, n, n_index, config.base_seed, a, b, config.n_starts) for a, b in blocks]
            parts = list(executor.map(_run_block, args)) if executor else [_run_block(a) for a in args]
            regrets = np.concatenate([p[0] for p in parts])
            errors = [e for p in parts for e in p[1]]
            ok = ~np.isnan(regrets).any(axis=1)
            frac = 1.0 - ok.mean()
            for m, msg in errors[:5]:
                log.warning("n=%d replication %d failed: %s", n, m, msg)
            if frac > MAX_FAILURE_FRACTION:
                raise ExperimentError(f"n={n}: {frac:.2%} of replications failed (limit 1%)")
            good = regrets[ok]
            floor = float(good.min()) if good.size else 0.0
            if floor < REGRET_FLOOR:
                raise ExperimentError(f"n={n}: raw regret {floor:.3e} is below the floor {REGRET_FLOOR:g}")
            good = np.clip(good, 0.0, None)
            grid = (np.asarray(config.t_grid) if config.t_grid is not None
                    else default_t_grid(meta["kappa0_eto"], q99, n, config.t_points))
            results.append(SampleSizeResult(
                n,
                TailCurve.from_regrets("ETO", n, grid, good[:, 0]),
                TailCurve.from_regrets("IEO", n, grid, good[:, 1]),
                int((~ok).sum()),
                float(frac),
                floor,
            ))
    finally:
        if executor:
            executor.shutdown()
    return ExperimentResult(results, meta)


# -- serialization --------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_curve_csv(path: str | Path, eto: TailCurve, ieo: TailCurve) -> None:
    diff = diff_curve(eto, ieo)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, t in enumerate(diff.t_grid):
            w.writerow([_fmt(v) for v in (t, eto.probs[i], eto.ci_halfwidth[i], ieo.probs[i],
                                           ieo.ci_halfwidth[i], diff.d[i], diff.ci_halfwidth[i])])


def write_diff_csv(path: str | Path, diff: DiffCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "d", "ci_d"))
        for row in zip(diff.t_grid, diff.d, diff.ci_halfwidth):
            w.writerow([_fmt(v) for v in row])


def write_curves_json(path: str | Path, res: SampleSizeResult, raw: bool = False) -> None:
    payload = {
        "n": res.n,
        "eto": res.eto.to_dict(raw),
        "ieo": res.ieo.to_dict(raw),
        "failures": res.failures,
        "failure_fraction": res.failure_fraction,
        "min_raw_regret": res.min_raw_regret,
        "pairing": "common random numbers",
    }
    Path(path).write_text(json.dumps(payload, indent=1))


# -- convergence diagnostics ------------------------------------------------------


@dataclass
class ScalingReport:
    n_list: list[int]
    ks_ieo: list[float]
    ks_eto_first_order: list[float] | None
    eto_first_order_skipped: str | None
    slope_ieo: float
    slope_eto: float
    medians_ieo: list[float]
    medians_eto: list[float]


def _loglog_slope(ns, values) -> float:
    x, y = np.log(np.asarray(ns, float)), np.log(np.asarray(values, float))
    return float(np.polyfit(x, y, 1)[0])


def scaling_check(results: list[SampleSizeResult], summary) -> ScalingReport:
    """Distributional and rate checks of the regret against its limits.

    Rates use the median of ``|R - kappa0|``; for IEO this equals the median
    of ``R - kappa0`` because the IEO regret never drops below its floor.
    """
    from .asymptotics import ChiSqMixture, mixture_cdf

    if len(results) < 3:
        raise ValueError("scaling checks need at least three sample sizes")
    mix = ChiSqMixture(tuple(max(w, 0.0) for w in summary.lambda_ieo))
    ns = [r.n for r in results]
    ks_ieo, ks_eto, med_ieo, med_eto = [], [], [], []
    sd = summary.eto_first_order_sd
    skipped = None
    if sd <= 1e-10:
        skipped = "gradient of v0 at theta^KL vanishes; the sqrt(n) ETO term is degenerate"
    for r in results:
        x = r.n * (r.ieo.raw_regrets - summary.kappa0_ieo)
        ks_ieo.append(float(stats.kstest(x, lambda v: mixture_cdf(mix, v)).statistic))
        if skipped is None:
            y = math.sqrt(r.n) * (r.eto.raw_regrets - summary.kappa0_eto)
            ks_eto.append(float(stats.kstest(y, stats.norm(scale=sd).cdf).statistic))
        med_ieo.append(float(np.median(np.abs(r.ieo.raw_regrets - summary.kappa0_ieo))))
        med_eto.append(float(np.median(np.abs(r.eto.raw_regrets - summary.kappa0_eto))))
    return ScalingReport(
        ns, ks_ieo, ks_eto if skipped is None else None, skipped,
        _loglog_slope(ns, med_ieo), _loglog_slope(ns, med_eto), med_ieo, med_eto,
    )
