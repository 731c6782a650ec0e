"""Rate sweeps over ``n`` and bias-variance sweeps over the width ``m``."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from ..bounds import delta1, delta2, plan_widths, rate_exponent
from ..discretize import build_fstar, l2_px_error, smallest_lambda
from ..erm import train
from ..netcore import lip_diff_constant, sup_norm_bound
from ..spectrum import feature_spectrum, fit_decay
from ..teacher import generate_dataset
from .config import ExperimentConfig
from .provenance import DATA, NODES, TRAIN, X_EVAL, X_FIT, task_seed

logger = logging.getLogger(__name__)

MIN_SLOPE_POINTS = 3


@dataclass
class SweepContext:
    """Teacher, reference samples and fitted decays shared by every cell of a sweep."""

    cfg: ExperimentConfig
    teacher: object
    xs_fit: np.ndarray
    xs_eval: np.ndarray
    spectra: list
    decays: list

    @classmethod
    def build(cls, cfg: ExperimentConfig, teacher=None) -> "SweepContext":
        t = teacher if teacher is not None else cfg.teacher.build()
        rng_fit = np.random.default_rng(task_seed(cfg.master_seed, X_FIT))
        rng_eval = np.random.default_rng(task_seed(cfg.master_seed, X_EVAL))
        xs_fit = t.sample_x(cfg.n_fit, rng_fit)
        xs_eval = t.sample_x(cfg.n_eval, rng_eval)
        spectra = [feature_spectrum(t, ell, xs_fit) for ell in range(2, t.L + 1)]
        decays = [tuple(fit_decay(sp)) for sp in spectra]
        return cls(cfg, t, xs_fit, xs_eval, spectra, decays)


def _run_cells(fn, ctx: SweepContext, tasks, threads: int) -> list:
    if threads <= 1 or len(tasks) <= 1:
        return [fn(ctx, *task) for task in tasks]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(ctx,)) as pool:
        return list(pool.map(_call_worker, [fn] * len(tasks), tasks))


_WORKER_CTX = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _call_worker(fn, task):
    return fn(_WORKER_CTX, *task)


def _sq_error(f, ctx: SweepContext) -> float:
    return l2_px_error(f, ctx.teacher, ctx.xs_eval)[0] ** 2


def _rate_cell(ctx: SweepContext, regime: str, n: int, i_seed: int) -> dict:
    cfg, t = ctx.cfg, ctx.teacher
    row = {"regime": regime, "n": n, "seed_index": i_seed}
    try:
        plan = plan_widths(ctx.decays, n, cfg.delta, regime)
        row.update(widths=plan.widths, lambdas=plan.lambdas)
        r_idx = ("tight", "loose").index(regime)
        c = build_fstar(t, plan.lambdas, plan.widths, cfg.delta, ctx.xs_fit,
                        seed=task_seed(cfg.master_seed, NODES, r_idx, n, i_seed))
        data = generate_dataset(t, n, cfg.sigma, seed=task_seed(cfg.master_seed, DATA, n, i_seed))
        res = train(data, c.net.widths, t.activation, t.budget,
                    cfg.train_config(task_seed(cfg.master_seed, TRAIN, r_idx, n, i_seed)), init_net=c.net)
        row.update(err2=_sq_error(res.net, ctx), err2_fstar=_sq_error(c.net, ctx),
                   risk_start=res.history[0], risk_final=res.history[-1],
                   epochs=res.epochs, stopped=res.stopped, error="")
    except Exception as exc:  # a failed cell is recorded and the sweep goes on
        logger.warning("rate cell %s n=%d seed=%d failed: %s", regime, n, i_seed, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def log_log_slope(x, y):
    """Least-squares slope of ``log y`` on ``log x`` and its standard error."""
    fit = stats.linregress(np.log(x), np.log(y))
    return float(fit.slope), float(fit.stderr)


@dataclass
class RateResult:
    decays: list
    cells: list
    summary: dict = field(default_factory=dict)
    regime_comparison: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def run_rate_sweep(cfg: ExperimentConfig, teacher=None, threads: int = 1) -> RateResult:
    """Median squared ``L2(P_X)`` error of the trained network per ``n`` and regime, with fitted slopes."""
    if len(cfg.n_grid) < 4 or cfg.seeds < 5:
        logger.warning("rate sweep expects at least 4 n values and 5 seeds (got %d and %d)",
                       len(cfg.n_grid), cfg.seeds)
    ctx = SweepContext.build(cfg, teacher)
    # seeds are keyed by n, so sweeps over different grids share data at common n
    tasks = [(regime, n, i_s) for regime in cfg.regimes for n in cfg.n_grid for i_s in range(cfg.seeds)]
    cells = _run_cells(_rate_cell, ctx, tasks, threads)
    result = RateResult([list(d) for d in ctx.decays], cells)
    s_max = max(s for _, s in ctx.decays)
    for regime in cfg.regimes:
        ns, med, med_star = [], [], []
        for n in cfg.n_grid:
            ok = [c for c in cells if c["regime"] == regime and c["n"] == n and not c["error"]]
            if ok:
                ns.append(n)
                med.append(float(np.median([c["err2"] for c in ok])))
                med_star.append(float(np.median([c["err2_fstar"] for c in ok])))
        entry = {"n": ns, "median_err2": med, "median_err2_fstar": med_star,
                 "predicted_exponent": rate_exponent(regime, s_max) if 0 < s_max < 1 else None,
                 "slope": None, "slope_se": None, "flag": ""}
        if len(ns) >= MIN_SLOPE_POINTS and all(v > 0 for v in med):
            entry["slope"], entry["slope_se"] = log_log_slope(ns, med)
            entry["slope_fstar"], entry["slope_fstar_se"] = log_log_slope(ns, med_star)
        else:
            entry["flag"] = f"fewer than {MIN_SLOPE_POINTS} usable n values; no slope"
        result.summary[regime] = entry
    if {"tight", "loose"} <= set(result.summary):
        t_s, l_s = result.summary["tight"], result.summary["loose"]
        if t_s["n"] and l_s["n"] and t_s["n"][-1] == l_s["n"][-1]:
            ok = t_s["median_err2"][-1] <= l_s["median_err2"][-1]
            result.regime_comparison = {"n": t_s["n"][-1], "tight": t_s["median_err2"][-1],
                                        "loose": l_s["median_err2"][-1], "tight_not_worse": ok}
            if not ok:
                logger.warning("at n=%d the tight plan's median error %.4g exceeds the loose plan's %.4g",
                               t_s["n"][-1], t_s["median_err2"][-1], l_s["median_err2"][-1])
    return result


def _bv_cell(ctx: SweepContext, m: int, i_seed: int) -> dict:
    cfg, t = ctx.cfg, ctx.teacher
    L, budget = t.L, t.budget
    row = {"m": m, "seed_index": i_seed}
    try:
        lambdas = [smallest_lambda(sp, m, cfg.delta) for sp in ctx.spectra]
        widths = [m] * (L - 1)
        c = build_fstar(t, lambdas, widths, cfg.delta, ctx.xs_fit,
                        seed=task_seed(cfg.master_seed, NODES, 2, m, i_seed))
        data = generate_dataset(t, cfg.n_bv, cfg.sigma, seed=task_seed(cfg.master_seed, DATA, 0, i_seed))
        res = train(data, c.net.widths, t.activation, budget,
                    cfg.train_config(task_seed(cfg.master_seed, TRAIN, 2, m, i_seed)), init_net=c.net)
        full = list(c.net.widths)
        g_hat = lip_diff_constant(budget, L, t.activation)
        r_inf = sup_norm_bound(budget, L, t.activation)[1]
        sigma = cfg.sigma if cfg.sigma > 0 else 1e-12
        d_fs = l2_px_error(res.net, t, ctx.xs_eval)[0]
        row.update(lambdas=lambdas, bias=_sq_error(c.net, ctx), excess_risk=d_fs ** 2,
                   variance_proxy=float(np.mean((res.net(ctx.xs_eval) - c.net(ctx.xs_eval)) ** 2)),
                   delta1_sq=delta1(budget, L, lambdas) ** 2,
                   delta2_sq=delta2(budget, L, full, cfg.n_bv, sigma, g_hat, r_inf) ** 2, error="")
    except Exception as exc:
        logger.warning("bias-variance cell m=%d seed=%d failed: %s", m, i_seed, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


BV_COLUMNS = ("m", "lambda_min", "bias", "excess_risk", "variance_proxy", "delta1_sq", "delta2_sq", "n_ok")


def run_bias_variance_sweep(cfg: ExperimentConfig, teacher=None, threads: int = 1):
    """Per width ``m`` (all hidden layers), medians over seeds of the empirical bias
    ``||f* - f^o||^2``, the excess risk ``||f_hat - f^o||^2``, the variance proxy
    ``||f_hat - f*||^2`` and the bound terms ``delta1^2``, ``delta2^2``.

    ``lambda_l`` is the smallest value for which ``m`` meets the width condition.
    Returns ``(rows, cells)``; ``rows`` follow ``BV_COLUMNS``.
    """
    ctx = SweepContext.build(cfg, teacher)
    tasks = [(m, i_s) for m in cfg.m_grid for i_s in range(cfg.seeds)]
    cells = _run_cells(_bv_cell, ctx, tasks, threads)
    rows = []
    for m in cfg.m_grid:
        ok = [c for c in cells if c["m"] == m and not c["error"]]
        if not ok:
            rows.append((m, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, 0))
            continue
        med = {k: float(np.median([c[k] for c in ok]))
               for k in ("bias", "excess_risk", "variance_proxy", "delta1_sq", "delta2_sq")}
        rows.append((m, min(ok[0]["lambdas"]), med["bias"], med["excess_risk"], med["variance_proxy"],
                     med["delta1_sq"], med["delta2_sq"], len(ok)))
    return rows, cells
