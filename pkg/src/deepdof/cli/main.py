"""``deepdof`` command line: teacher generation, spectra, discretisation, training, bounds and sweeps."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..bounds import bound_report, plan_widths
from ..discretize import auto_widths, build_fstar, l2_px_error
from ..erm import TrainConfig, train
from ..netcore import Activation, FiniteNetwork, NormBudget
from ..spectrum import dof, dof_from_decay, feature_spectrum, fit_decay
from ..teacher import Dataset, TeacherNetwork, generate_dataset
from .config import ExperimentConfig, TeacherSpec
from .experiments import BV_COLUMNS, run_bias_variance_sweep, run_rate_sweep
from .provenance import TEACHER, X_FIT, provenance, task_seed, write_csv, write_json

logger = logging.getLogger("deepdof")


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list:
    return [int(v) for v in text.replace(",", " ").split()]


def _json_arg(text: str) -> dict:
    """Inline JSON or a path to a JSON file."""
    p = Path(text)
    return json.loads(p.read_text()) if p.exists() else json.loads(text)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def _out(args, name: str) -> Path:
    return Path(args.out) / name


def cmd_gen_teacher(args) -> int:
    cfg = _load_config(args)
    spec = cfg.teacher
    if args.L is not None:
        spec.L = args.L
    if args.resolutions is not None:
        spec.resolutions = _ints(args.resolutions)
    if args.d_x is not None:
        spec.d_x = args.d_x
    if args.activation is not None:
        spec.activation = {"kind": args.activation}
    if args.budget is not None:
        spec.budget = _json_arg(args.budget)
    if args.decay_s is not None:
        spec.decay_s = None if args.decay_s <= 0 else args.decay_s
    spec.seed = task_seed(cfg.master_seed, TEACHER)
    spec.file = None
    t = spec.build()
    payload = t.to_dict()
    path = write_json(_out(args, "teacher.json"), payload, provenance("gen-teacher", spec.__dict__, cfg.master_seed))
    print(path)
    return 0


def _teacher(args) -> TeacherNetwork:
    return TeacherNetwork.from_dict(json.loads(Path(args.teacher).read_text()))


def _xsample(t: TeacherNetwork, n: int, seed: int) -> np.ndarray:
    return t.sample_x(n, np.random.default_rng(task_seed(seed, X_FIT)))


def cmd_dof_curve(args) -> int:
    t = _teacher(args)
    seed = 0 if args.seed is None else args.seed
    xs = _xsample(t, args.xsample, seed)
    rows, fits = [], {}
    for ell in range(2, t.L + 1):
        sp = feature_spectrum(t, ell, xs)
        fit = fit_decay(sp)
        fits[ell] = {"a": fit.a, "s": fit.s, "n_points": fit.n_points, "in_range": fit.in_range}
        lams = _floats(args.lambdas) if args.lambdas else list(np.geomspace(sp.mu[0], sp.mu[0] * 1e-4, 25))
        for lam in lams:
            est = dof_from_decay(fit.a, fit.s, lam) if fit.in_range else float("nan")
            rows.append((ell, float(lam), dof(sp, lam), est))
    prov = provenance("dof-curve", vars(args), seed)
    write_csv(_out(args, "dof_curve.csv"), ("layer", "lambda", "dof", "dof_from_decay"), rows, prov)
    print(write_json(_out(args, "decay_fits.json"), {"fits": fits}, prov))
    return 0


def cmd_discretize(args) -> int:
    t = _teacher(args)
    seed = 0 if args.seed is None else args.seed
    xs = _xsample(t, args.xsample, seed)
    if args.lambda_ == "auto":
        decays = [tuple(fit_decay(feature_spectrum(t, ell, xs))) for ell in range(2, t.L + 1)]
        lambdas = plan_widths(decays, args.n, args.delta, "tight").lambdas
    else:
        lambdas = _floats(args.lambda_)
        if len(lambdas) == 1:
            lambdas = lambdas * (t.L - 1)
    widths = _ints(args.widths) if args.widths else auto_widths(t, lambdas, args.delta, xs)
    c = build_fstar(t, lambdas, widths, args.delta, xs, seed=seed)
    x_eval = t.sample_x(args.xsample, np.random.default_rng(task_seed(seed, X_FIT, 1)))
    err, se = l2_px_error(c.net, t, x_eval)
    from ..bounds import delta1
    report = c.report()
    report.update(l2_error=err, l2_error_se=se, delta1_bound=delta1(t.budget, t.L, lambdas),
                  in_class=c.net.in_class(t.budget))
    prov = provenance("discretize", vars(args), seed)
    write_json(_out(args, "fstar.json"), c.net.to_dict(), prov)
    print(write_json(_out(args, "discretize_report.json"), report, prov))
    return 0


def cmd_train(args) -> int:
    data = Dataset.load(args.data)
    budget = NormBudget.from_dict(_json_arg(args.budget))
    seed = 0 if args.seed is None else args.seed
    init_net = FiniteNetwork.from_dict(_json_arg(args.fstar)) if args.fstar else None
    if args.init == "fstar" and init_net is None:
        raise SystemExit("--init fstar needs --fstar <network json>")
    if args.widths:
        widths = _ints(args.widths)
    elif init_net is not None:
        widths = list(init_net.widths)
    else:
        raise SystemExit("need --widths or --fstar")
    act = init_net.activation if init_net is not None else Activation(args.activation)
    cfg = TrainConfig(max_epochs=args.epochs, step_size=args.step, init="fstar_warmstart" if args.init == "fstar"
                      else "random_in_F", seed=seed)
    res = train(data, widths, act, budget, cfg, init_net=init_net)
    prov = provenance("train", vars(args), seed)
    write_csv(_out(args, "history.csv"), ("epoch", "risk"), list(enumerate(res.history)), prov)
    print(write_json(_out(args, "fhat.json"), {**res.net.to_dict(), "epochs": res.epochs, "stopped": res.stopped}, prov))
    return 0


def cmd_bounds_report(args) -> int:
    arch = _json_arg(args.arch)
    budget = NormBudget.from_dict(_json_arg(args.budget))
    widths = arch["widths"]
    act = Activation.from_dict(arch.get("activation", {"kind": "tanh"}))
    eps = _floats(args.eps)
    rep = bound_report(budget, widths, _floats(args.lambdas), args.n, args.sigma, act, eps,
                       r=args.r, r_tilde=args.r_tilde, appendix=args.appendix)
    prov = provenance("bounds-report", vars(args), args.seed)
    write_csv(_out(args, "covering.csv"), ("eps", "covering_log"), rep.covering_log, prov)
    print(write_json(_out(args, "bound_report.json"), rep.to_dict(), prov))
    return 0


def cmd_plan(args) -> int:
    if args.teacher:
        t = _teacher(args)
        xs = _xsample(t, args.xsample, 0 if args.seed is None else args.seed)
        decays = [tuple(fit_decay(feature_spectrum(t, ell, xs))) for ell in range(2, t.L + 1)]
    elif args.decays:
        decays = [tuple(float(v) for v in pair.split(":")) for pair in args.decays.split(",")]
    else:
        raise SystemExit("need --teacher or --decays a:s[,a:s...]")
    plans = {r: plan_widths(decays, args.n, args.delta, r).to_dict() for r in ("tight", "loose")}
    print(write_json(_out(args, "plan.json"), plans, provenance("plan", vars(args), args.seed)))
    return 0


def cmd_rate_sweep(args) -> int:
    cfg = _load_config(args)
    res = run_rate_sweep(cfg, threads=args.threads)
    prov = provenance("rate-sweep", cfg.to_dict(), cfg.master_seed)
    cols = ("regime", "n", "seed_index", "widths", "lambdas", "err2", "err2_fstar", "risk_start",
            "risk_final", "epochs", "stopped", "error")
    write_csv(_out(args, "rate_cells.csv"), cols, [[c.get(k, "") for k in cols] for c in res.cells], prov)
    print(write_json(_out(args, "rate_summary.json"),
                     {"decays": res.decays, "summary": res.summary, "regime_comparison": res.regime_comparison}, prov))
    return 0


def cmd_bv_sweep(args) -> int:
    cfg = _load_config(args)
    rows, cells = run_bias_variance_sweep(cfg, threads=args.threads)
    prov = provenance("bv-sweep", cfg.to_dict(), cfg.master_seed)
    print(write_csv(_out(args, "bias_variance.csv"), BV_COLUMNS, rows, prov))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="deepdof", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-teacher", parents=[common], help="generate a teacher network")
    g.add_argument("--L", type=int)
    g.add_argument("--resolutions", help="hidden grid sizes, e.g. '512,512'")
    g.add_argument("--d-x", dest="d_x", type=int)
    g.add_argument("--activation", choices=("relu", "leaky_relu", "sigmoid", "tanh", "elu"))
    g.add_argument("--budget", help="NormBudget as JSON text or file")
    g.add_argument("--decay-s", dest="decay_s", type=float, help="target eigen-decay exponent (<= 0 disables)")
    g.set_defaults(func=cmd_gen_teacher)

    d = sub.add_parser("dof-curve", parents=[common], help="degree of freedom against lambda per layer")
    d.add_argument("--teacher", required=True)
    d.add_argument("--lambdas", help="lambda grid; default spans four decades below mu_1")
    d.add_argument("--xsample", type=int, default=4096)
    d.set_defaults(func=cmd_dof_curve)

    z = sub.add_parser("discretize", parents=[common], help="construct the finite approximant")
    z.add_argument("--teacher", required=True)
    z.add_argument("--lambda", dest="lambda_", default="auto", help="per-layer lambdas, or 'auto'")
    z.add_argument("--widths", help="per-layer widths; default min_width(dof(lambda))")
    z.add_argument("--delta", type=float, default=0.1)
    z.add_argument("--n", type=int, default=1000, help="sample size used by --lambda auto")
    z.add_argument("--xsample", type=int, default=4096)
    z.set_defaults(func=cmd_discretize)

    t = sub.add_parser("train", parents=[common], help="projected-gradient ERM on a dataset")
    t.add_argument("--data", required=True, help="CSV with columns x_1..x_d,y")
    t.add_argument("--budget", required=True)
    t.add_argument("--widths")
    t.add_argument("--activation", default="tanh")
    t.add_argument("--init", choices=("fstar", "random"), default="random")
    t.add_argument("--fstar", help="network JSON used as warm start")
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--step", type=float, default=1e-2)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bounds-report", parents=[common], help="bound quantities for an architecture")
    b.add_argument("--arch", required=True, help='JSON {"widths": [...], "activation": {...}}')
    b.add_argument("--budget", required=True)
    b.add_argument("--lambdas", required=True)
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--sigma", type=float, default=1.0)
    b.add_argument("--eps", default="1,0.1,0.01,0.001")
    b.add_argument("--r", type=float, default=1.0)
    b.add_argument("--r-tilde", dest="r_tilde", type=float, default=2.0)
    b.add_argument("--appendix", action="store_true", help="use the (1 + r_tilde) variant, r_tilde in (0, 1]")
    b.set_defaults(func=cmd_bounds_report)

    q = sub.add_parser("plan", parents=[common], help="tight and loose width plans")
    q.add_argument("--teacher")
    q.add_argument("--decays", help="a:s per hidden layer, comma separated")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--delta", type=float, default=0.1)
    q.add_argument("--xsample", type=int, default=4096)
    q.set_defaults(func=cmd_plan)

    r = sub.add_parser("rate-sweep", parents=[common], help="error against n for each regime")
    r.set_defaults(func=cmd_rate_sweep)
    v = sub.add_parser("bv-sweep", parents=[common], help="bias and variance against width")
    v.set_defaults(func=cmd_bv_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
