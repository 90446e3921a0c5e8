"""Command line entry point: ``worstrisk <subcommand> [--seed S] [--out-dir D] [--threads T]``.

Exit status is 1 iff an acceptance check evaluated by the subcommand fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bounds import (BoundInputs, concentration_rhs, conditional_qvariance_mc, qvariance_bound,
                     risk_concentration_rhs)
from .estimator import empirical_risk, gram_summary, plug_in_estimate
from .harness import (ExperimentConfig, RunReport, _plain, format_cell, ingest_csv,
                      mc_oracle_probability, parameter_event, risk_event, run_cells,
                      run_experiment, write_csv)
from .population import WeightVector, minimal_risk, minimizer
from .simulation import ModelConfig, Simulator, load_model_config, reference_config, replicate_seed


def _model(args) -> ModelConfig:
    cfg = reference_config() if args.model is None else load_model_config(args.model)
    if args.seed is None:
        # a seed given in the model file is the default; otherwise 0
        args.seed = 0 if cfg.seed is None else cfg.seed
    return cfg


def _weights(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, obj):
    path.write_text(json.dumps(_plain(obj), indent=1, sort_keys=True))


def cmd_simulate(args) -> int:
    cfg = _model(args)
    n = args.n if len(args.n) > 1 else args.n * (cfg.k + 1)
    data = Simulator(cfg).data(n, args.seed)
    out = _out(args)
    write_csv(data, out)
    _dump(out / "model.json", {"seed": args.seed, "n": n, "model": cfg.to_dict()})
    print(f"wrote {len(data)} environments to {out}")
    return 0


def cmd_estimate(args) -> int:
    if args.seed is None:
        args.seed = 0
    data = ingest_csv(args.data_dir)
    k = len(data) - 1
    w = WeightVector.uniform(k) if args.weights is None else WeightVector.normalized(args.weights)
    s = gram_summary(data, w)
    rows = []
    for g in args.gamma:
        est = plug_in_estimate(s, g)
        er = empirical_risk(data, est.beta_hat, w, g)
        rows.append({"gamma": g, "beta_hat": est.beta_hat, "risk_hat": est.risk_hat,
                     "gram_invertible": est.gram_invertible, "gram_condition": est.gram_condition,
                     "used_pseudo_inverse": est.used_pseudo_inverse, "risk_plus": er.plus,
                     "risk_delta": er.delta})
    path = Path(args.out) if args.out else _out(args) / "estimate.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    _dump(path, {"seed": args.seed, "data_dir": str(args.data_dir), "n": s.n, "w": w.w,
                 "estimates": rows})
    for r in rows:
        print(f"gamma={r['gamma']:g} beta_hat={np.array2string(r['beta_hat'], precision=6)} "
              f"risk_hat={r['risk_hat']:.6g}")
    return 0


def _read_grid(path, k):
    cells = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row = {key.strip(): v.strip() for key, v in row.items() if v is not None and v.strip()}
            if "n" in row:
                n = [float(row.pop("n"))] * (k + 1)
            else:
                n = [float(row.pop(f"n{i}")) for i in range(k + 1)]
            cells.append((n, {key: float(v) for key, v in row.items()}))
    return cells


def cmd_bounds(args) -> int:
    cfg = _model(args)
    m, tail, sim = cfg.moments(), cfg.gaussian_tail(), Simulator(cfg)
    cells = _read_grid(args.grid, cfg.k)

    def cell(item):
        j, (n, par) = item
        g = par.pop("gamma", 1.0)
        kw = {key: par[key] for key in ("q", "zeta", "zeta_prime", "C") if key in par}
        inp = BoundInputs.from_moments(m, g, c=par.get("c", 1.0), delta=par.get("delta", 0.5),
                                       alpha=par.get("alpha", 0.1), n=n, **kw)
        seed = replicate_seed(args.seed, j)
        f = se = None
        if args.theorem == "3":
            rep = qvariance_bound(inp, tail)
            if args.mc_seeds:
                f, _ = conditional_qvariance_mc(sim.sampler(), g, inp.C, inp.q, n, args.mc_seeds, seed)
        else:
            if args.theorem == "2":
                rep = risk_concentration_rhs(inp, tail)
                ev = risk_event(minimal_risk(m, g), g, inp.c)
            else:
                rep = concentration_rhs(inp, tail, {"1a": "moment-threshold", "1b": "weak-Lzeta"}[args.theorem])
                ev = parameter_event(minimizer(m, g), g, inp.c)
            if args.mc_seeds:
                f, se = mc_oracle_probability(ev, sim.sampler(), n, args.mc_seeds, seed)
        row = {"gamma": g, "c": inp.c, "delta": inp.delta, "alpha": inp.alpha}
        row.update({f"n{i}": int(v) for i, v in enumerate(n)})
        row.update(lhs_freq=f, lhs_se=se, rhs=rep.rhs, log_rhs=rep.log_rhs, applicable=rep.applicable)
        ok = f is None or not rep.applicable or f <= rep.rhs + 3 * (se or 0.0)
        return row, ok

    results = run_cells(cell, list(enumerate(cells)), args.threads)
    rows = [r for r, _ in results]
    rep = RunReport({"theorem": args.theorem, "grid": str(args.grid), "seed": args.seed,
                     "mc_seeds": args.mc_seeds}, rows,
                    {"dominance_on_applicable": all(ok for _, ok in results)})
    rep.write(_out(args))
    sys.stdout.write(rep.to_csv())
    return 0 if rep.passed else 1


def cmd_sequential(args) -> int:
    _model(args)
    rep = run_experiment(ExperimentConfig(
        "sequential", seed=args.seed, gammas=tuple(args.gamma), seeds=args.runs, model=args.model,
        out_dir=args.out_dir, threads=args.threads,
        params={"delta": args.delta, "step": args.step, "length": args.length,
                "m_max": args.m_max, "schedule": args.schedule}))
    show = ("gamma", "run", "m", "tau", "n", "total", "variance_bound", "abs_det", "hadamard_bound")
    for r in rep.rows:
        print(", ".join(f"{k}={format_cell(r.get(k))}" for k in show))
    for name, ok in rep.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if rep.passed else 1


def cmd_consistency(args) -> int:
    _model(args)
    rep = run_experiment(ExperimentConfig(
        "consistency", seed=args.seed, gammas=tuple(args.gamma), seeds=args.runs,
        n_grid=tuple(args.n_grid), model=args.model, out_dir=args.out_dir, threads=args.threads))
    sys.stdout.write(rep.to_csv())
    for name, ok in rep.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if rep.passed else 1


def cmd_acceptance(args) -> int:
    args.seed = 0 if args.seed is None else args.seed
    from .checks import run_all
    results = run_all(threads=args.threads)
    _dump(_out(args) / "acceptance.json",
          {r.name: {"passed": r.passed, **{k: v for k, v in r.detail.items() if k != "rows"}}
           for r in results})
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="master seed (default: the model file's seed, else 0)")
    common.add_argument("--out-dir", default="out")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--model", default=None, help="model JSON (default: reference model)")

    ap = argparse.ArgumentParser(prog="worstrisk", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="sample env_<i>.csv files")
    p.add_argument("--n", type=int, nargs="+", default=[1000])
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="plug-in estimate from CSV data")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--gamma", type=float, nargs="+", default=[1.0])
    p.add_argument("--weights", type=_weights, default=None, help="comma list w1,..,wk (normalized)")
    p.add_argument("--out", default=None, help="report path (default <out-dir>/estimate.json)")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("bounds", parents=[common], help="evaluate a bound over a grid")
    p.add_argument("--theorem", choices=["1a", "1b", "2", "3"], required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--mc-seeds", type=int, default=0)
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("sequential", parents=[common], help="stopping times and variance bounds")
    p.add_argument("--gamma", type=float, nargs="+", default=[1.0])
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--step", type=int, default=50)
    p.add_argument("--length", type=int, default=40)
    p.add_argument("--schedule", default=None, help="CSV of cumulative counts n0..nk per index")
    p.add_argument("--m-max", type=int, default=1)
    p.add_argument("--runs", type=int, default=10)
    p.set_defaults(fn=cmd_sequential)

    p = sub.add_parser("consistency", parents=[common], help="RMSE rate over an n grid")
    p.add_argument("--gamma", type=float, nargs="+", default=[1.0])
    p.add_argument("--n-grid", type=int, nargs="+", default=[500, 2000, 8000, 32000])
    p.add_argument("--runs", type=int, default=200)
    p.set_defaults(fn=cmd_consistency)

    p = sub.add_parser("acceptance", parents=[common], help="run every acceptance check")
    p.set_defaults(fn=cmd_acceptance)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
