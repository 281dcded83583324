"""Command-line entry point: ``bmsdp <subcommand> [options]``.

Subcommands read instances in the JSON layout of :mod:`bmsdp.harness.instances`
and write JSON (single solves, certificates, bounds) or CSV (experiments).
``--config`` points to a JSON file: pipeline settings for ``solve``,
``feasify`` and ``certify``, an experiment config for ``phase-transition``
and ``smoothing``, and a bound query for ``bounds``.
"""
from __future__ import annotations

import argparse
from contextlib import nullcontext
import json
import logging
from pathlib import Path
import sys

import numpy as np

from ..bm import end_to_end, random_factor, solve_feasibility, solve_sdp_bm
from ..certificates import ToleranceBundle, check_afac_bm, check_approx_optimal_sdp, sigma_p
from ..core import make_rng
from ..theory import BoundQuery, mc_tube_probability, probability_bound, tube_bound
from .experiments import ExperimentConfig, pipeline_from_dict, run_phase_transition, run_smoothing_experiment
from .instances import gen_planted_sdp, instance_to_dict, load_instance, planted_meta, save_instance

log = logging.getLogger("bmsdp")


def _read_json(path):
    if path == "-":
        return json.load(sys.stdin)
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _emit(obj, out) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _pipeline(args):
    return pipeline_from_dict(_read_json(args.config) if args.config else None)


def _start(args, inst, p):
    if args.init:
        return np.asarray(_read_json(args.init)["Y"], dtype=float)
    return random_factor(inst.n, p, make_rng(args.seed, 1), args.init_scale)


def cmd_solve(args) -> int:
    inst, _ = load_instance(args.instance)
    cfg = _pipeline(args)
    if args.init:
        res = solve_sdp_bm(inst, args.p, _start(args, inst, args.p), cfg)
        feas, opt, err = None, res, None
    else:
        e2e = end_to_end(inst, args.p, cfg, Y0=_start(args, inst, args.p))
        feas, opt, err = e2e.feasibility, e2e.optimality, e2e.error
    out = {"p": args.p, "error": err}
    if feas is not None:
        out["feasibility"] = {"residual": feas.residual, "ac": feas.ac.to_dict(), "ls": feas.ls.to_dict()}
    if opt is not None:
        out.update(
            Y=opt.Y, lambda_=opt.lam, objective=float(np.sum(inst.cost * (opt.Y @ opt.Y.T))),
            afac=opt.afac.to_dict(), sdp=opt.sdp.to_dict(), outcome=opt.outcome,
            inner_iterations=opt.inner_iterations, outer_iterations=opt.outer_iterations,
            bound=opt.bound.to_dict() if opt.bound is not None else None,
        )
        out["lambda"] = out.pop("lambda_")
    _emit(out, args.out)
    return 0 if opt is not None and opt.certified else 1


def cmd_feasify(args) -> int:
    inst, _ = load_instance(args.instance)
    res = solve_feasibility(inst.map, inst.rhs, args.p, _start(args, inst, args.p), _pipeline(args))
    _emit({
        "Y": res.Y, "residual": res.residual, "remark_bound": res.remark_bound,
        "ac": res.ac.to_dict(), "ls": res.ls.to_dict(), "iterations": res.arc.iterations,
        "bound": res.bound.to_dict() if res.bound is not None else None,
    }, args.out)
    return 0 if res.certified else 1


def cmd_certify(args) -> int:
    inst, _ = load_instance(args.instance)
    pt = _read_json(args.point)
    Y = np.asarray(pt["Y"], dtype=float)
    lam = np.asarray(pt["lambda"], dtype=float)
    tol = ToleranceBundle(*args.tol)
    sdp = check_approx_optimal_sdp(inst, Y @ Y.T, lam, tol)
    out = {"sdp": sdp.to_dict(), "sigma_p": sigma_p(Y)}
    if args.afac:
        out["afac"] = check_afac_bm(inst, Y, lam, tol, rng=make_rng(args.seed, 5)).to_dict()
    _emit(out, args.out)
    return 0 if sdp.certified else 1


def cmd_gen_planted(args) -> int:
    pl = gen_planted_sdp(args.n, args.r, make_rng(args.seed, 0), m=args.m, slack=args.slack)
    meta = {**planted_meta(pl), "seed": args.seed}
    if args.out:
        save_instance(args.out, pl.instance, meta)
    else:
        _emit(instance_to_dict(pl.instance, meta), None)
    return 0


def _experiment_config(args) -> ExperimentConfig:
    d = _read_json(args.config) if args.config else {}
    if args.trials is not None:
        d["trials"] = args.trials
    if args.workers is not None:
        d["workers"] = args.workers
    d["seed"] = args.seed
    if args.out:
        d["out"] = args.out
    return ExperimentConfig.from_dict(d)


def cmd_phase_transition(args) -> int:
    cfg = _experiment_config(args)
    res = run_phase_transition(cfg)
    if not cfg.out:
        sys.stdout.write(res.to_csv())
    return 0


def cmd_smoothing(args) -> int:
    cfg = _experiment_config(args)
    if args.base:
        cfg.base_instance = args.base
    res = run_smoothing_experiment(cfg)
    if not cfg.out:
        sys.stdout.write(res.to_csv())
    return 0


def cmd_tube_mc(args) -> int:
    n, p = args.n, args.p
    est = mc_tube_probability(n, p, np.zeros((n, n)), np.zeros((n, n)), args.sigma, args.delta,
                              args.trials, make_rng(args.seed, 6))
    k = n * (n + 1) // 2
    c = p * (p + 1) // 2
    bounds = tube_bound(k, c, n - p + 1, args.delta, args.sigma)
    _emit({
        "n": n, "p": p, "sigma": args.sigma, "delta": args.delta, "trials": args.trials,
        "estimate": est.estimate, "wilson_low": est.low, "wilson_high": est.high,
        "summation_bound": bounds.summation.to_dict(), "simple_bound": bounds.simple.to_dict(),
    }, args.out)
    return 0


def cmd_bounds(args) -> int:
    src = args.query or args.config
    if not src:
        raise SystemExit("bounds: pass a query JSON path (or --config)")
    q = _read_json(src)
    query = BoundQuery(q["variant"], dict(q.get("params", {})))
    if query.variant == "tube":
        pr = query.params
        tb = tube_bound(int(pr["k"]), int(pr["c"]), int(pr["D"]), float(pr["delta"]), float(pr["sigma"]))
        _emit({"summation": tb.summation.to_dict(), "simple": tb.simple.to_dict()}, args.out)
    else:
        _emit(probability_bound(query).to_dict(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--config", default=None, help="JSON config path")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="bmsdp", description="Burer-Monteiro SDP solver, certificates and experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def instance_cmd(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("instance", help="instance JSON")
        sp.set_defaults(fn=fn)
        return sp

    for name, fn, help_ in (("solve", cmd_solve, "feasibility then optimality solve"),
                            ("feasify", cmd_feasify, "least-squares feasibility solve")):
        sp = instance_cmd(name, fn, help_)
        sp.add_argument("-p", type=int, required=True, help="factor rank")
        sp.add_argument("--init", default=None, help="JSON with a starting factor under key 'Y'")
        sp.add_argument("--init-scale", type=float, default=1.0)

    sp = instance_cmd("certify", cmd_certify, "check approximate optimality of a (Y, lambda) pair")
    sp.add_argument("point", help="JSON with keys 'Y' and 'lambda'")
    sp.add_argument("--tol", type=float, nargs=4, default=[1e-6, 1e-6, 1e-6, 1e-6],
                    metavar=("EPS0", "EPS1", "EPS2", "GAMMA"))
    sp.add_argument("--afac", action="store_true", help="also run the factored AFAC check")

    sp = sub.add_parser("gen-planted", parents=[common], help="planted random SDP instance")
    sp.add_argument("-n", type=int, required=True)
    sp.add_argument("-r", type=int, required=True)
    sp.add_argument("-m", type=int, default=None)
    sp.add_argument("--slack", choices=("projector", "wishart"), default="projector")
    sp.set_defaults(fn=cmd_gen_planted)

    for name, fn, help_ in (("phase-transition", cmd_phase_transition, "success rate per (r, p)"),
                            ("smoothing", cmd_smoothing, "success rate per perturbation size")):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        if name == "smoothing":
            sp.add_argument("--base", default=None, help="instance JSON to perturb (skips selection)")
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("tube-mc", parents=[common], help="Monte-Carlo tube probability vs bounds")
    sp.add_argument("-n", type=int, default=2)
    sp.add_argument("-p", type=int, default=1)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--delta", type=float, default=0.001)
    sp.add_argument("--trials", type=int, default=100000)
    sp.set_defaults(fn=cmd_tube_mc)

    sp = sub.add_parser("bounds", parents=[common], help="evaluate a probability bound from a JSON query")
    sp.add_argument("query", nargs="?", default=None, help="query JSON path or '-' for stdin")
    sp.set_defaults(fn=cmd_bounds)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not 0 <= args.seed < 2**64:
        raise SystemExit("--seed must be an unsigned 64-bit integer")
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        ctx = threadpool_limits(limits=args.threads)
    else:
        ctx = nullcontext()
    with ctx:
        return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
