"""Command-line driver: ``sgsde check|simulate|pullback|equilibrium|stationary|example``.

Exit status is 0 on success, 1 on a validation error and 2 on a numerical
failure; errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import __version__
from .config import load_config, load_preset
from .dynamics import Trajectory, integrate_forward, pullback_curve
from .errors import SGSDEError, ValidationError
from .gain import iterate_fixed_point, verify_equilibrium
from .io import dumps, write_json, write_table
from .model import check_cooperative, small_gain_report
from .noise import sample_path
from .stationary import drift_check, mc_stationary

COMMANDS = ("check", "simulate", "pullback", "equilibrium", "stationary", "example")
REL_TOL = 1e-9


def _stamp(obj):
    """Attach ``meta.generated_at``; the only field allowed to differ between reruns."""
    obj = dict(obj)
    meta = dict(obj.get("meta", {}))
    meta["generated_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    obj["meta"] = meta
    return obj


def _emit(out_dir, name, obj):
    write_json(os.path.join(out_dir, name), _stamp(obj))


def _path(cfg, t_past=None, t_fwd=None):
    return sample_path(cfg.seed, cfg.dt, cfg.t_past if t_past is None else t_past,
                       cfg.t_fwd if t_fwd is None else t_fwd, cfg.spec.m)


def run_check(cfg, out_dir, threads):
    sec = cfg.section("check")
    report = small_gain_report(cfg.spec, sec.get("t_max"), sec["n_points"])
    out = report.to_dict()
    out["name"] = cfg.name
    _emit(out_dir, "report.json", out)
    return out


def run_simulate(cfg, out_dir, threads):
    sec = cfg.section("simulate")
    x0 = sec.get("x0", [0.0] * cfg.spec.d)
    t1 = sec.get("t1", cfg.t_fwd)
    path = _path(cfg)
    traj = integrate_forward(cfg.spec, path, x0, sec["t0"], t1, scheme=sec["scheme"])
    traj.to_csv(os.path.join(out_dir, "trajectory.csv"))
    return {"final": traj.final, "steps": len(traj.times) - 1}


def run_pullback(cfg, out_dir, threads):
    sec = cfg.section("pullback")
    x = sec.get("x", [0.0] * cfg.spec.d)
    t_max = sec.get("t_max", cfg.t_past)
    path = _path(cfg, t_fwd=0.0)
    ts, states = pullback_curve(cfg.spec, path, x, t_max, sec["stride"])
    Trajectory(ts, states, {"seed": cfg.seed, "dt": cfg.dt, "x": x}).to_csv(
        os.path.join(out_dir, "pullback.csv"))
    return {"final": states[-1], "points": len(ts)}


def run_equilibrium(cfg, out_dir, threads):
    sec = cfg.section("equilibrium")
    path = _path(cfg)
    res = iterate_fixed_point(cfg.spec, path, tol=sec["tol"], max_iter=sec["max_iter"],
                              warmup=sec.get("warmup"))
    t0 = sec["verify_t0"]
    t1 = sec.get("verify_t1", cfg.t_fwd)
    out = res.report()
    if t1 > t0:
        dev, gap = verify_equilibrium(cfg.spec, path, res, t0, t1)
        out["verify"] = {"t0": t0, "t1": t1, "maxDeviation": dev, "pullbackGap": gap}
    res.u_star.to_csv(os.path.join(out_dir, "u_star.csv"))
    res.equilibrium.to_csv(os.path.join(out_dir, "equilibrium.csv"), sidecar=False)
    _emit(out_dir, "fixed_point.json", out)
    return out


def run_stationary(cfg, out_dir, threads):
    sec = cfg.section("stationary")
    est = mc_stationary(cfg.spec, sec["n_samples"], sec["mode"], burn_in=sec.get("burn_in"),
                        dt=sec["dt"], seed=cfg.seed, thin=sec.get("thin"), threads=threads,
                        bins=sec.get("bins"))
    out = est.to_dict()
    _emit(out_dir, "stationary.json", out)
    for i, (edges, counts) in enumerate(est.histograms):
        write_table(os.path.join(out_dir, f"histogram_{i + 1}.csv"), ["lo", "hi", "count"],
                    ((float(a), float(b), int(c))
                     for a, b, c in zip(edges[:-1], edges[1:], counts)))
    return out


def _compare(reference, report):
    rows = {}
    computed = {"spectral_abscissa": report["spectral_abscissa"], "gain": report["gain"],
                "cooperative": report["cooperative"], "smallGainOk": report["smallGainOk"]}
    for key, ref in reference.items():
        val = computed[key]
        if isinstance(ref, bool):
            rows[key] = {"reference": ref, "computed": val, "ok": val == ref}
        else:
            rel = abs(val - ref) / max(abs(ref), 1e-300)
            rows[key] = {"reference": ref, "computed": val, "relErr": rel, "ok": rel <= REL_TOL}
    return rows


def run_example(cfg, out_dir, threads):
    report = run_check(cfg, out_dir, threads)
    out = {"name": cfg.name, "check": report, "comparison": _compare(cfg.reference, report)}
    if check_cooperative(cfg.spec.A) and report["hypothesesOk"]:
        out["equilibrium"] = run_equilibrium(cfg, out_dir, threads)
    else:
        out["note"] = ("A is not cooperative or the small-gain hypotheses fail; "
                       "the fixed-point pipeline is skipped")
    drift = cfg.section("drift")
    if "epsilon" in drift:
        ok, margin = drift_check(cfg.spec, drift["epsilon"], drift["R"], drift["n_samples"],
                                 seed=cfg.seed)
        out["drift"] = {"ok": ok, "worstMargin": margin, **{k: drift[k] for k in ("epsilon", "R")}}
    out["stationary"] = run_stationary(cfg, out_dir, threads)
    out["ok"] = all(r["ok"] for r in out["comparison"].values()) and \
        out.get("drift", {}).get("ok", True)
    _emit(out_dir, "example.json", out)
    return out


RUNNERS = {"check": run_check, "simulate": run_simulate, "pullback": run_pullback,
           "equilibrium": run_equilibrium, "stationary": run_stationary, "example": run_example}


def build_parser():
    p = argparse.ArgumentParser(prog="sgsde", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("example_id", nargs="?", help="preset id for `example` (5.1, 5.2, 5.3, 6.1)")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (default: config output.dir or .)")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for Monte Carlo (results do not depend on it)")
    return p


def _fail(err):
    print(json.dumps(err.to_dict(), default=lambda o: np.asarray(o).tolist()), file=sys.stderr)
    return err.exit_code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "example":
            if not args.example_id:
                raise ValidationError("`example` needs a preset id", field="example_id")
            cfg = load_preset(args.example_id)
        else:
            if args.example_id:
                raise ValidationError(
                    f"unexpected argument {args.example_id!r}", field="example_id")
            if not args.config:
                raise ValidationError(
                    f"`{args.command}` needs --config", field="--config")
            cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ValidationError("--seed must be an unsigned 64-bit integer",
                                      field="--seed")
            cfg = cfg.replace(seed=args.seed)
        out_dir = args.out or cfg.output_dir
        os.makedirs(out_dir, exist_ok=True)
        result = RUNNERS[args.command](cfg, out_dir, max(1, args.threads))
    except SGSDEError as err:
        return _fail(err)
    sys.stdout.write(dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
