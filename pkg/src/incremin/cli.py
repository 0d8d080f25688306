"""Command line front end: ``incremin {run,converge,compare,stability,bifurcate}``.

Every subcommand accepts ``--config FILE.json``; flags given on the command
line override the JSON field of the same name (dashes become underscores).

Exit codes: 0 success, 2 invariant violation, 3 solver failure, 4 bad config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import gallery, harness, stepper
from .errors import RISError

log = logging.getLogger("incremin")

EXIT_OK, EXIT_INVARIANT, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4

DEFAULTS = {
    "mesh_n": 32,
    "scheme": "local",
    "reference": "analytic",
    "tol": None,
    "timing": True,
    "t_max": None,
}


class ConfigError(Exception):
    pass


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _grid(text) -> np.ndarray:
    try:
        lo, hi, step = (float(x) for x in str(text).split(":"))
    except ValueError:
        raise ConfigError(f"grid must be LO:HI:STEP, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise ConfigError(f"bad grid {text!r}")
    n = int(round((hi - lo) / step))
    return np.linspace(lo, lo + n * step, n + 1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="incremin", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, problem_choices=gallery.PROBLEM_TAGS):
        sp.add_argument("--config", help="JSON config; flags override its fields")
        sp.add_argument("--problem", choices=problem_choices)
        sp.add_argument("--mesh-n", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--out")

    r = sub.add_parser("run", help="single trajectory to CSV")
    common(r)
    r.add_argument("--tau", type=float)
    r.add_argument("--scheme", choices=("local", "global"))

    c = sub.add_parser("converge", help="convergence study to CSV")
    common(c)
    c.add_argument("--taus", help="comma-separated, strictly decreasing")
    c.add_argument("--scheme", choices=("local", "global"))
    c.add_argument("--reference", choices=("analytic", "self"))
    c.add_argument("--t-max", type=float, help="restrict the error to [0, t_max]")
    c.add_argument("--plot-out", help="also write tau,error,slope1 plot data")
    c.add_argument("--no-timing", dest="timing", action="store_false", default=None,
                   help="leave walltime empty so reruns are byte-identical")

    m = sub.add_parser("compare", help="local versus global scheme")
    common(m)
    m.add_argument("--tau", type=float)
    m.add_argument("--reference", choices=("analytic", "self"))
    m.add_argument("--t-max", type=float)

    s = sub.add_parser("stability", help="local-stability set of a scalar problem")
    common(s, problem_choices=("counter1d", "local1d"))
    s.add_argument("--t-grid")
    s.add_argument("--z-grid")

    b = sub.add_parser("bifurcate", help="terminal branch per tau for the counterexample")
    common(b, problem_choices=("counter1d",))
    b.add_argument("--taus")
    return ap


def merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for k, v in vars(args).items():
        if v is not None and k != "config":
            cfg[k] = v
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(missing))


def _problem(cfg):
    try:
        return gallery.get_problem(cfg["problem"], int(cfg["mesh_n"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _opts(cfg):
    return stepper.StepOptions(tol=cfg.get("tol"))


def _t_range(cfg, p):
    return None if cfg.get("t_max") is None else (0.0, float(cfg["t_max"]))


def cmd_run(cfg) -> int:
    _require(cfg, "problem", "tau", "out")
    p = _problem(cfg)
    traj = harness.run_scheme(p, cfg["scheme"], float(cfg["tau"]), _opts(cfg))
    stepper.write_trajectory_csv(traj, cfg["out"])
    bad = stepper.check_invariants(p, traj, cfg.get("tol"))
    log.info("%d steps, %d stalls, arc length %.6g", traj.n_total, traj.n_stalls,
             traj.arc_length_Z)
    for msg in bad:
        log.warning("invariant: %s", msg)
    return EXIT_INVARIANT if bad else EXIT_OK


def cmd_converge(cfg) -> int:
    _require(cfg, "problem", "taus", "out")
    p = _problem(cfg)
    try:
        taus = _floats(cfg["taus"])
    except ValueError:
        raise ConfigError(f"bad tau list {cfg['taus']!r}") from None
    try:
        report = harness.run_convergence_study(
            p, cfg["scheme"], taus, cfg["reference"], _t_range(cfg, p), _opts(cfg),
            timing=bool(cfg["timing"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report.write_csv(cfg["out"])
    if cfg.get("plot_out"):
        report.write_plot_csv(cfg["plot_out"])
    failed = [r for r in report.rows if r.failed]
    for r in failed:
        log.error("tau=%g failed: %s", r.tau, r.failed)
    if failed:
        return EXIT_SOLVER
    bound = stepper.stall_bound(p)
    if bound is not None and any(r.max_stall_run > bound for r in report.rows):
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_compare(cfg) -> int:
    _require(cfg, "problem", "tau", "out")
    p = _problem(cfg)
    cmp = harness.compare_schemes(p, float(cfg["tau"]), cfg["reference"], _t_range(cfg, p),
                                  _opts(cfg))
    cmp.write_csv(cfg["out"])
    log.info("local %.3e  global %.3e  apart %.3e", cmp.local_error, cmp.global_error,
             cmp.local_vs_global)
    return EXIT_OK


def cmd_stability(cfg) -> int:
    _require(cfg, "problem", "t_grid", "z_grid", "out")
    p = _problem(cfg)
    z = _grid(cfg["z_grid"])
    step = z[1] - z[0] if len(z) > 1 else 1e-3
    rows = [(float(t), gallery.stability_set_1d(p, float(t), z[0], z[-1], step))
            for t in _grid(cfg["t_grid"])]
    harness.write_stability_csv(rows, cfg["out"])
    return EXIT_OK


def cmd_bifurcate(cfg) -> int:
    _require(cfg, "taus", "out")
    cfg.setdefault("problem", "counter1d")
    cfg["problem"] = cfg["problem"] or "counter1d"
    entries = harness.bifurcation_scan(_problem(cfg), _floats(cfg["taus"]), _opts(cfg))
    harness.write_branch_csv(entries, cfg["out"])
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "converge": cmd_converge,
    "compare": cmd_compare,
    "stability": cmd_stability,
    "bifurcate": cmd_bifurcate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which would read as an invariant failure
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = merge_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except RISError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
