"""Convergence studies, scheme comparison and CSV output."""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, RISError
from .gallery import BRANCH_1, BRANCH_2, ExactSolution, analytic_reference, reference_solve
from .problem import Problem
from .stepper import (PhysicalSolution, StepOptions, Trajectory, _fmt, filter_progress,
                      run_global, run_local)

N_UNIFORM = 1000
REPORT_HEADER = ("tau", "sup_err_Z", "eoc", "walltime_s", "max_stall", "arc_length_Z", "max_kkt")


def _breakpoints(sol) -> np.ndarray:
    if isinstance(sol, PhysicalSolution):
        return sol.times
    return np.asarray(getattr(sol, "breakpoints", ()), dtype=float)


def sample_times(a, b, t_range: tuple[float, float]) -> np.ndarray:
    """1000 uniform times in ``t_range`` plus every breakpoint of both operands."""
    lo, hi = t_range
    ts = np.concatenate([np.linspace(lo, hi, N_UNIFORM), _breakpoints(a), _breakpoints(b)])
    ts = ts[(ts >= lo) & (ts <= hi)]
    return np.unique(ts)


def _sample(sol, ts) -> np.ndarray:
    return sol.sample(ts)


def sup_error(a, b, p: Problem, norm: str = "Z",
              t_range: tuple[float, float] | None = None) -> float:
    """max_t ||a(t) - b(t)|| over the sampling grid; ``norm`` is "Z" or "V"."""
    if a.dim != b.dim or a.dim != p.dim:
        raise DimensionMismatch(f"dimensions {a.dim}, {b.dim} and problem {p.dim} differ")
    if t_range is None:
        t_range = (0.0, p.T)
    ts = sample_times(a, b, t_range)
    diff = _sample(a, ts) - _sample(b, ts)
    if norm == "Z":
        vals = p.norms_Z(diff)
    elif norm == "V":
        vals = np.sqrt(np.sum(p.mass * diff * diff, axis=1))
    else:
        raise ValueError(f"norm must be 'Z' or 'V', got {norm!r}")
    return float(np.max(vals))


def compute_eoc(taus, errors) -> list[float | None]:
    """Experimental orders of convergence; the first entry has none."""
    out: list[float | None] = [None]
    for i in range(1, len(taus)):
        e0, e1 = errors[i - 1], errors[i]
        if not (e0 > 0 and e1 > 0 and math.isfinite(e0) and math.isfinite(e1)):
            out.append(None)
            continue
        out.append(math.log(e0 / e1) / math.log(taus[i - 1] / taus[i]))
    return out


@dataclass
class ConvergenceRow:
    tau: float
    sup_error_Z: float = math.nan
    eoc: float | None = None
    wall_time: float = math.nan
    max_stall_run: int = 0
    arc_length_Z: float = math.nan
    max_kkt_residual: float = math.nan
    max_state_Z: float = math.nan
    failed: str | None = None


@dataclass
class ConvergenceReport:
    problem_tag: str
    scheme: str
    rows: list[ConvergenceRow]
    reference: str
    timing: bool = True

    @property
    def taus(self) -> list[float]:
        return [r.tau for r in self.rows]

    @property
    def errors(self) -> list[float]:
        return [r.sup_error_Z for r in self.rows]

    @property
    def eocs(self) -> list[float | None]:
        return [r.eoc for r in self.rows]

    @property
    def max_state_Z(self) -> float:
        """Largest iterate norm over all runs of the study."""
        return max((r.max_state_Z for r in self.rows if not r.failed), default=math.nan)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow([
                    _fmt(r.tau),
                    "" if r.failed else _fmt(r.sup_error_Z),
                    "" if r.eoc is None else _fmt(r.eoc),
                    _fmt(r.wall_time) if self.timing else "",
                    r.max_stall_run,
                    "" if r.failed else _fmt(r.arc_length_Z),
                    "" if r.failed else _fmt(r.max_kkt_residual),
                ])

    def write_plot_csv(self, path) -> None:
        """``tau,error,slope1``: errors plus a rate-one guide through the first point."""
        ok = [r for r in self.rows if not r.failed]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("tau", "error", "slope1"))
            if not ok:
                return
            t0, e0 = ok[0].tau, ok[0].sup_error_Z
            for r in ok:
                w.writerow([_fmt(r.tau), _fmt(r.sup_error_Z), _fmt(e0 * r.tau / t0)])


def thread_count() -> int:
    env = os.environ.get("RIS_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def run_scheme(p: Problem, scheme: str, tau: float, opts: StepOptions | None = None) -> Trajectory:
    if scheme == "local":
        return run_local(p, tau, opts)
    if scheme == "global":
        return run_global(p, tau, opts)
    raise ValueError(f"scheme must be 'local' or 'global', got {scheme!r}")


def resolve_reference(p: Problem, reference, taus):
    """Turn ``"analytic"``/``"self"`` into a solution object and a descriptor."""
    if isinstance(reference, (ExactSolution, PhysicalSolution)):
        return reference, getattr(reference, "tag", "given")
    if reference == "analytic":
        ref = analytic_reference(p)
        if ref is not None:
            return ref, f"analytic:{ref.tag}"
        reference = "self"
    if reference == "self":
        tau_ref = min(taus) / 16.0
        return reference_solve(p, tau_ref), f"self:tau_ref={tau_ref:g}"
    raise ValueError(f"unknown reference {reference!r}")


def run_convergence_study(p: Problem, scheme: str, tau_list, reference="analytic",
                          t_range: tuple[float, float] | None = None,
                          opts: StepOptions | None = None, timing: bool = True,
                          threads: int | None = None) -> ConvergenceReport:
    taus = [float(t) for t in tau_list]
    if len(taus) < 1 or any(b >= a for a, b in zip(taus[:-1], taus[1:])):
        raise ValueError("tau_list must be strictly decreasing")
    ref, descriptor = resolve_reference(p, reference, taus)

    def one(tau):
        row = ConvergenceRow(tau=tau)
        start = time.perf_counter()
        try:
            traj = run_scheme(p, scheme, tau, opts)
            sol = filter_progress(traj)
            row.sup_error_Z = sup_error(sol, ref, p, "Z", t_range)
        except RISError as exc:
            row.failed = f"{type(exc).__name__}: {exc}"
            return row
        row.wall_time = time.perf_counter() - start
        row.max_stall_run = traj.max_stall_run
        row.arc_length_Z = traj.arc_length_Z
        row.max_kkt_residual = traj.max_kkt
        row.max_state_Z = float(np.max(p.norms_Z(traj.states)))
        return row

    workers = min(threads or thread_count(), len(taus))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(one, taus))
    else:
        rows = [one(t) for t in taus]

    errs = [r.sup_error_Z if not r.failed else math.nan for r in rows]
    for r, e in zip(rows, compute_eoc(taus, errs)):
        r.eoc = e
    return ConvergenceReport(problem_tag=p.tag, scheme=scheme, rows=rows,
                             reference=descriptor, timing=timing)


@dataclass
class SchemeComparison:
    tau: float
    local_error: float
    global_error: float
    local_vs_global: float
    # max over inactive local steps of ||z_k - global_step(t_{k-1}, z_{k-1})||_Z
    stepwise_mismatch: float
    reference: str = ""
    trajectories: dict = field(default_factory=dict, repr=False)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("tau", "local_sup_err_Z", "global_sup_err_Z", "local_vs_global_Z",
                        "stepwise_mismatch_Z"))
            w.writerow([_fmt(v) for v in (self.tau, self.local_error, self.global_error,
                                          self.local_vs_global, self.stepwise_mismatch)])


def compare_schemes(p: Problem, tau: float, reference="analytic",
                    t_range: tuple[float, float] | None = None,
                    opts: StepOptions | None = None) -> SchemeComparison:
    from .subproblem import solve_global_step

    ref, descriptor = resolve_reference(p, reference, [tau])
    loc = run_local(p, tau, opts)
    glo = run_global(p, tau, opts)
    sl, sg = filter_progress(loc), filter_progress(glo)
    mismatch = 0.0
    recs = loc.records
    for a, b in zip(recs[:-1], recs[1:]):
        if b.stalled or b.dz_V >= tau:
            continue
        g = solve_global_step(p, a.t, a.z, opts.tol if opts else None)
        mismatch = max(mismatch, p.norm_Z(g.z - b.z))
    return SchemeComparison(
        tau=tau,
        local_error=sup_error(sl, ref, p, "Z", t_range),
        global_error=sup_error(sg, ref, p, "Z", t_range),
        local_vs_global=sup_error(sl, sg, p, "Z", t_range),
        stepwise_mismatch=mismatch,
        reference=descriptor,
        trajectories={"local": loc, "global": glo},
    )


@dataclass(frozen=True)
class BranchEntry:
    tau: float
    z_T: float
    branch: str
    n_steps: int
    max_stall_run: int


def classify_branch(z: float, tol: float = 0.02) -> str:
    if abs(z - BRANCH_1) <= tol:
        return "branch-1"
    if abs(z - BRANCH_2) <= tol:
        return "branch-2"
    return "other"


def bifurcation_scan(p: Problem, tau_list, opts: StepOptions | None = None) -> list[BranchEntry]:
    if p.dim != 1:
        raise ValueError("bifurcation scan needs a scalar problem")
    out = []
    for tau in tau_list:
        traj = run_local(p, float(tau), opts)
        zT = float(traj.records[-1].z[0])
        out.append(BranchEntry(float(tau), zT, classify_branch(zT), traj.n_total,
                               traj.max_stall_run))
    return out


def write_branch_csv(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tau", "z_T", "branch", "n_steps", "max_stall"))
        for e in entries:
            w.writerow([_fmt(e.tau), _fmt(e.z_T), e.branch, e.n_steps, e.max_stall_run])


def write_stability_csv(rows, path) -> None:
    """``rows`` are (t, [(z_lo, z_hi), ...]) pairs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "z_lo", "z_hi"))
        for t, intervals in rows:
            for lo, hi in intervals:
                w.writerow([_fmt(t), _fmt(lo), _fmt(hi)])
