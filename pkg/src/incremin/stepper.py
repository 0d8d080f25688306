"""Time stepping: the local scheme, the global baseline and their interpolants."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTrajectory, NoConvergence, OutOfRange, StallLimitExceeded
from .problem import Problem
from .subproblem import (KktResiduals, MAX_INNER_ITER, default_tol, solve_global_step,
                         solve_local_step, step_objective)

TRAJECTORY_HEADER = ("k", "s", "t", "lambda", "dz_V", "dz_Z", "stalled", "kkt_max", "objective")


@dataclass(frozen=True)
class StepRecord:
    k: int
    s: float
    t: float
    z: np.ndarray
    lam: float = 0.0
    dz_V: float = 0.0
    dz_Z: float = 0.0
    stalled: bool = False
    terminal: bool = False  # computed at frozen t = T
    kkt: KktResiduals = field(default_factory=KktResiduals)
    objective: float = math.nan


@dataclass(frozen=True)
class Trajectory:
    tau: float
    records: tuple[StepRecord, ...]
    scheme: str = "local"
    problem_tag: str = ""

    @property
    def n_total(self) -> int:
        return len(self.records) - 1

    @property
    def n_reach_T(self) -> int:
        T = self.records[-1].t
        return next(r.k for r in self.records if r.t >= T)

    @property
    def arc_length_Z(self) -> float:
        return float(sum(r.dz_Z for r in self.records))

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def states(self) -> np.ndarray:
        return np.vstack([r.z for r in self.records])

    @property
    def max_kkt(self) -> float:
        return max((r.kkt.max() for r in self.records), default=0.0)

    def stall_runs(self) -> list[int]:
        runs, cur = [], 0
        for r in self.records[1:]:
            if r.stalled:
                cur += 1
            elif cur:
                runs.append(cur)
                cur = 0
        if cur:
            runs.append(cur)
        return runs

    @property
    def max_stall_run(self) -> int:
        return max(self.stall_runs(), default=0)

    @property
    def n_stalls(self) -> int:
        return sum(r.stalled for r in self.records)


@dataclass(frozen=True)
class StepOptions:
    tol: float | None = None
    max_iter: int = MAX_INNER_ITER
    stall_guard: int | None = None


def stall_bound(p: Problem) -> int | None:
    """Largest stall run allowed for uniformly convex problems with hints."""
    if not p.has_hints or p.kappa_hint <= 0:
        return None
    return int(math.ceil(p.lip_ell_hint / p.kappa_hint)) + 1


def default_stall_guard(p: Problem) -> int:
    b = stall_bound(p)
    return 10 * b if b is not None else 10_000


def _initial_record(p: Problem) -> StepRecord:
    return StepRecord(k=0, s=0.0, t=0.0, z=p.z0.copy(), objective=p.energy(0.0, p.z0))


def run_local(p: Problem, tau: float, opts: StepOptions | None = None) -> Trajectory:
    """Run the local incremental minimization scheme up to T, then stabilize at T."""
    opts = opts or StepOptions()
    if not tau > 0:
        from .errors import InfeasibleTau
        raise InfeasibleTau(f"tau must be positive, got {tau}")
    T = p.T
    guard = opts.stall_guard or default_stall_guard(p)
    records = [_initial_record(p)]
    t_prev, z_prev = 0.0, p.z0
    run = 0
    k = 0
    while True:
        k += 1
        try:
            res = solve_local_step(p, t_prev, z_prev, tau, opts.tol, opts.max_iter)
        except NoConvergence as exc:
            exc.step = k
            raise
        dz = res.z - z_prev
        # an active step moves exactly tau in V; snapping keeps t_k = t_{k-1}
        dz_V = tau if res.active else p.norm_V(dz)
        t_k = min(t_prev + tau - dz_V, T)
        stalled = dz_V == tau
        run = run + 1 if stalled else 0
        if run > guard:
            raise StallLimitExceeded(f"{run} consecutive stalls at step {k}", step=k,
                                     run_length=run)
        records.append(StepRecord(
            k=k, s=k * tau, t=t_k, z=res.z, lam=res.lam, dz_V=dz_V, dz_Z=p.norm_Z(dz),
            stalled=stalled, terminal=t_prev >= T, kkt=res.kkt, objective=res.objective,
        ))
        t_prev, z_prev = t_k, res.z
        if t_k >= T and p.is_locally_stable(T, res.z):
            break
    return Trajectory(tau=tau, records=tuple(records), scheme="local", problem_tag=p.tag)


def run_global(p: Problem, tau: float, opts: StepOptions | None = None) -> Trajectory:
    """Global incremental minimization on the uniform grid t_k = k tau.

    Step k minimizes I(t_{k-1}, .) + R(. - z_{k-1}), i.e. the local step with
    the ball constraint dropped.
    """
    opts = opts or StepOptions()
    if not tau > 0:
        from .errors import InfeasibleTau
        raise InfeasibleTau(f"tau must be positive, got {tau}")
    T = p.T
    records = [_initial_record(p)]
    t_prev, z_prev = 0.0, p.z0
    k = 0
    while t_prev < T:
        k += 1
        try:
            res = solve_global_step(p, t_prev, z_prev, opts.tol, opts.max_iter)
        except NoConvergence as exc:
            exc.step = k
            raise
        dz = res.z - z_prev
        t_k = min(k * tau, T)
        records.append(StepRecord(
            k=k, s=k * tau, t=t_k, z=res.z, lam=0.0, dz_V=p.norm_V(dz), dz_Z=p.norm_Z(dz),
            kkt=res.kkt, objective=res.objective,
        ))
        t_prev, z_prev = t_k, res.z
    return Trajectory(tau=tau, records=tuple(records), scheme="global", problem_tag=p.tag)


# --------------------------------------------------------------------------
# interpolants
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PhysicalSolution:
    """Piecewise affine interpolant in physical time through the kept iterates."""

    times: np.ndarray
    states: np.ndarray
    indices: tuple[int, ...] = ()
    tag: str = ""

    @property
    def breakpoints(self) -> np.ndarray:
        return self.times

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __call__(self, t: float) -> np.ndarray:
        return evaluate(self, t)

    def sample(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        lo, hi = self.interval
        if np.any(ts < lo) or np.any(ts > hi):
            raise OutOfRange(f"sample times outside [{lo}, {hi}]")
        idx = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = ((ts - t0) / (t1 - t0))[:, None]
        out = self.states[idx] + w * (self.states[idx + 1] - self.states[idx])
        exact = ts == t1
        out[exact] = self.states[idx[exact] + 1]
        return out


def filter_progress(traj: Trajectory) -> PhysicalSolution:
    """Keep iterates where physical time advanced, plus the first and the last.

    Several kept iterates at the same time (only possible at T) collapse onto
    the last one, so the breakpoints are strictly increasing.
    """
    recs = traj.records
    keep = [0] + [k for k in range(1, len(recs)) if recs[k].t > recs[k - 1].t]
    if keep[-1] != len(recs) - 1:
        keep.append(len(recs) - 1)
    times, states, idx = [], [], []
    for k in keep:
        if times and recs[k].t == times[-1]:
            states[-1], idx[-1] = recs[k].z, k
            continue
        times.append(recs[k].t)
        states.append(recs[k].z)
        idx.append(k)
    if len(times) < 2:
        raise DegenerateTrajectory("physical time never advanced")
    return PhysicalSolution(np.array(times), np.vstack(states), tuple(idx),
                            tag=f"{traj.problem_tag}:{traj.scheme}:tau={traj.tau:g}")


def evaluate(sol: PhysicalSolution, t: float) -> np.ndarray:
    lo, hi = sol.interval
    if not lo <= t <= hi:
        raise OutOfRange(f"t={t} outside [{lo}, {hi}]")
    return sol.sample([t])[0]


@dataclass(frozen=True)
class ArtificialInterpolant:
    """(t_hat, z_hat) as piecewise affine functions of artificial time s = k tau."""

    s: np.ndarray
    t: np.ndarray
    z: np.ndarray

    def t_hat(self, s: float) -> float:
        return float(np.interp(s, self.s, self.t))

    def z_hat(self, s: float) -> np.ndarray:
        if not self.s[0] <= s <= self.s[-1]:
            raise OutOfRange(f"s={s} outside [0, {self.s[-1]}]")
        i = min(int(np.searchsorted(self.s, s, side="right")) - 1, len(self.s) - 2)
        w = (s - self.s[i]) / (self.s[i + 1] - self.s[i])
        return self.z[i] + w * (self.z[i + 1] - self.z[i])

    def t_slopes(self) -> np.ndarray:
        """t_hat' on each segment (s_{k-1}, s_k)."""
        return np.diff(self.t) / np.diff(self.s)


def artificial_interpolants(traj: Trajectory) -> ArtificialInterpolant:
    s = np.array([r.k * traj.tau for r in traj.records])
    return ArtificialInterpolant(s=s, t=traj.times, z=traj.states)


# --------------------------------------------------------------------------
# run checks and output
# --------------------------------------------------------------------------

def check_invariants(p: Problem, traj: Trajectory, tol: float | None = None) -> list[str]:
    """Violated trajectory invariants, as human-readable strings."""
    tol = default_tol(p) if tol is None else tol
    out = []
    recs = traj.records
    tau, T = traj.tau, p.T
    for a, b in zip(recs[:-1], recs[1:]):
        if b.t < a.t:
            out.append(f"time decreases at step {b.k}")
        if traj.scheme == "local":
            if b.t != min(a.t + tau - b.dz_V, T):
                out.append(f"time update mismatch at step {b.k}")
            if b.lam * (tau - b.dz_V) > tol:
                out.append(f"complementarity violated at step {b.k}")
        scale = p.residual_scale(a.t)
        if b.kkt.max() > tol * scale:
            out.append(f"KKT residual {b.kkt.max():.2e} at step {b.k}")
    if recs[-1].t != T:
        out.append("final time differs from T")
    if not p.is_locally_stable(T, recs[-1].z):
        out.append("final state not locally stable")
    if traj.scheme == "local" and len(recs) > 1 and p.validate_initial().ok:
        r1 = recs[1]
        if p.norm_Z(r1.z - p.z0) > 1e-10 or r1.t != min(tau, T):
            out.append("first iterate differs from the initial state")
    bound = stall_bound(p)
    if bound is not None and traj.max_stall_run > bound:
        out.append(f"stall run {traj.max_stall_run} exceeds bound {bound}")
    return out


def smallness_violations(p: Problem, traj: Trajectory, tol: float = 1e-9) -> list[str]:
    """Progress bound of the small-Lipschitz regime: dz_Z(k+1) <= lip/kappa * (t_k - t_{k-1})."""
    if not p.has_hints or not p.lip_ell_hint < p.kappa_hint:
        return []
    ratio = p.lip_ell_hint / p.kappa_hint
    out = []
    recs = traj.records
    for k in range(1, len(recs) - 1):
        dt = recs[k].t - recs[k - 1].t
        if recs[k + 1].dz_Z > ratio * dt + tol:
            out.append(f"step {k + 1}: dz_Z={recs[k + 1].dz_Z:.3e} > {ratio:.3f}*{dt:.3e}")
    if traj.n_stalls:
        out.append(f"{traj.n_stalls} stalls in the smallness regime")
    return out


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for r in traj.records:
            w.writerow([_fmt(v) for v in (r.k, r.s, r.t, r.lam, r.dz_V, r.dz_Z, r.stalled,
                                         r.kkt.max(), r.objective)])
