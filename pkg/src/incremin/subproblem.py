"""One incremental step: minimize I(t_prev, z) + R(z - z_prev), optionally on a V-ball.

Scalar problems are solved exactly by enumerating every stationary point of
the piecewise-polynomial objective together with its kinks and the ball
endpoints. Lumped problems use an outer root-find on the ball multiplier
``lam`` and an inner semismooth Newton method for

    min_d  I(t, z_prev + d) + R(d) + lam/2 ||d||_V^2,

with an accelerated proximal-gradient fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from .errors import InfeasibleTau, NoConvergence, Unbounded
from .problem import Problem, ScalarProblem, as_state

MAX_INNER_ITER = 200
SCALAR_TOL = 1e-11
LUMPED_TOL = 1e-9
_TIE_RTOL = 1e-14


@dataclass(frozen=True)
class KktResiduals:
    """Residuals of the discrete optimality system, one per condition.

    ``r_subgradient`` is measured in the dual norm of R (a sup-norm of the
    force density), so it is scale-free.
    """

    r_complementarity: float = 0.0
    r_lambda_dist: float = 0.0
    r_energy_identity: float = 0.0
    r_subgradient: float = 0.0

    def max(self) -> float:
        return max(self.r_complementarity, self.r_lambda_dist,
                   self.r_energy_identity, self.r_subgradient)


@dataclass(frozen=True)
class SubproblemResult:
    z: np.ndarray
    lam: float
    active: bool
    kkt: KktResiduals = field(default_factory=KktResiduals)
    iterations: int = 0
    objective: float = math.nan


def default_tol(p: Problem) -> float:
    return SCALAR_TOL if isinstance(p, ScalarProblem) else LUMPED_TOL


def step_objective(p: Problem, t: float, z_prev, z) -> float:
    z = as_state(z, p.dim)
    return p.energy(t, z) + p.dissipation(z - as_state(z_prev, p.dim))


def certify(p: Problem, t_prev: float, z_prev, result: SubproblemResult,
            tau: float | None) -> KktResiduals:
    """Recompute the optimality residuals of ``result`` from scratch.

    ``tau=None`` certifies an unconstrained (global) step, where the
    multiplier must vanish and the state must be locally stable.
    """
    z_prev = as_state(z_prev, p.dim)
    z = as_state(result.z, p.dim)
    lam = float(result.lam)
    dz = z - z_prev
    g = p.grad(t_prev, z)
    dist = p.dist_to_stable(t_prev, z)
    nv = p.norm_V(dz)
    Rdz = p.dissipation(dz)

    if tau is None:
        r_c = 0.0
        r_l = abs(lam) + dist
        r_e = abs(Rdz - float(-g @ dz))
    else:
        r_c = abs(lam) * abs(nv - tau)
        r_l = abs(lam - dist / tau)
        r_e = abs(Rdz + tau * dist - float(-g @ dz))

    # R(v) >= <xi, v> over +-unit directions and the increment direction
    xi = -(lam * p.riesz_V(dz) + g)
    r_s = float(np.max(np.maximum(np.abs(xi) - p.mass, 0.0) / p.mass))
    if Rdz > 0:
        r_s = max(r_s, max(float(xi @ dz) - Rdz, 0.0) / Rdz)
    if lam < 0:
        r_c = max(r_c, -lam)
    return KktResiduals(r_c, r_l, r_e, r_s)


# --------------------------------------------------------------------------
# scalar problems: exhaustive candidate enumeration
# --------------------------------------------------------------------------

def _real_roots(poly: Polynomial, lo: float, hi: float) -> list[float]:
    if poly.degree() < 1 or np.all(poly.coef == 0):
        return []
    out = []
    dpoly = poly.deriv()
    for r in poly.roots():
        if abs(r.imag) > 1e-7 * (1.0 + abs(r.real)):
            continue
        x = float(r.real)
        for _ in range(3):
            dp = float(dpoly(x))
            if dp == 0.0:
                break
            x_new = x - float(poly(x)) / dp
            if not math.isfinite(x_new):
                break
            x = x_new
        if lo < x < hi:
            out.append(x)
    return out


def _tends_to_minus_inf(poly: Polynomial, direction: int) -> bool:
    coef = np.trim_zeros(poly.coef, "b")
    if len(coef) <= 1:
        return False
    deg = len(coef) - 1
    lead = coef[-1]
    return lead * (direction ** deg) < 0


def _scalar_objective(pieces, zp: float, z: float) -> float:
    poly = pieces[0][2] if z < 0 else pieces[1][2]
    return float(poly(z)) + abs(z - zp)


def _solve_scalar(p: ScalarProblem, t: float, zp: float, lo: float, hi: float):
    pieces = p.energy_pieces(t)
    splits = sorted({lo, hi, zp} | ({0.0} if lo < 0.0 < hi else set()))
    cands = [x for x in splits if math.isfinite(x)]
    for a, b in zip(splits[:-1], splits[1:]):
        if a == b:
            continue
        if math.isinf(a):
            mid = b - 1.0
        elif math.isinf(b):
            mid = a + 1.0
        else:
            mid = 0.5 * (a + b)
        energy = pieces[0][2] if mid < 0 else pieces[1][2]
        sign = 1.0 if mid > zp else -1.0
        phi = energy + Polynomial([-sign * zp, sign])
        if math.isinf(a) and _tends_to_minus_inf(phi, -1):
            raise Unbounded("objective decreases without bound as z -> -inf")
        if math.isinf(b) and _tends_to_minus_inf(phi, +1):
            raise Unbounded("objective decreases without bound as z -> +inf")
        cands.extend(_real_roots(phi.deriv(), a, b))

    values = [_scalar_objective(pieces, zp, c) for c in cands]
    best = min(values)
    slack = _TIE_RTOL * (1.0 + abs(best))
    tied = [c for c, v in zip(cands, values) if v <= best + slack]

    def violation(c):
        # one-sided slopes of I(t, .) + |. - zp|; a minimizer has left <= 0 <= right
        g = float(p.grad(t, [c])[0])
        left = g + (1.0 if c > zp else -1.0)
        right = g + (1.0 if c >= zp else -1.0)
        v = 0.0 if c <= lo else max(left, 0.0)
        return v + (0.0 if c >= hi else max(-right, 0.0))

    # deterministic tie-break: genuine local minimizers, then shortest step, then smaller state
    z = min(tied, key=lambda c: (violation(c) > 1e-12, abs(c - zp), c))
    return z, _scalar_objective(pieces, zp, z), len(cands)


# --------------------------------------------------------------------------
# lumped problems: semismooth Newton on the shifted problem
# --------------------------------------------------------------------------

def _shrink(y, c):
    return np.sign(y) * np.maximum(np.abs(y) - c, 0.0)


def _as_sparse(H, n):
    if sp.issparse(H):
        return sp.csr_matrix(H)
    return sp.csr_matrix(np.asarray(H, dtype=float).reshape(n, n))


class _Shifted:
    """min_d I(t, zp + d) + R(d) + lam/2 ||d||_V^2 for a lumped problem."""

    def __init__(self, p: Problem, t: float, zp: np.ndarray, lam: float):
        self.p, self.t, self.zp, self.lam = p, t, zp, lam
        self.m = p.mass

    def grad(self, d):
        return self.p.grad(self.t, self.zp + d) + self.lam * self.m * d

    def hess(self, d):
        H = _as_sparse(self.p.hessian(self.t, self.zp + d), self.p.dim)
        return (H + sp.diags(self.lam * self.m)).tocsr()

    def value(self, d):
        p = self.p
        return (p.energy(self.t, self.zp + d) + p.dissipation(d)
                + 0.5 * self.lam * float(np.sum(self.m * d * d)))

    def residual(self, d, g=None):
        """Optimality residual in force-density units (g / m)."""
        if g is None:
            g = self.grad(d)
        m = self.m
        r = np.where(d != 0, np.abs(g + m * np.sign(d)),
                     np.maximum(np.abs(g) - m, 0.0)) / m
        return float(np.max(r)) if r.size else 0.0


def _newton(sh: _Shifted, d0: np.ndarray, tol: float, max_iter: int):
    m = sh.m
    d = d0.copy()
    seen = set()
    for it in range(max_iter):
        g = sh.grad(d)
        res = sh.residual(d, g)
        if res <= tol:
            return d, it, res
        H = sh.hess(d)
        hdiag = H.diagonal()
        c = m / hdiag
        y = d - g / hdiag
        act = np.abs(y) > c
        s = np.sign(y)
        key = (act.tobytes(), s[act].tobytes())
        if key in seen:
            # active-set cycle without progress
            return d, it, res
        seen.add(key)
        delta = -d.copy()
        A_idx = np.flatnonzero(act)
        I_idx = np.flatnonzero(~act)
        if A_idx.size:
            rhs = -(g[A_idx] + m[A_idx] * s[A_idx])
            if I_idx.size:
                rhs -= H[A_idx][:, I_idx] @ delta[I_idx]
            H_AA = H[A_idx][:, A_idx].tocsc()
            delta[A_idx] = spla.spsolve(H_AA, rhs) if A_idx.size > 1 else rhs / H_AA.toarray()[0, 0]
        d = d + delta
        d[~act] = 0.0
    g = sh.grad(d)
    return d, max_iter, sh.residual(d, g)


def _fista(sh: _Shifted, d0: np.ndarray, tol: float, max_iter: int = 20000):
    m = sh.m
    H = sh.hess(d0)
    # Gershgorin bound on the largest eigenvalue of M^{-1} H
    L = float(np.max(np.asarray(abs(H).sum(axis=1)).ravel() / m))
    d = d0.copy()
    y = d.copy()
    theta = 1.0
    res = sh.residual(d)
    for it in range(max_iter):
        step = 1.0 / L
        while True:
            gy = sh.grad(y)
            cand = _shrink(y - step * gy / m, step)
            fy = sh.value(y) - sh.p.dissipation(y)
            fc = sh.value(cand) - sh.p.dissipation(cand)
            diff = cand - y
            if fc <= fy + gy @ diff + 0.5 / step * float(np.sum(m * diff * diff)) + 1e-15 * abs(fy):
                break
            step *= 0.5
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        y = cand + (theta - 1.0) / theta_new * (cand - d)
        d, theta = cand, theta_new
        res = sh.residual(d)
        if res <= tol:
            return d, it + 1, res
    return d, max_iter, res


def _solve_shifted(p, t, zp, lam, d0, tol, max_iter):
    sh = _Shifted(p, t, zp, lam)
    d, it, res = _newton(sh, d0, tol, max_iter)
    if res > tol:
        d, it2, res = _fista(sh, d, tol)
        it += it2
        if res > tol:
            raise NoConvergence(f"inner solver stalled at residual {res:.3e}", best=zp + d,
                                residuals=res)
    return d, it


def _lumped_step(p: Problem, t: float, zp: np.ndarray, tau: float | None,
                 tol: float, max_iter: int):
    scale = p.residual_scale(t)
    inner_tol = 1e-3 * tol * scale
    d, iters = _solve_shifted(p, t, zp, 0.0, np.zeros(p.dim), inner_tol, max_iter)
    if tau is None or p.norm_V(d) <= tau:
        return d, 0.0, False, iters

    cache = {0.0: d}
    count = [iters]

    def psi(lam):
        start = cache[min(cache, key=lambda k: abs(k - lam))]
        dl, it = _solve_shifted(p, t, zp, lam, start, inner_tol, max_iter)
        cache[lam] = dl
        count[0] += it
        return p.norm_V(dl) - tau

    hi = p.dist_to_stable(t, zp) / tau + 1.0
    while psi(hi) > 0:
        hi *= 2.0
        if hi > 1e300:
            raise NoConvergence("could not bracket the ball multiplier")
    lam = brentq(psi, 0.0, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500)
    psi(lam)
    d = cache[lam]
    return d, float(lam), True, count[0]


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------

def _finish(p, t_prev, zp, z, lam, active, iters, tau, tol, what):
    res = SubproblemResult(z=z, lam=lam, active=active, iterations=iters,
                           objective=step_objective(p, t_prev, zp, z))
    kkt = certify(p, t_prev, zp, res, tau)
    res = SubproblemResult(z=z, lam=lam, active=active, kkt=kkt, iterations=iters,
                           objective=res.objective)
    if kkt.max() > tol * p.residual_scale(t_prev):
        raise NoConvergence(f"{what}: KKT residual {kkt.max():.3e} above tolerance",
                            best=z, residuals=kkt)
    return res


def solve_local_step(p: Problem, t_prev: float, z_prev, tau: float,
                     tol: float | None = None, max_iter: int = MAX_INNER_ITER) -> SubproblemResult:
    """Minimize I(t_prev, .) + R(. - z_prev) over the closed V-ball of radius tau."""
    if not tau > 0:
        raise InfeasibleTau(f"tau must be positive, got {tau}")
    zp = as_state(z_prev, p.dim)
    if tol is None:
        tol = default_tol(p)

    if isinstance(p, ScalarProblem):
        x0 = float(zp[0])
        lo, hi = x0 - tau, x0 + tau
        x, _, n = _solve_scalar(p, t_prev, x0, lo, hi)
        z = np.array([x])
        active = x == lo or x == hi or abs(x - x0) >= tau * (1 - 1e-12)
        lam = p.dist_to_stable(t_prev, z) / tau
        return _finish(p, t_prev, zp, z, lam, active, n, tau, tol, "local step")

    d, lam, active, iters = _lumped_step(p, t_prev, zp, tau, tol, max_iter)
    if active and abs(p.norm_V(d) - tau) > 1e-10 * tau:
        active = p.norm_V(d) >= tau * (1 - 1e-10)
    return _finish(p, t_prev, zp, zp + d, lam, active, iters, tau, tol, "local step")


def solve_global_step(p: Problem, t: float, z_prev, tol: float | None = None,
                      max_iter: int = MAX_INNER_ITER) -> SubproblemResult:
    """Minimize I(t, .) + R(. - z_prev) without the ball constraint."""
    zp = as_state(z_prev, p.dim)
    if tol is None:
        tol = default_tol(p)
    if isinstance(p, ScalarProblem):
        x, _, n = _solve_scalar(p, t, float(zp[0]), -math.inf, math.inf)
        return _finish(p, t, zp, np.array([x]), 0.0, False, n, None, tol, "global step")
    d, _, _, iters = _lumped_step(p, t, zp, None, tol, max_iter)
    return _finish(p, t, zp, zp + d, 0.0, False, iters, None, tol, "global step")
