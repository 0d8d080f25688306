"""The benchmark problems, their exact solutions and a few reference tools."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from . import fem
from .problem import LumpedProblem, Problem, ScalarProblem

# F(z) = -+2 z^3 - 5/2 z^2 + 1, mirror-symmetric cubic double well
F_NEG = Polynomial([1.0, 0.0, -2.5, -2.0])
F_POS = Polynomial([1.0, 0.0, -2.5, 2.0])

BRANCH_1 = -1.0 / 3.0
BRANCH_2 = (1.0 + math.sqrt(2.0)) / 3.0


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form trajectory t -> state on ``interval``.

    ``breakpoints`` lists the times where the formula switches pieces; they
    are added to the sampling grid of sup-norm errors.
    """

    func: Callable[[float], np.ndarray]
    interval: tuple[float, float]
    tag: str
    breakpoints: tuple[float, ...] = ()
    dim: int = 1

    def __call__(self, t: float) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.func(t), dtype=float))

    def sample(self, ts) -> np.ndarray:
        return np.vstack([self(t) for t in ts])


# --------------------------------------------------------------------------
# one-dimensional problems
# --------------------------------------------------------------------------

def counterexample_problem() -> ScalarProblem:
    """Nonconvex double well whose local scheme picks a branch depending on tau."""
    return ScalarProblem(
        F_NEG, F_POS,
        load=lambda t: -24.0 * (t - 0.25) ** 2 + 5.0 / 3.0,
        T=0.5, z0=-1.0 / 3.0, tag="counter1d",
    )


def counterexample_branches() -> tuple[ExactSolution, ExactSolution]:
    z1 = ExactSolution(lambda t: np.array([BRANCH_1]), (0.0, 0.5), "counter1d-branch1")
    z2 = ExactSolution(
        lambda t: np.array([BRANCH_1 if t < 0.25 else BRANCH_2]),
        (0.0, 0.5), "counter1d-branch2", breakpoints=(0.25,),
    )
    return z1, z2


def locally_convex_problem() -> ScalarProblem:
    # I''(t, z) = -12 z - 4 on z < 0, which is >= 2 on [-0.7, -0.5]
    return ScalarProblem(
        F_NEG, F_POS,
        load=lambda t: -0.5 * (t - 1.5) ** 2 + 1.5,
        T=3.0, z0=-2.0 / 3.0, tag="local1d",
        kappa_hint=2.0, lip_ell_hint=1.5, convexity_region=(-0.7, -0.5),
    )


def _moving_branch(t):
    return -(1.0 + 0.5 * math.sqrt(1.0 + 3.0 * (t - 1.5) ** 2)) / 3.0


def locally_convex_exact(variant: str = "corrected") -> ExactSolution:
    """Differential solution from z0 = -2/3.

    The state follows the moving branch while the load increases and sticks
    at -1/2 once the load peaks at t = 3/2. ``variant="verbatim"`` keeps the
    moving branch until t = 2 instead; that curve is locally stable but runs
    backwards on (3/2, 2), so it violates the flow rule there.
    """
    if variant not in ("corrected", "verbatim"):
        raise ValueError(f"unknown variant {variant!r}")
    t_stop = 1.5 if variant == "corrected" else 2.0

    def z(t):
        if t < 0.5:
            return np.array([-2.0 / 3.0])
        if t < t_stop:
            return np.array([_moving_branch(t)])
        return np.array([-0.5])

    return ExactSolution(z, (0.0, 3.0), f"local1d-{variant}", breakpoints=(0.5, t_stop))


def quadratic_toy_problem(ell: float = 1.0, T: float = 1.0, z0: float = 0.0) -> ScalarProblem:
    """I(t, z) = z^2 / 2 - ell z with constant load; stable set [ell - 1, ell + 1]."""
    return ScalarProblem(
        Polynomial([0.0]), Polynomial([0.0]), load=lambda t: ell,
        T=T, z0=z0, tag=f"quad1d(ell={ell})", kappa_hint=1.0, lip_ell_hint=0.0,
    )


# --------------------------------------------------------------------------
# PDE problem
# --------------------------------------------------------------------------

class PDEProblem(LumpedProblem):
    def __init__(self, mesh: fem.Mesh):
        A = fem.assemble_stiffness(mesh)
        m = fem.assemble_lumped_mass(mesh)
        f = mesh.interpolate(fem.load_profile)
        self.mesh = mesh
        self._mf = m * f

        def load(t):
            return m - (math.cos(math.pi * t / 2.0) / math.pi) * self._mf

        # l'(t) = sin(pi t / 2) f / 2, so |l|_Lip = ||f||_{V*} / 2
        lip = 0.5 * math.sqrt(float(np.sum(m * f * f)))
        super().__init__(A, m, load, T=3.0, z0=np.zeros(A.shape[0]),
                         tag=f"pde(n={mesh.n})", kappa_hint=1.0, lip_ell_hint=lip)

    def cache_key(self):
        return ("pde", self.mesh.n)


def pde_problem(n: int = 32) -> PDEProblem:
    return PDEProblem(fem.build_mesh(n))


def pde_exact(mesh: fem.Mesh, variant: str = "corrected") -> ExactSolution:
    """Nodal interpolant of the differential solution of the PDE problem.

    On [2, 3] the state sticks at its value at t = 2, which is +v / pi.
    ``variant="verbatim"`` uses -v / pi there instead; that state is neither
    continuous at t = 2 nor locally stable.
    """
    if variant not in ("corrected", "verbatim"):
        raise ValueError(f"unknown variant {variant!r}")
    v = mesh.interpolate(fem.bubble)
    sign = 1.0 if variant == "corrected" else -1.0
    zero = np.zeros_like(v)

    def z(t):
        if t < 1.0:
            return zero
        if t < 2.0:
            return -(math.cos(math.pi * t / 2.0) / math.pi) * v
        return sign * v / math.pi

    return ExactSolution(z, (0.0, 3.0), f"pde(n={mesh.n})-{variant}",
                         breakpoints=(1.0, 2.0), dim=v.size)


# --------------------------------------------------------------------------
# stability sets and references
# --------------------------------------------------------------------------

def _bisect(pred, a, b, tol=1e-10):
    """Boundary between pred(a) and not pred(b)."""
    while abs(b - a) > tol:
        mid = 0.5 * (a + b)
        if pred(mid):
            a = mid
        else:
            b = mid
    return a


def stability_set_1d(p: Problem, t: float, z_lo: float, z_hi: float,
                     step: float = 1e-3) -> list[tuple[float, float]]:
    """Connected components of the local-stability set inside [z_lo, z_hi].

    Components narrower than ``step`` can be missed by the coarse scan.
    """
    if p.dim != 1:
        raise ValueError("stability_set_1d needs a scalar problem")

    def stable(z):
        return p.dist_to_stable(t, np.array([z])) == 0.0

    n = max(int(math.ceil((z_hi - z_lo) / step)), 1)
    grid = np.linspace(z_lo, z_hi, n + 1)
    flags = [stable(z) for z in grid]
    out = []
    i = 0
    while i <= n:
        if not flags[i]:
            i += 1
            continue
        j = i
        while j + 1 <= n and flags[j + 1]:
            j += 1
        lo = grid[i] if i == 0 else _bisect(stable, grid[i], grid[i - 1])
        hi = grid[j] if j == n else _bisect(stable, grid[j], grid[j + 1])
        out.append((float(lo), float(hi)))
        i = j + 1
    return out


_REFERENCE_CACHE: dict = {}


def reference_solve(p: Problem, tau_ref: float):
    """Fine-step local-scheme solution used as a stand-in exact solution."""
    from .stepper import filter_progress, run_local

    key = (p.cache_key(), float(tau_ref))
    if key not in _REFERENCE_CACHE:
        _REFERENCE_CACHE[key] = filter_progress(run_local(p, tau_ref))
    return _REFERENCE_CACHE[key]


PROBLEM_TAGS = ("counter1d", "local1d", "pde")


def get_problem(tag: str, mesh_n: int = 32) -> Problem:
    if tag == "counter1d":
        return counterexample_problem()
    if tag == "local1d":
        return locally_convex_problem()
    if tag == "pde":
        return pde_problem(mesh_n)
    raise ValueError(f"unknown problem {tag!r}; choose from {', '.join(PROBLEM_TAGS)}")


def analytic_reference(p: Problem):
    """Trusted closed-form solution for ``p``, or None."""
    if p.tag == "local1d":
        return locally_convex_exact()
    if isinstance(p, PDEProblem):
        return pde_exact(p.mesh)
    return None
