"""Abstract rate-independent problem and its two concrete families.

A problem is the data of the evolution ``0 in dR(z') + D_z I(t, z)`` with

    I(t, z) = 1/2 <A z, z> + F(z) - <l(t), z>,      R(v) = sum_i m_i |v_i|.

States are plain float64 coefficient vectors. Dual quantities (gradients,
loads) use the Euclidean pairing on coefficients, so a dual vector ``xi``
acts on a state ``v`` as ``xi @ v``. The lumped weights ``m`` define both the
dissipation and the V inner product; the Z norm is supplied per family.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import Polynomial

from .errors import DimensionMismatch, IllPosedProblem


def as_state(z, dim: int | None = None) -> np.ndarray:
    """Coerce ``z`` to a finite 1-D float64 vector."""
    arr = np.atleast_1d(np.asarray(z, dtype=float)).ravel()
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"expected state of length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state has nonfinite entries")
    return arr


@dataclass(frozen=True)
class StabilityReport:
    ok: bool
    dist: float
    tol: float

    def __bool__(self):
        return self.ok


class Problem(ABC):
    """Common interface of every discrete rate-independent system."""

    tag: str = "problem"
    dim: int
    T: float
    z0: np.ndarray
    mass: np.ndarray
    kappa_hint: float | None = None
    lip_ell_hint: float | None = None

    def _check_common(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        self.z0 = as_state(self.z0, self.dim)
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.dim,) or np.any(self.mass <= 0):
            raise ValueError("lumped weights must be positive, one per coefficient")

    # -- energy ---------------------------------------------------------
    @abstractmethod
    def load(self, t: float) -> np.ndarray:
        """Dual vector representing l(t)."""

    @abstractmethod
    def energy(self, t: float, z) -> float: ...

    @abstractmethod
    def grad(self, t: float, z) -> np.ndarray: ...

    @abstractmethod
    def hessian(self, t: float, z):
        """Matrix of A + D^2 F(z); dense or scipy.sparse."""

    def apply_hessian(self, t: float, z, v) -> np.ndarray:
        return np.asarray(self.hessian(t, z) @ as_state(v, self.dim)).ravel()

    # -- dissipation and norms -----------------------------------------
    def dissipation(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.sum(self.mass * np.abs(v)))

    @abstractmethod
    def norm_Z(self, v) -> float: ...

    def norm_V(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return math.sqrt(float(np.sum(self.mass * v * v)))

    def norm_Vdual(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return math.sqrt(float(np.sum(xi * xi / self.mass)))

    def riesz_V(self, v) -> np.ndarray:
        """J_V v: the dual vector representing <v, .>_V."""
        return self.mass * np.asarray(v, dtype=float)

    def norms_Z(self, vs: np.ndarray) -> np.ndarray:
        """Row-wise Z norms of a stack of states."""
        return np.array([self.norm_Z(v) for v in vs])

    # -- stability -----------------------------------------------------
    def dist_to_stable(self, t: float, z) -> float:
        # dR(0) is the box |xi_i| <= m_i; its V*-projection is componentwise
        g = -self.grad(t, z)
        excess = np.maximum(np.abs(g) - self.mass, 0.0)
        return math.sqrt(float(np.sum(excess * excess / self.mass)))

    def stability_tol(self, t: float) -> float:
        return 1e-10

    def residual_scale(self, t: float) -> float:
        """Scale that turns absolute KKT residuals into relative ones."""
        return 1.0

    def is_locally_stable(self, t: float, z, tol: float | None = None) -> bool:
        if tol is None:
            tol = self.stability_tol(t)
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return self.dist_to_stable(t, z) <= tol

    def gamma_measure(self, t: float, z1, z2) -> float:
        z1 = as_state(z1, self.dim)
        z2 = as_state(z2, self.dim)
        return float((self.grad(t, z1) - self.grad(t, z2)) @ (z1 - z2))

    def validate_initial(self, tol: float | None = None) -> StabilityReport:
        if tol is None:
            tol = self.stability_tol(0.0)
        d = self.dist_to_stable(0.0, self.z0)
        return StabilityReport(ok=d <= tol, dist=d, tol=tol)

    # -- helpers -------------------------------------------------------
    @property
    def has_hints(self) -> bool:
        return self.kappa_hint is not None and self.lip_ell_hint is not None

    def cache_key(self) -> tuple:
        return (self.tag, self.dim, self.T, id(self))

    def __repr__(self):
        return f"{type(self).__name__}(tag={self.tag!r}, dim={self.dim}, T={self.T})"


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise IllPosedProblem(f"nonfinite {what}")
    return x


class ScalarProblem(Problem):
    """One-dimensional problem with Z = V = R and R(v) = |v|.

    ``F`` is piecewise polynomial with one piece on ``z < 0`` and one on
    ``z >= 0``; this is what lets the incremental step be solved by
    enumerating stationary points.
    """

    def __init__(
        self,
        F_neg: Polynomial,
        F_pos: Polynomial,
        load: Callable[[float], float],
        T: float,
        z0: float,
        a: float = 1.0,
        tag: str = "scalar",
        kappa_hint: float | None = None,
        lip_ell_hint: float | None = None,
        convexity_region: tuple[float, float] | None = None,
    ):
        self.tag = tag
        self.dim = 1
        self.T = float(T)
        self.z0 = z0
        self.mass = np.ones(1)
        self.a = float(a)
        self.F_neg = F_neg if isinstance(F_neg, Polynomial) else Polynomial(F_neg)
        self.F_pos = F_pos if isinstance(F_pos, Polynomial) else Polynomial(F_pos)
        self._load = load
        self.kappa_hint = kappa_hint
        self.lip_ell_hint = lip_ell_hint
        # interval on which I(t, .) is kappa_hint-uniformly convex
        self.convexity_region = convexity_region
        self._check_common()

    # scalar pieces ----------------------------------------------------
    def ell(self, t: float) -> float:
        return float(self._load(t))

    def F(self, z: float) -> float:
        return float(self.F_pos(z) if z >= 0 else self.F_neg(z))

    def dF(self, z: float) -> float:
        return float(self.F_pos.deriv()(z) if z >= 0 else self.F_neg.deriv()(z))

    def d2F(self, z: float) -> float:
        return float(self.F_pos.deriv(2)(z) if z >= 0 else self.F_neg.deriv(2)(z))

    def energy_pieces(self, t: float) -> list[tuple[float, float, Polynomial]]:
        """I(t, .) as polynomials on (-inf, 0) and [0, inf)."""
        base = Polynomial([0.0, -self.ell(t), 0.5 * self.a])
        return [(-math.inf, 0.0, base + self.F_neg), (0.0, math.inf, base + self.F_pos)]

    # Problem interface --------------------------------------------------
    def load(self, t):
        return np.array([self.ell(t)])

    def energy(self, t, z):
        z = float(as_state(z, 1)[0])
        return float(_finite(0.5 * self.a * z * z + self.F(z) - self.ell(t) * z, "energy"))

    def grad(self, t, z):
        z = float(as_state(z, 1)[0])
        return _finite(np.array([self.a * z + self.dF(z) - self.ell(t)]), "gradient")

    def hessian(self, t, z):
        z = float(as_state(z, 1)[0])
        return np.array([[self.a + self.d2F(z)]])

    def norm_Z(self, v):
        return float(np.abs(np.asarray(v, dtype=float)).sum())

    def norms_Z(self, vs):
        return np.abs(np.asarray(vs, dtype=float)).reshape(len(vs), -1)[:, 0]


class LumpedProblem(Problem):
    """Semilinear problem with sparse A, lumped L1 dissipation and ``F == 0``.

    The Z norm is the energy norm ``sqrt(z^T A z)``, so the quadratic energy
    is 1-uniformly convex in Z.
    """

    def __init__(
        self,
        A,
        mass,
        load: Callable[[float], np.ndarray],
        T: float,
        z0=None,
        tag: str = "lumped",
        kappa_hint: float | None = 1.0,
        lip_ell_hint: float | None = None,
        stability_rtol: float = 1e-8,
    ):
        self.tag = tag
        self.A = sp.csr_matrix(A)
        self.dim = self.A.shape[0]
        self.T = float(T)
        self.mass = mass
        self.z0 = np.zeros(self.dim) if z0 is None else z0
        self._load = load
        self.kappa_hint = kappa_hint
        self.lip_ell_hint = lip_ell_hint
        self.stability_rtol = stability_rtol
        self._check_common()

    def load(self, t):
        return np.asarray(self._load(t), dtype=float)

    def energy(self, t, z):
        z = as_state(z, self.dim)
        return float(_finite(0.5 * z @ (self.A @ z) - self.load(t) @ z, "energy"))

    def grad(self, t, z):
        z = as_state(z, self.dim)
        return _finite(self.A @ z - self.load(t), "gradient")

    def hessian(self, t, z):
        return self.A

    def norm_Z(self, v):
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ (self.A @ v)), 0.0))

    def norms_Z(self, vs):
        vs = np.asarray(vs, dtype=float)
        sq = np.einsum("ij,ij->i", vs, (self.A @ vs.T).T)
        return np.sqrt(np.maximum(sq, 0.0))

    def stability_tol(self, t):
        return self.stability_rtol * (1.0 + self.norm_Vdual(self.load(t)))

    def residual_scale(self, t):
        return 1.0 + self.norm_Vdual(self.load(t))
