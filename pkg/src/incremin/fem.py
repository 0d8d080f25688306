"""P1 finite elements on a Friedrichs-Keller triangulation of the unit square.

Every grid square is split along its lower-left to upper-right diagonal.
Dirichlet nodes are eliminated; interior nodes are numbered
lexicographically with x fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Mesh:
    n: int
    coords: np.ndarray  # (N_all, 2) all grid nodes
    elements: np.ndarray  # (2n^2, 3) node indices into coords
    interior: np.ndarray  # indices of interior nodes into coords
    dof_of: np.ndarray  # coords index -> interior dof, -1 on the boundary

    @property
    def h(self) -> float:
        """Longest edge length."""
        return math.sqrt(2.0) / self.n

    @property
    def hx(self) -> float:
        return 1.0 / self.n

    @property
    def num_dofs(self) -> int:
        return self.interior.size

    @property
    def nodes(self) -> np.ndarray:
        """Coordinates of the interior nodes, in dof order."""
        return self.coords[self.interior]

    def interpolate(self, func) -> np.ndarray:
        x = self.nodes
        return np.asarray(func(x[:, 0], x[:, 1]), dtype=float)


def build_mesh(n: int) -> Mesh:
    if int(n) != n or n < 2:
        raise ValueError(f"need at least 2 subdivisions per side, got {n}")
    n = int(n)
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g)  # row index = y, column index = x
    coords = np.column_stack([X.ravel(), Y.ravel()])

    def node(i, j):
        return j * (n + 1) + i

    elems = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)
            elems.append((a, b, c))
            elems.append((a, c, d))
    elements = np.array(elems, dtype=np.int64)

    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    inner = ((ii > 0) & (ii < n) & (jj > 0) & (jj < n)).ravel()
    interior = np.flatnonzero(inner)
    dof_of = -np.ones(coords.shape[0], dtype=np.int64)
    dof_of[interior] = np.arange(interior.size)
    return Mesh(n=n, coords=coords, elements=elements, interior=interior, dof_of=dof_of)


def _element_geometry(mesh: Mesh):
    P = mesh.coords[mesh.elements]  # (E, 3, 2)
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * np.abs(det)
    # gradients of the barycentric coordinates
    inv = np.empty((len(det), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("ka,eab->ekb", ref, inv)  # (E, 3, 2)
    return area, grads


def _restrict(mesh: Mesh, rows, cols, vals):
    r = mesh.dof_of[rows]
    c = mesh.dof_of[cols]
    keep = (r >= 0) & (c >= 0)
    N = mesh.num_dofs
    return sp.coo_matrix((vals[keep], (r[keep], c[keep])), shape=(N, N)).tocsr()


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """P1 stiffness of -Laplace on the interior nodes."""
    area, grads = _element_geometry(mesh)
    Ke = area[:, None, None] * np.einsum("eib,ejb->eij", grads, grads)
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    K = _restrict(mesh, rows, cols, Ke.ravel())
    K.sum_duplicates()
    K.eliminate_zeros()
    return K


def assemble_lumped_mass(mesh: Mesh) -> np.ndarray:
    """Row-sum lumped mass: a third of the adjacent triangle areas per node."""
    area, _ = _element_geometry(mesh)
    m_all = np.zeros(mesh.coords.shape[0])
    np.add.at(m_all, mesh.elements.ravel(), np.repeat(area / 3.0, 3))
    return m_all[mesh.interior]


def load_profile(x1, x2):
    """f(x) = 2 (x1 (1 - x1) + x2 (1 - x2))."""
    return 2.0 * (x1 * (1.0 - x1) + x2 * (1.0 - x2))


def bubble(x1, x2):
    """v(x) = x1 x2 (1 - x1) (1 - x2)."""
    return x1 * x2 * (1.0 - x1) * (1.0 - x2)


def assemble_load(mesh: Mesh, t: float, mass: np.ndarray | None = None) -> np.ndarray:
    """Nodal-quadrature load of l(t, x) = 1 - cos(pi t / 2) f(x) / pi."""
    if mass is None:
        mass = assemble_lumped_mass(mesh)
    f = mesh.interpolate(load_profile)
    return mass * (1.0 - math.cos(math.pi * t / 2.0) * f / math.pi)


@dataclass(frozen=True)
class NormBundle:
    A: sp.csr_matrix
    mass: np.ndarray

    def Z(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ (self.A @ v)), 0.0))

    def V(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return math.sqrt(float(np.sum(self.mass * v * v)))

    def Vdual(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return math.sqrt(float(np.sum(xi * xi / self.mass)))


def norms(mesh: Mesh, A=None, mass=None) -> NormBundle:
    if A is None:
        A = assemble_stiffness(mesh)
    if mass is None:
        mass = assemble_lumped_mass(mesh)
    return NormBundle(A=sp.csr_matrix(A), mass=np.asarray(mass))


def dump_coo(matrix, path) -> None:
    """Write ``i j value`` triplets (0-based), one nonzero per line."""
    M = sp.coo_matrix(matrix) if not np.ndim(matrix) == 1 else sp.diags(matrix).tocoo()
    order = np.lexsort((M.col, M.row))
    with open(path, "w") as fh:
        for i, j, v in zip(M.row[order], M.col[order], M.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")
