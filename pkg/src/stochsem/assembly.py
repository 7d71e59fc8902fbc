"""Assembly of global operators, load vectors, evaluation and L2 projection.

Operators are assembled element by element over tensor-product Gauss
quadrature, mapped by the (diagonal, constant) affine Jacobian and scattered
through the mesh dof_map with summation at shared degrees of freedom.  Four
kinds are supported:

    mass       (c * phi_j, phi_i)
    diffusion  (c * grad phi_j, grad phi_i)
    advection  -(c * phi_j, d/dx phi_i) - (c * phi_j, d/dy phi_i)
    reaction   (c * phi_j, phi_i)

The advection pairing puts the derivative on the test function, which for a
constant coefficient and homogeneous Dirichlet data equals the usual
(c * grad phi_j, phi_i) pairing by integration by parts and makes the
operator antisymmetric.

Element processing order is fixed, so assembly is deterministic; all outputs
are immutable once built and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import Basis1D
from .mesh import Mesh2D, element_basis_table, locate

OPERATOR_KINDS = ("mass", "diffusion", "advection", "reaction")


@dataclass(frozen=True)
class GlobalOperator:
    """Assembled sparse operator on the global C0 space."""

    n: int
    matrix: sp.csr_matrix
    kind: str

    def __matmul__(self, vec):
        return self.matrix @ vec

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass
class StateVector:
    """Coefficient blocks of the three fields at one time level."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not (len(self.u) == len(self.v) == len(self.w)):
            raise ValueError("state blocks have mismatched lengths")

    @property
    def fields(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.u, self.v, self.w)

    @property
    def n(self) -> int:
        return len(self.u)

    def copy(self) -> "StateVector":
        return StateVector(self.u.copy(), self.v.copy(), self.w.copy(), self.t)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))
                    and np.all(np.isfinite(self.w)))

    def stacked(self) -> np.ndarray:
        return np.stack(self.fields)


class Quadrature2D:
    """Per-(mesh, basis) evaluation tables shared by the assembly routines.

    V, D hold the N+1 local 1D functions (values / reference derivatives) at
    the quadrature nodes; xq[ex], yq[ey] are the mapped nodes per element
    column/row; W2 is the tensor weight grid.
    """

    def __init__(self, mesh: Mesh2D, basis: Basis1D):
        if basis.order != mesh.order:
            raise ValueError(
                f"basis order {basis.order} does not match mesh order {mesh.order}")
        self.mesh, self.basis = mesh, basis
        self.V, self.D = element_basis_table(basis, basis.quad_nodes)
        self.W2 = np.outer(basis.quad_weights, basis.quad_weights)
        half = (basis.quad_nodes + 1.0) / 2.0
        self.xq = np.array([mesh.ax.edges[e] + half * mesh.ax.h for e in range(mesh.nex)])
        self.yq = np.array([mesh.ay.edges[e] + half * mesh.ay.h for e in range(mesh.ney)])
        self.jac = (mesh.ax.h / 2.0) * (mesh.ay.h / 2.0)
        self.nloc = basis.order + 1

    def element_grid(self, e: int):
        """Mapped quadrature grid (X, Y meshgrid arrays) of element e."""
        ey, ex = divmod(e, self.mesh.nex)
        return self.xq[ex][:, None], self.yq[ey][None, :]

    def gather(self, coeffs: np.ndarray) -> np.ndarray:
        """Local coefficient tensors (n_elements, N+1, N+1); constrained
        local functions get coefficient zero."""
        dm = self.mesh.dof_map
        local = np.where(dm >= 0, coeffs[np.clip(dm, 0, None)], 0.0)
        return local.reshape(self.mesh.n_elements, self.nloc, self.nloc)


def _coefficient_values(quad: Quadrature2D, coefficient_field, e: int) -> np.ndarray:
    X, Y = quad.element_grid(e)
    c = np.broadcast_to(np.asarray(coefficient_field(X, Y), dtype=float),
                        (quad.basis.n_quad, quad.basis.n_quad))
    if not np.all(np.isfinite(c)):
        qx, qy = np.unravel_index(int(np.argmin(np.isfinite(c))), c.shape)
        raise ValueError(
            f"non-finite coefficient sample at quadrature point "
            f"({X[qx, 0]}, {Y[0, qy]}) in element {e}")
    return c


def assemble(mesh: Mesh2D, basis: Basis1D, coefficient_field, kind: str) -> GlobalOperator:
    """Assemble one global operator of the given kind.

    coefficient_field : callable (x, y) -> array, evaluated at the mapped
    quadrature points of every element.
    """
    if kind not in OPERATOR_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    quad = Quadrature2D(mesh, basis)
    V, D, W2 = quad.V, quad.D, quad.W2
    sx = 2.0 / mesh.ax.h   # d(ref)/d(physical)
    sy = 2.0 / mesh.ay.h
    nloc2 = quad.nloc**2

    rows, cols, vals = [], [], []
    for e in range(mesh.n_elements):
        C = _coefficient_values(quad, coefficient_field, e) * W2 * quad.jac
        if kind in ("mass", "reaction"):
            loc = np.einsum("qr,mq,kq,nr,lr->mnkl", C, V, V, V, V, optimize=True)
        elif kind == "diffusion":
            loc = sx * sx * np.einsum("qr,mq,kq,nr,lr->mnkl", C, D, D, V, V, optimize=True)
            loc += sy * sy * np.einsum("qr,mq,kq,nr,lr->mnkl", C, V, V, D, D, optimize=True)
        else:   # advection: derivative on the test function, both directions
            loc = -sx * np.einsum("qr,mq,kq,nr,lr->mnkl", C, D, V, V, V, optimize=True)
            loc -= sy * np.einsum("qr,mq,kq,nr,lr->mnkl", C, V, V, D, V, optimize=True)
        loc = loc.reshape(nloc2, nloc2)
        g = mesh.dof_map[e]
        keep = g >= 0
        idx = np.nonzero(keep)[0]
        gi = g[idx]
        rows.append(np.repeat(gi, len(gi)))
        cols.append(np.tile(gi, len(gi)))
        vals.append(loc[np.ix_(idx, idx)].ravel())

    n = mesh.n_global
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    return GlobalOperator(n=n, matrix=mat, kind=kind)


def load_vector(mesh: Mesh2D, basis: Basis1D, field, t: float | None = None) -> np.ndarray:
    """Load vector int field * phi_i dOmega by element quadrature.

    field is (x, y) -> array, or (x, y, t) -> array when t is given.
    """
    quad = Quadrature2D(mesh, basis)
    out = np.zeros(mesh.n_global)
    for e in range(mesh.n_elements):
        X, Y = quad.element_grid(e)
        F = field(X, Y) if t is None else field(X, Y, t)
        F = np.broadcast_to(np.asarray(F, dtype=float),
                            (basis.n_quad, basis.n_quad))
        if not np.all(np.isfinite(F)):
            qx, qy = np.unravel_index(int(np.argmin(np.isfinite(F))), F.shape)
            raise ValueError(
                f"non-finite field sample at quadrature point "
                f"({X[qx, 0]}, {Y[0, qy]}) in element {e}")
        loc = np.einsum("qr,mq,nr->mn", F * quad.W2 * quad.jac, quad.V, quad.V,
                        optimize=True).ravel()
        g = mesh.dof_map[e]
        keep = g >= 0
        np.add.at(out, g[keep], loc[keep])
    return out


def load_from_values(quad: Quadrature2D, values: np.ndarray) -> np.ndarray:
    """Load vector from precomputed values at all element quadrature grids.

    values has shape (n_elements, n_quad, n_quad); used for the nonlinear
    term, whose arguments already live at the quadrature points.
    """
    loc = np.einsum("eqr,qr,mq,nr->emn", values, quad.W2 * quad.jac,
                    quad.V, quad.V, optimize=True)
    out = np.zeros(quad.mesh.n_global)
    dm = quad.mesh.dof_map
    keep = dm >= 0
    np.add.at(out, dm[keep], loc.reshape(quad.mesh.n_elements, -1)[keep])
    return out


def values_at_quad(quad: Quadrature2D, coeffs: np.ndarray) -> np.ndarray:
    """Field values at every element quadrature grid, shape (n_el, nq, nq)."""
    local = quad.gather(coeffs)
    return np.einsum("emn,mq,nr->eqr", local, quad.V, quad.V, optimize=True)


def _axis_eval_matrix(axis, basis: Basis1D, pts, deriv: bool = False) -> np.ndarray:
    """Evaluation matrix of all 1D global basis functions at the points.

    With deriv=True rows hold physical-space derivatives (chain factor 2/h).
    """
    pts = np.atleast_1d(np.asarray(pts, dtype=float))
    E = np.zeros((pts.size, axis.n_dofs))
    scale = 2.0 / axis.h
    for i, x in enumerate(pts):
        e, X = axis.locate(float(x))
        V, D = element_basis_table(basis, np.array([X]))
        g = axis.local_to_global[e]
        keep = g >= 0
        E[i, g[keep]] = (D[keep, 0] * scale) if deriv else V[keep, 0]
    return E


def evaluate_grid(mesh: Mesh2D, basis: Basis1D, coeffs: np.ndarray, xs, ys,
                  dx: int = 0, dy: int = 0) -> np.ndarray:
    """Field values on the tensor grid xs x ys, shape (len(xs), len(ys)).

    dx/dy in {0, 1} select the x/y partial derivative instead of the value.
    """
    if len(coeffs) != mesh.n_global:
        raise ValueError(f"coefficient vector length {len(coeffs)} != {mesh.n_global}")
    Ex = _axis_eval_matrix(mesh.ax, basis, xs, deriv=bool(dx))
    Ey = _axis_eval_matrix(mesh.ay, basis, ys, deriv=bool(dy))
    C = np.asarray(coeffs).reshape(mesh.ax.n_dofs, mesh.ay.n_dofs)
    return Ex @ C @ Ey.T


def grad_values_at_quad(quad: Quadrature2D, coeffs: np.ndarray):
    """Gradient components at every element quadrature grid.

    Returns (gx, gy), each of shape (n_elements, n_quad, n_quad).
    """
    local = quad.gather(coeffs)
    sx = 2.0 / quad.mesh.ax.h
    sy = 2.0 / quad.mesh.ay.h
    gx = sx * np.einsum("emn,mq,nr->eqr", local, quad.D, quad.V, optimize=True)
    gy = sy * np.einsum("emn,mq,nr->eqr", local, quad.V, quad.D, optimize=True)
    return gx, gy


def evaluate(mesh: Mesh2D, basis: Basis1D, coeffs: np.ndarray, points) -> np.ndarray:
    """Field values at scattered points, shape (npoints,).

    points is array-like of shape (npoints, 2); points outside the domain
    raise ValueError.
    """
    if len(coeffs) != mesh.n_global:
        raise ValueError(f"coefficient vector length {len(coeffs)} != {mesh.n_global}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    C = np.asarray(coeffs).reshape(mesh.ax.n_dofs, mesh.ay.n_dofs)
    out = np.empty(pts.shape[0])
    for i, (x, y) in enumerate(pts):
        e, (X, Y) = locate(mesh, x, y)
        Vx, _ = element_basis_table(basis, np.array([X]))
        Vy, _ = element_basis_table(basis, np.array([Y]))
        ey, ex = divmod(e, mesh.nex)
        gx = mesh.ax.local_to_global[ex]
        gy = mesh.ay.local_to_global[ey]
        kx = gx >= 0
        ky = gy >= 0
        out[i] = Vx[kx, 0] @ C[np.ix_(gx[kx], gy[ky])] @ Vy[ky, 0]
    return out


class L2Projector:
    """Mass-matrix solver for repeated L2 projections onto the global space."""

    def __init__(self, mesh: Mesh2D, basis: Basis1D):
        self.mesh, self.basis = mesh, basis
        self.quad = Quadrature2D(mesh, basis)
        self.mass = assemble(mesh, basis, lambda x, y: np.ones(np.broadcast(x, y).shape),
                             "mass")
        self._factor = spla.splu(self.mass.matrix.tocsc())

    def project(self, field, t: float | None = None) -> np.ndarray:
        return self._factor.solve(load_vector(self.mesh, self.basis, field, t))

    def project_load(self, load: np.ndarray) -> np.ndarray:
        return self._factor.solve(load)


def project_L2(mesh: Mesh2D, basis: Basis1D, field, t: float | None = None) -> np.ndarray:
    """L2 projection of a field onto the global space (one-shot form).

    Solves Mass @ c = load_vector(field).  For repeated projections on the
    same discretization construct an L2Projector once instead.
    """
    return L2Projector(mesh, basis).project(field, t)
