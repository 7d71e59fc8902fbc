"""Rectangular multi-element mesh with C0 global numbering.

The domain is tiled by nex x ney axis-aligned rectangles of equal size, each
carrying a tensor-product basis of uniform order N.  Along each direction the
per-element 1D basis is {hat_left} + {psi_0..psi_{N-2}} + {hat_right}: the
interior modes vanish at element endpoints, so C0 continuity across element
interfaces is carried entirely by the two linear hat functions, which collapse
to a single shared global degree of freedom at every interior interface.  Hats
sitting on the domain boundary are dropped, so every global basis function
vanishes on the boundary.

Global 2D degrees of freedom are tensor products of the two 1D global bases,
numbered gx * n1d_y + gy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import Basis1D, shen_table


def element_basis_table(basis: Basis1D, pts):
    """All N+1 local 1D functions (and reference derivatives) at the points.

    Row 0 is the left hat (1-x)/2, rows 1..N-1 the interior modes, row N the
    right hat (1+x)/2.

    Returns
    -------
    (V, D) : arrays of shape (N+1, len(pts))
    """
    pts = np.atleast_1d(np.asarray(pts, dtype=float))
    n = basis.order + 1
    V = np.zeros((n, pts.size))
    D = np.zeros_like(V)
    V[0] = (1.0 - pts) / 2.0
    D[0] = -0.5
    V[-1] = (1.0 + pts) / 2.0
    D[-1] = 0.5
    P, dP = shen_table(basis, pts)
    V[1:-1] = P
    D[1:-1] = dP
    return V, D


class _Axis:
    """1D numbering for one coordinate direction.

    Geometric left-to-right ordering: modes of element 0, interface hat 1,
    modes of element 1, interface hat 2, ...  Boundary hats map to -1.
    """

    def __init__(self, lo: float, hi: float, ne: int, order: int):
        self.lo, self.hi, self.ne, self.order = lo, hi, ne, order
        self.h = (hi - lo) / ne
        self.edges = np.linspace(lo, hi, ne + 1)
        hat = np.full(ne + 1, -1, dtype=int)
        mode = np.full((ne, order - 1), -1, dtype=int)
        nid = 0
        for e in range(ne):
            for m in range(order - 1):
                mode[e, m] = nid
                nid += 1
            if e + 1 < ne:
                hat[e + 1] = nid
                nid += 1
        self.n_dofs = nid
        # local index m in 0..order: 0 left hat, 1..order-1 modes, order right hat
        self.local_to_global = np.full((ne, order + 1), -1, dtype=int)
        for e in range(ne):
            self.local_to_global[e, 0] = hat[e]
            self.local_to_global[e, 1:order] = mode[e]
            self.local_to_global[e, order] = hat[e + 1]

    def locate(self, x: float) -> tuple[int, float]:
        """Containing element and reference coordinate; edge points resolve
        to the lower-indexed element."""
        if not self.lo <= x <= self.hi:
            raise ValueError(f"coordinate {x} outside [{self.lo}, {self.hi}]")
        e = int(np.searchsorted(self.edges, x, side="left")) - 1
        e = min(max(e, 0), self.ne - 1)
        ref = 2.0 * (x - self.edges[e]) / self.h - 1.0
        return e, ref


@dataclass(frozen=True)
class ElementMap:
    """Affine map from the reference square [-1,1]^2 to one element."""

    index: int
    x0: float
    y0: float
    hx: float
    hy: float

    def __post_init__(self):
        if self.hx <= 0 or self.hy <= 0:
            raise ValueError(f"element {self.index} has nonpositive extent")

    @property
    def jacobian(self) -> tuple[float, float]:
        """Diagonal Jacobian (dx/dX, dy/dY) = (hx/2, hy/2)."""
        return self.hx / 2.0, self.hy / 2.0

    def to_physical(self, X, Y):
        return self.x0 + (np.asarray(X) + 1.0) * self.hx / 2.0, \
               self.y0 + (np.asarray(Y) + 1.0) * self.hy / 2.0


class Mesh2D:
    """Tensor-product rectangular mesh with global C0 numbering.

    Attributes
    ----------
    domain : (x0, x1, y0, y1)
    nex, ney : elements per direction
    order : per-element polynomial degree N
    n_global : total interior degrees of freedom
    dof_map : (n_elements, (N+1)^2) int array
        (element, local 2D mode) -> global index, -1 for boundary-constrained
        local functions.  Local mode (m, n) flattens to m*(N+1) + n.
    """

    def __init__(self, domain, nex: int, ney: int, order: int):
        x0, x1, y0, y1 = map(float, domain)
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"invalid domain {domain}: rectangle has no area")
        if nex < 1 or ney < 1:
            raise ValueError(f"element counts must be >= 1, got {nex} x {ney}")
        if order < 2:
            raise ValueError(f"element order must be >= 2, got {order}")
        self.domain = (x0, x1, y0, y1)
        self.nex, self.ney, self.order = nex, ney, order
        self.ax = _Axis(x0, x1, nex, order)
        self.ay = _Axis(y0, y1, ney, order)
        self.n_global = self.ax.n_dofs * self.ay.n_dofs
        self.n_elements = nex * ney

        nloc = order + 1
        self.dof_map = np.full((self.n_elements, nloc * nloc), -1, dtype=int)
        for ey in range(ney):
            for ex in range(nex):
                e = ey * nex + ex
                gx = self.ax.local_to_global[ex]
                gy = self.ay.local_to_global[ey]
                for m in range(nloc):
                    if gx[m] < 0:
                        continue
                    base = gx[m] * self.ay.n_dofs
                    for n in range(nloc):
                        if gy[n] >= 0:
                            self.dof_map[e, m * nloc + n] = base + gy[n]

    def element(self, e: int) -> ElementMap:
        ey, ex = divmod(e, self.nex)
        return ElementMap(index=e,
                          x0=self.ax.edges[ex], y0=self.ay.edges[ey],
                          hx=self.ax.h, hy=self.ay.h)

    def element_index(self, ex: int, ey: int) -> int:
        return ey * self.nex + ex

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.domain
        return (x1 - x0) * (y1 - y0)


def build_mesh(domain, nex: int, ney: int, order: int) -> Mesh2D:
    """Partition the rectangle `domain` = (x0, x1, y0, y1) into nex x ney
    equal elements of order `order` and number the global C0 space."""
    return Mesh2D(domain, nex, ney, order)


def locate(mesh: Mesh2D, x: float, y: float):
    """Containing element and reference-square coordinates of a point.

    Points on shared edges resolve to the lower-indexed element; points
    outside the domain raise ValueError.
    """
    ex, X = mesh.ax.locate(x)
    ey, Y = mesh.ay.locate(y)
    return mesh.element_index(ex, ey), (X, Y)
