"""Q-Wiener increments by truncated Karhunen-Loeve expansion.

The driving noise W is simulated as

    dW ~ sigma * sum_{j,k=1..J} sqrt(q_jk * tau) * xi_jk * e_jk(x, y)

with eigenvalues q_jk = (j^2 + k^2)^(-s) (trace class for s > 1), Dirichlet
sine eigenfunctions e_jk(x,y) = 2 sin(j pi x) sin(k pi y) on the unit square
(L2-rescaled for general rectangles), and xi_jk independent standard normals.

Randomness is counter-based: each (sample, step, component) tuple selects a
disjoint Philox counter block keyed by the master seed, and the J x J normal
draws occupy fixed raster positions (j, k) inside it.  Identical inputs give
bit-identical increments under any execution order, which makes parallel
ensembles reproducible.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .assembly import L2Projector, load_vector
from .basis import Basis1D
from .mesh import Mesh2D

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class QWienerSampler:
    """Truncated Karhunen-Loeve representation of the driving noise.

    Attributes
    ----------
    truncation : int
        Modes per direction J (J^2 retained modes).
    decay_exponent : float
        s >= 0 in q_jk = (j^2 + k^2)^(-s).
    amplitude : float
        Global scale sigma >= 0; sigma = 0 makes every increment zero.
    seed : int
        64-bit master seed of the counter-based stream family.
    shared : bool
        Whether one noise path drives all three equations of a sample
        (default) or each field gets an independent path.
    """

    truncation: int = 8
    decay_exponent: float = 2.0
    amplitude: float = 0.1
    seed: int = 0
    shared: bool = True

    def __post_init__(self):
        if self.truncation < 1:
            raise ValueError(f"truncation must be >= 1, got {self.truncation}")
        if self.decay_exponent < 0:
            raise ValueError(f"decay exponent must be >= 0, got {self.decay_exponent}")
        if self.amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")

    def eigenvalues(self) -> np.ndarray:
        """q_jk table of shape (J, J); entry [j-1, k-1] holds mode (j, k)."""
        j = np.arange(1, self.truncation + 1, dtype=float)
        return (j[:, None] ** 2 + j[None, :] ** 2) ** (-self.decay_exponent)


@dataclass(frozen=True)
class NoiseIncrement:
    """One sampled increment, projected onto the global space."""

    n: int
    coeffs: np.ndarray


def spectrum(sampler: QWienerSampler):
    """Retained modes as (j, k, q_jk) tuples, sorted by descending q_jk.

    Ties break on (j, k) so the table order is deterministic.
    """
    q = sampler.eigenvalues()
    rows = [(j + 1, k + 1, float(q[j, k]))
            for j in range(sampler.truncation)
            for k in range(sampler.truncation)]
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows


def spectrum_to_csv(sampler: QWienerSampler, path) -> None:
    """Dump the eigenvalue table as CSV with columns j, k, q."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "k", "q"])
        for j, k, q in spectrum(sampler):
            writer.writerow([j, k, repr(q)])


def mode_normals(sampler: QWienerSampler, sample_id: int, n: int,
                 component: int | None = None) -> np.ndarray:
    """The J x J standard-normal draws of one (sample, step) tuple.

    The Philox counter encodes (component, step, sample) in its high words,
    so distinct tuples use disjoint counter blocks; the (j, k) draw sits at a
    fixed raster position within the block.
    """
    if sample_id < 0 or n < 0:
        raise ValueError("sample_id and step index must be nonnegative")
    comp = 0 if component is None else component + 1
    key = np.array([sampler.seed & _MASK64, 0], dtype=np.uint64)
    counter = np.array([0, comp, n, sample_id], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    J = sampler.truncation
    return gen.standard_normal((J, J))


def mode_coefficients(sampler: QWienerSampler, sample_id: int, n: int, tau: float,
                      component: int | None = None) -> np.ndarray:
    """KL coefficients sigma * sqrt(q_jk * tau) * xi_jk of one increment."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if sampler.amplitude == 0.0:
        return np.zeros((sampler.truncation, sampler.truncation))
    xi = mode_normals(sampler, sample_id, n, component)
    return sampler.amplitude * np.sqrt(sampler.eigenvalues() * tau) * xi


def eigenfunction_values(sampler: QWienerSampler, mesh: Mesh2D, x, y):
    """sin-mode tensors at broadcast points: (J, P) per direction plus shape.

    Returns (sx, sy, shape) with sx[j-1] = sqrt(2/Lx) sin(j pi (x-x0)/Lx)
    flattened over the broadcast point set (and likewise sy), so the field
    value is einsum('jk,jp,kp->p', C, sx, sy).
    """
    x0, x1, y0, y1 = mesh.domain
    xb, yb = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    shape = xb.shape
    xh = (xb.ravel() - x0) / (x1 - x0)
    yh = (yb.ravel() - y0) / (y1 - y0)
    j = np.arange(1, sampler.truncation + 1, dtype=float)
    sx = np.sqrt(2.0 / (x1 - x0)) * np.sin(np.pi * j[:, None] * xh[None, :])
    sy = np.sqrt(2.0 / (y1 - y0)) * np.sin(np.pi * j[:, None] * yh[None, :])
    return sx, sy, shape


def increment_field(sampler: QWienerSampler, mesh: Mesh2D, coeffs_jk: np.ndarray):
    """Callable (x, y) evaluating the KL field with given mode coefficients."""

    def field(x, y):
        sx, sy, shape = eigenfunction_values(sampler, mesh, x, y)
        return np.einsum("jk,jp,kp->p", coeffs_jk, sx, sy).reshape(shape)

    return field


class NoiseWorkspace:
    """Precomputed mode-load matrix for fast repeated increment projection.

    The L2 projection of the KL field is linear in the mode coefficients:
    coeffs = Mass^{-1} (E @ c) with E[i, jk] = int e_jk phi_i.  E is built
    once per discretization; afterwards each increment costs one small
    matvec and one triangular solve.
    """

    def __init__(self, sampler: QWienerSampler, mesh: Mesh2D, basis: Basis1D,
                 projector: L2Projector | None = None):
        self.sampler, self.mesh, self.basis = sampler, mesh, basis
        self.projector = projector if projector is not None else L2Projector(mesh, basis)
        J = sampler.truncation
        cols = []
        for j in range(J):
            for k in range(J):
                c = np.zeros((J, J))
                c[j, k] = 1.0
                cols.append(load_vector(mesh, basis, increment_field(sampler, mesh, c)))
        self.mode_loads = np.stack(cols, axis=1)   # (n_global, J^2)

    def project_modes(self, coeffs_jk: np.ndarray) -> np.ndarray:
        return self.projector.project_load(self.mode_loads @ coeffs_jk.ravel())


def sample_increment(sampler: QWienerSampler, sample_id: int, n: int, tau: float,
                     mesh: Mesh2D, basis: Basis1D,
                     workspace: NoiseWorkspace | None = None,
                     component: int | None = None) -> NoiseIncrement:
    """Sample the increment W^n - W^{n-1} and project it onto the space.

    Bit-identical for identical (sampler, sample_id, n, tau, discretization);
    pass a NoiseWorkspace to amortize the projection over many draws.
    """
    if sampler.amplitude == 0.0:
        return NoiseIncrement(n=n, coeffs=np.zeros(mesh.n_global))
    c = mode_coefficients(sampler, sample_id, n, tau, component)
    if workspace is None:
        workspace = NoiseWorkspace(sampler, mesh, basis)
    return NoiseIncrement(n=n, coeffs=workspace.project_modes(c))
