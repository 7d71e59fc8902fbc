"""Ensemble estimation of the expected solution and error measurement.

Trajectories are independent work units; per-sample final states stream into
Welford moment accumulators.  Samples are processed in fixed-size chunks and
the per-chunk partial moments merge in chunk order, so the ensemble mean is
identical no matter how many workers execute the chunks (noise realizations
are already keyed by sample id).  Workers run as threads: the heavy lifting
is numpy/scipy work that releases the GIL, and the factorized schemes shared
read-only across samples are not picklable.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .assembly import (StateVector, Quadrature2D, evaluate_grid,
                       grad_values_at_quad, values_at_quad)
from .basis import Basis1D
from .mesh import Mesh2D
from .model import ModelSpec
from .stochastic import NoiseWorkspace, QWienerSampler
from .timestepper import SchemeOperators, build_scheme, run

DEFAULT_CHUNK = 32
LINF_GRID = 101


@dataclass
class EnsembleResult:
    """Streaming mean/variance of final states over M samples."""

    m: int
    mean: StateVector
    m2: np.ndarray                    # (3, n) sum of squared deviations
    seed: int
    snapshot_means: dict = dc_field(default_factory=dict)   # t -> (3, n)

    @property
    def variance(self) -> np.ndarray:
        if self.m < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.m - 1)

    @property
    def stderr(self) -> np.ndarray:
        """Per-DOF standard error sqrt(variance / M)."""
        return np.sqrt(self.variance / self.m)


def _merge_moments(a, b):
    """Chan's parallel update for (count, mean(3,n), m2(3,n)) pairs."""
    na, mean_a, m2_a = a
    nb, mean_b, m2_b = b
    if na == 0:
        return b
    if nb == 0:
        return a
    n = na + nb
    delta = mean_b - mean_a
    mean = mean_a + delta * (nb / n)
    m2 = m2_a + m2_b + delta**2 * (na * nb / n)
    return (n, mean, m2)


def run_ensemble(spec: ModelSpec, mesh: Mesh2D, basis: Basis1D, tau: float,
                 T: float, sampler: QWienerSampler, M: int,
                 workers: int = 1, chunk_size: int = DEFAULT_CHUNK,
                 snapshot_times=None,
                 ops: SchemeOperators | None = None,
                 nonlinearity_time: str = "extrapolated",
                 noise_convention: str = "paper") -> EnsembleResult:
    """Estimate E[solution] over M trajectories with sample ids 0..M-1.

    The result is independent of `workers` (bitwise, because chunking and
    merge order are fixed by chunk_size alone).  Any sample divergence
    aborts the whole ensemble with the offending sample id in the message.
    """
    if M < 1:
        raise ValueError(f"sample count must be >= 1, got {M}")
    if chunk_size < 1:
        raise ValueError(f"chunk size must be >= 1, got {chunk_size}")
    if ops is None:
        ops = build_scheme(mesh, basis, spec, tau,
                           nonlinearity_time=nonlinearity_time,
                           noise_convention=noise_convention)
    workspace = None
    if sampler is not None and sampler.amplitude > 0.0:
        workspace = NoiseWorkspace(sampler, mesh, basis, projector=ops.projector)
    snapshot_times = tuple(snapshot_times or ())

    def run_chunk(ids):
        count = 0
        mean = np.zeros((3, mesh.n_global))
        m2 = np.zeros_like(mean)
        snaps = {t: np.zeros((3, mesh.n_global)) for t in snapshot_times}
        for sid in ids:
            try:
                traj = run(spec, mesh, basis, tau, T, sampler=sampler, sample_id=sid,
                           snapshot_times=snapshot_times, ops=ops,
                           noise_workspace=workspace, record_reports=False)
            except Exception as exc:
                raise RuntimeError(f"sample {sid} failed: {exc}") from exc
            x = traj.final.stacked()
            count += 1
            delta = x - mean
            mean += delta / count
            m2 += delta * (x - mean)
            for t in snapshot_times:
                snaps[t] += traj.snapshots[t].stacked()
        return (count, mean, m2), snaps

    chunks = [range(i, min(i + chunk_size, M)) for i in range(0, M, chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]

    total = (0, np.zeros((3, mesh.n_global)), np.zeros((3, mesh.n_global)))
    snap_sums = {t: np.zeros((3, mesh.n_global)) for t in snapshot_times}
    for moments, snaps in results:
        total = _merge_moments(total, moments)
        for t in snapshot_times:
            snap_sums[t] += snaps[t]

    count, mean, m2 = total
    mean_state = StateVector(mean[0].copy(), mean[1].copy(), mean[2].copy(), t=T)
    seed = sampler.seed if sampler is not None else 0
    snapshot_means = {t: s / count for t, s in snap_sums.items()}
    return EnsembleResult(m=count, mean=mean_state, m2=m2, seed=seed,
                          snapshot_means=snapshot_means)


@dataclass(frozen=True)
class ErrorReport:
    """L2 (by quadrature) and Linf (on a uniform grid) errors per field.

    The *_sum entries are the sums of the three per-field norms, matching
    the summed-over-fields error the experiments report.
    """

    l2: tuple[float, float, float]
    linf: tuple[float, float, float]
    l2_sum: float
    linf_sum: float
    grid_n: int = LINF_GRID


def _reference_values(reference, ref_mesh, ref_basis, t, xs, ys, quad_x, quad_y):
    """Per-field reference values on the Linf grid and the quadrature grid."""
    grid_vals, quad_vals = [], []
    if isinstance(reference, StateVector):
        if ref_mesh is None or ref_basis is None:
            raise ValueError("reference StateVector needs ref_mesh and ref_basis")
        for f in reference.fields:
            grid_vals.append(evaluate_grid(ref_mesh, ref_basis, f, xs, ys))
            quad_vals.append(np.stack([
                evaluate_grid(ref_mesh, ref_basis, f, qx, qy)
                for qx, qy in zip(quad_x, quad_y)]))
    else:
        for func in reference:
            grid_vals.append(func(xs[:, None], ys[None, :], t))
            quad_vals.append(np.stack([
                func(qx[:, None], qy[None, :], t)
                for qx, qy in zip(quad_x, quad_y)]))
    return grid_vals, quad_vals


def error_report(state, reference, mesh: Mesh2D, basis: Basis1D,
                 ref_mesh: Mesh2D | None = None, ref_basis: Basis1D | None = None,
                 grid_n: int = LINF_GRID) -> ErrorReport:
    """Errors of a state (or ensemble mean) against a reference.

    reference is either a triple of callables (x, y, t) evaluated at state.t,
    or a StateVector living on (ref_mesh, ref_basis).  Linf is taken on a
    uniform grid_n x grid_n grid including the boundary; L2 by element
    quadrature of the squared difference on the state's mesh.
    """
    if isinstance(state, EnsembleResult):
        state = state.mean
    if isinstance(reference, StateVector):
        if ref_mesh is None or ref_basis is None:
            raise ValueError("reference StateVector needs ref_mesh and ref_basis")
        if ref_mesh.domain != mesh.domain:
            raise ValueError(
                f"state mesh domain {mesh.domain} and reference domain "
                f"{ref_mesh.domain} differ: no common evaluation grid")

    x0, x1, y0, y1 = mesh.domain
    xs = np.linspace(x0, x1, grid_n)
    ys = np.linspace(y0, y1, grid_n)
    quad = Quadrature2D(mesh, basis)
    # per-element quadrature abscissae, one (x-nodes, y-nodes) pair per element
    quad_x, quad_y = [], []
    for e in range(mesh.n_elements):
        ey, ex = divmod(e, mesh.nex)
        quad_x.append(quad.xq[ex])
        quad_y.append(quad.yq[ey])

    ref_grid, ref_quad = _reference_values(reference, ref_mesh, ref_basis,
                                           state.t, xs, ys, quad_x, quad_y)
    linf, l2 = [], []
    for f, rg, rq in zip(state.fields, ref_grid, ref_quad):
        diff_grid = evaluate_grid(mesh, basis, f, xs, ys) - rg
        linf.append(float(np.max(np.abs(diff_grid))))
        diff_quad = values_at_quad(quad, f) - rq
        l2.append(float(np.sqrt(np.sum(diff_quad**2 * quad.W2[None, :, :]) * quad.jac)))
    return ErrorReport(l2=tuple(l2), linf=tuple(linf),
                       l2_sum=float(sum(l2)), linf_sum=float(sum(linf)),
                       grid_n=grid_n)


def error_hw(state, reference, mesh: Mesh2D, basis: Basis1D, spec: ModelSpec,
             tau: float, ref_mesh: Mesh2D | None = None,
             ref_basis: Basis1D | None = None) -> float:
    """Weighted energy norm of the error, summed over the three fields.

    sqrt( sum_f  h1 * ||e_f||_L2^2 + (tau/2) * zeta_max * ||grad e_f||_L2^2 )
    with h1 = max(1, 1 + (tau/2) max r).  The reference is an exact triple
    with spec.exact_grad available, or a StateVector on (ref_mesh, ref_basis).
    """
    if isinstance(state, EnsembleResult):
        state = state.mean
    quad = Quadrature2D(mesh, basis)
    quad_x, quad_y = [], []
    for e in range(mesh.n_elements):
        ey, ex = divmod(e, mesh.nex)
        quad_x.append(quad.xq[ex])
        quad_y.append(quad.yq[ey])

    r_max = max(float(np.max(spec.r(qx[:, None], qy[None, :])))
                for qx, qy in zip(quad_x, quad_y))
    z_max = max(float(np.max(spec.zeta(qx[:, None], qy[None, :])))
                for qx, qy in zip(quad_x, quad_y))
    h1 = max(1.0, 1.0 + 0.5 * tau * r_max)

    from_state = isinstance(reference, StateVector)
    if not from_state and getattr(spec, "exact_grad", None) is None:
        raise ValueError("energy error against an exact triple needs exact_grad")

    total = 0.0
    for idx, f in enumerate(state.fields):
        vals = values_at_quad(quad, f)
        gx, gy = grad_values_at_quad(quad, f)
        if from_state:
            rv = np.stack([evaluate_grid(ref_mesh, ref_basis, reference.fields[idx], qx, qy)
                           for qx, qy in zip(quad_x, quad_y)])
            rgx = np.stack([evaluate_grid(ref_mesh, ref_basis, reference.fields[idx],
                                          qx, qy, dx=1)
                            for qx, qy in zip(quad_x, quad_y)])
            rgy = np.stack([evaluate_grid(ref_mesh, ref_basis, reference.fields[idx],
                                          qx, qy, dy=1)
                            for qx, qy in zip(quad_x, quad_y)])
        else:
            rv = np.stack([reference[idx](qx[:, None], qy[None, :], state.t)
                           for qx, qy in zip(quad_x, quad_y)])
            gfx, gfy = spec.exact_grad[idx]
            rgx = np.stack([gfx(qx[:, None], qy[None, :], state.t)
                            for qx, qy in zip(quad_x, quad_y)])
            rgy = np.stack([gfy(qx[:, None], qy[None, :], state.t)
                            for qx, qy in zip(quad_x, quad_y)])
        l2sq = float(np.sum((vals - rv)**2 * quad.W2[None, :, :]) * quad.jac)
        h1sq = float(np.sum(((gx - rgx)**2 + (gy - rgy)**2) * quad.W2[None, :, :])
                     * quad.jac)
        total += h1 * l2sq + 0.5 * tau * z_max * h1sq
    return float(np.sqrt(total))


def convergence_order(errors, mode: str = "temporal") -> np.ndarray:
    """Observed orders from a positive error sequence.

    temporal: log2(e_i / e_{i+1}) for a tau-halving sequence.
    spatial: returns the sequence itself (spectral decay carries no fixed
    algebraic order; callers assert monotone decay).
    """
    errors = np.asarray(errors, dtype=float)
    if errors.size < 2:
        raise ValueError("need at least two error values")
    if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        raise ValueError("error values must be positive and finite")
    if mode == "temporal":
        return np.log2(errors[:-1] / errors[1:])
    if mode == "spatial":
        return errors
    raise ValueError(f"unknown mode {mode!r}")
