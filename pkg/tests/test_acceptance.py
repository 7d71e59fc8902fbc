"""Acceptance suite: one test per primary criterion, at pinned tolerances.

Each test prints a [PASS]/[FAIL] line (visible with pytest -s or in the
captured output of failing runs).  Configurations are the harness defaults:
the step-size and stability studies run on a 2x2-element mesh, the basis
order study on a single element (pure p-refinement, away from the
multi-element roundoff floor); the statistical checks use the fixed seed 34.
"""
import dataclasses
import json
import time

import numpy as np
import pytest
import sympy as sp

from stochsem.assembly import StateVector
from stochsem.basis import make_basis, mass_1d, stiffness_1d
from stochsem.cli import main
from stochsem.mesh import build_mesh
from stochsem.model import test1_spec as make_test1
from stochsem.model import test2_spec as make_test2
from stochsem.montecarlo import convergence_order, error_report, run_ensemble
from stochsem.stochastic import QWienerSampler, mode_coefficients
from stochsem.timestepper import build_scheme, energy_norm, run

from conftest import quad_gram

UNIT = (0.0, 1.0, 0.0, 1.0)
SEED = 34

TABLE1_N10 = {1 / 32: 1.2863e-3, 1 / 64: 3.3204e-4, 1 / 128: 8.3715e-5}
TABLE1_N10_LAST = 5.2520e-6      # paper's tau=1/256 entry; breaks its own
                                 # order-2 pattern, so factor-10 slack applies


def report(name: str, ok: bool, detail: str = "") -> None:
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] {name}" + (f": {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


class TestAcceptance:
    def test_basis_matrices_vs_oracle(self):
        t0 = time.perf_counter()
        worst = 0.0
        for order in range(2, 13):
            b = make_basis(order)
            dev_a = np.max(np.abs(stiffness_1d(b).to_dense() - np.eye(order - 1)))
            dev_a = max(dev_a, np.max(np.abs(stiffness_1d(b).to_dense()
                                             - quad_gram(order, deriv=True))))
            dev_b = np.max(np.abs(mass_1d(b).to_dense() - quad_gram(order)))
            worst = max(worst, dev_a, dev_b)
        wall = time.perf_counter() - t0
        report("basis matrices vs quadrature oracle",
               worst <= 1e-12 and wall < 1.0,
               f"max deviation {worst:.2e} over N=2..12, wall {wall:.2f}s")

    def test_manufactured_forcing_residual(self):
        # independent check: symbolic derivatives of the exact triple
        # substituted into the noise-free equations, minus the implemented
        # forcings, at 100 random interior space-time points
        t0 = time.perf_counter()
        spec = make_test1()
        x, y, t = sp.symbols("x y t")
        rho = sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
        exact = [sp.exp(-5 * t) * rho, sp.exp(-2 * t) * rho, sp.exp(-3 * t) * rho]
        D = sp.Rational(1, 1000)
        nl = sp.Rational(6, 10) * exact[0] * exact[1] / ((1 + exact[0]) * (exact[1] + 2))
        residuals = []
        rng = np.random.default_rng(SEED)
        xs, ys = rng.uniform(0.01, 0.99, (2, 100))
        ts = rng.uniform(0.0, 1.0, 100)
        for idx, phi in enumerate(exact):
            lhs = (sp.diff(phi, t) + sp.diff(phi, x) + sp.diff(phi, y)
                   - D * (sp.diff(phi, x, 2) + sp.diff(phi, y, 2)) + nl)
            if idx == 2:
                lhs += 2 * phi
            lhs_fn = sp.lambdify((x, y, t), lhs, "numpy")
            residuals.append(np.max(np.abs(lhs_fn(xs, ys, ts)
                                           - spec.forcing[idx](xs, ys, ts))))
        worst = max(residuals)
        wall = time.perf_counter() - t0
        report("manufactured-forcing residual",
               worst <= 1e-8 and wall < 5.0,
               f"max residual {worst:.2e} at 100 random points, wall {wall:.1f}s")

    def test_temporal_order_table1(self):
        t0 = time.perf_counter()
        spec = make_test1()
        mesh = build_mesh(UNIT, 2, 2, 10)
        basis = make_basis(10)
        taus = [1 / 32, 1 / 64, 1 / 128, 1 / 256]
        errs = []
        for tau in taus:
            traj = run(spec, mesh, basis, tau, 1.0, record_reports=False)
            errs.append(error_report(traj.final, spec.exact, mesh, basis).linf_sum)
        orders = convergence_order(errs)
        wall = time.perf_counter() - t0

        orders_ok = bool(np.all((orders >= 1.8) & (orders <= 2.1)))
        values_ok = all(ref / 3 <= errs[i] <= ref * 3
                        for i, ref in enumerate(TABLE1_N10[t] for t in taus[:3]))
        last_ok = TABLE1_N10_LAST / 10 <= errs[3] <= TABLE1_N10_LAST * 10
        print(f"  orders: {np.round(orders, 4).tolist()}  "
              f"errors: {[f'{e:.4e}' for e in errs]}")
        print(f"  note: published tau=1/256 entry {TABLE1_N10_LAST:.4e} breaks the "
              f"order-2 pattern of its own column (4x of the 1/128 row predicts "
              f"{TABLE1_N10[1/128]/4:.4e}); measured {errs[3]:.4e}, factor-10 window")
        report("temporal order (published table)",
               orders_ok and values_ok and last_ok and wall < 300.0,
               f"wall {wall:.0f}s")

    def test_spatial_spectral_decay(self):
        t0 = time.perf_counter()
        spec = make_test1()
        tau = 1e-4
        errs = []
        for order in (6, 8, 10, 12):
            mesh = build_mesh(UNIT, 1, 1, order)
            basis = make_basis(order)
            traj = run(spec, mesh, basis, tau, 1.0, record_reports=False)
            errs.append(error_report(traj.final, spec.exact, mesh, basis).linf_sum)
        wall = time.perf_counter() - t0
        monotone = all(e2 <= e1 * 1.02 for e1, e2 in zip(errs, errs[1:]))
        total_drop = errs[0] / min(errs)
        print(f"  errors vs N: {[f'{e:.4e}' for e in errs]} "
              f"(temporal floor ~{min(errs):.1e})")
        report("spatial spectral decay",
               monotone and total_drop >= 10.0 and wall < 600.0,
               f"total decay {total_drop:.0f}x, wall {wall:.0f}s")

    @pytest.mark.parametrize("tau", [0.5, 0.05])
    def test_unconditional_stability(self, tau):
        t0 = time.perf_counter()
        spec = dataclasses.replace(make_test1(), forcing=None, wp=0.0)
        mesh = build_mesh(UNIT, 2, 2, 10)
        basis = make_basis(10)
        ops = build_scheme(mesh, basis, spec, tau)
        traj = run(spec, mesh, basis, tau, 50 * tau, ops=ops)
        init = StateVector(ops.projector.project(spec.init[0]),
                           ops.projector.project(spec.init[1]),
                           ops.projector.project(spec.init[2]))
        series = np.array([energy_norm(ops, spec, init, tau)]
                          + [r.energy for r in traj.reports])
        increases = np.diff(series)
        wall = time.perf_counter() - t0
        report(f"unconditional stability (tau={tau})",
               bool(np.all(increases <= 1e-14)) and wall < 30.0,
               f"max energy change {increases.max():.2e} over 50 steps, "
               f"wall {wall:.0f}s")

    def test_noise_law(self):
        t0 = time.perf_counter()
        sampler = QWienerSampler(truncation=8, decay_exponent=2.0,
                                 amplitude=0.1, seed=SEED)
        tau, M = 0.01, 2000
        target = sampler.amplitude**2 * sampler.eigenvalues() * tau
        draws = np.stack([mode_coefficients(sampler, i, 1, tau) for i in range(M)])
        var = draws.var(axis=0, ddof=1)
        var_devs = [abs(var[j, k] / target[j, k] - 1.0)
                    for j, k in [(0, 0), (0, 1), (1, 0), (1, 1)]]
        big = np.stack([mode_coefficients(sampler, i, 1, 4 * tau) for i in range(M)])
        ratio = big.var(axis=0, ddof=1)[0, 0] / var[0, 0]
        wall = time.perf_counter() - t0
        report("noise increment law",
               max(var_devs) <= 0.05 and abs(ratio / 4.0 - 1.0) <= 0.10
               and wall < 30.0,
               f"top-4 variance dev {max(var_devs):.3f}, tau-scaling ratio "
               f"{ratio:.3f}, wall {wall:.0f}s")

    def test_monte_carlo_consistency(self):
        t0 = time.perf_counter()
        spec = make_test2("smooth").with_wp(0.0)      # no-nonlinearity setup
        mesh = build_mesh(UNIT, 2, 2, 8)
        basis = make_basis(8)
        tau, T = 0.01, 0.1
        sampler = QWienerSampler(truncation=8, decay_exponent=2.0,
                                 amplitude=0.1, seed=SEED)
        ops = build_scheme(mesh, basis, spec, tau)
        det = run(spec, mesh, basis, tau, T, ops=ops).final

        r400 = run_ensemble(spec, mesh, basis, tau, T, sampler, M=400, ops=ops)
        r400_par = run_ensemble(spec, mesh, basis, tau, T, sampler, M=400,
                                ops=ops, workers=4)
        worker_gap = np.max(np.abs(r400.mean.stacked() - r400_par.mean.stacked()))
        r1600 = run_ensemble(spec, mesh, basis, tau, T, sampler, M=1600, ops=ops)

        e400 = error_report(r400.mean, det, mesh, basis,
                            ref_mesh=mesh, ref_basis=basis).l2_sum
        e1600 = error_report(r1600.mean, det, mesh, basis,
                             ref_mesh=mesh, ref_basis=basis).l2_sum
        ratio = e400 / e1600
        wall = time.perf_counter() - t0
        report("Monte Carlo consistency",
               1.4 <= ratio <= 3.0 and worker_gap <= 1e-12 and wall < 600.0,
               f"L2 shrink ratio {ratio:.2f} (target 2.0), 1-vs-4-worker gap "
               f"{worker_gap:.1e}, wall {wall:.0f}s")

    def test_output_determinism(self, tmp_path):
        configs = {
            "det.ini": ("run", "[problem]\nkind = test1\n[mesh]\nnex = 2\nney = 2\n"
                        "order = 5\n[time]\ntau = 1/8\nt_final = 0.25\n"),
            "ens.ini": ("run", "[problem]\nkind = test2_smooth\n[mesh]\nnex = 1\n"
                        "ney = 1\norder = 8\n[time]\ntau = 0.05\nt_final = 0.1\n"
                        "[noise]\nsigma = 0.1\nseed = 34\n[montecarlo]\n"
                        "samples = 8\nworkers = 2\n"),
            "tab.ini": ("table1", "[problem]\nkind = test1\n[mesh]\nnex = 2\n"
                        "ney = 2\n[table1]\ntau_list = 1/8, 1/16\nn_list = 5\n"
                        "[time]\nt_final = 0.25\n"),
        }
        all_ok = True
        details = []
        for name, (command, text) in configs.items():
            path = tmp_path / name
            path.write_text(text)
            sums = []
            for attempt in ("a", "b"):
                out = tmp_path / f"{name}.{attempt}"
                code = main([command, "--config", str(path), "--out", str(out)])
                assert code == 0
                m = json.loads((out / "manifest.json").read_text())
                sums.append({k: v["sha256"] for k, v in m["outputs"].items()
                             if not v["volatile"]})
                volatile = [k for k, v in m["outputs"].items() if v["volatile"]]
                assert all("wallclock" in k for k in volatile)
            ok = sums[0] == sums[1]
            all_ok = all_ok and ok
            details.append(f"{command}:{'=' if ok else '!'}")
        report("output determinism", all_ok, " ".join(details))
