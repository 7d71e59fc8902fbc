"""Experiment harness: subcommands over strict config files.

    stochsem run           one deterministic or ensemble run + error report
    stochsem table1        step-size convergence table (deterministic test1)
    stochsem spatial       error vs basis order curve
    stochsem evolve        gridded snapshots of the mean u field (test2)
    stochsem spectrum-dump noise eigenvalue table

Every command writes its artifacts plus resolved_config.ini and manifest.json
into the output directory.  All CSV numbers use repr() formatting ('.'
decimal separator, scientific notation allowed), so identical configurations
produce byte-identical data files; wall-clock measurements go to separate
files marked volatile in the manifest.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
The output directory resolves as --out flag > STOCHSEM_OUT env > config.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .basis import make_basis
from .config import ConfigError, RunConfig, load_config
from .mesh import build_mesh
from .model import ModelSpec, const_field, test1_spec, test2_spec
from .montecarlo import (convergence_order, error_hw, error_report,
                         run_ensemble)
from .stochastic import QWienerSampler, spectrum_to_csv
from .timestepper import (DivergenceError, SchemeError, SolverFailure,
                          build_scheme, run)

OUT_ENV_VAR = "STOCHSEM_OUT"
DOMAIN = (0.0, 1.0, 0.0, 1.0)   # both test problems live on the unit square


# ---------------------------------------------------------------------------
# config -> objects
# ---------------------------------------------------------------------------

def make_problem(cfg: RunConfig) -> ModelSpec:
    kind = cfg.get("problem", "kind")
    pref = cfg.get("problem", "prefactor")
    if kind == "test1":
        spec = test1_spec(prefactor=pref)
    elif kind == "test2_smooth":
        spec = test2_spec("smooth", prefactor=pref)
    elif kind == "test2_delta":
        center = (cfg.get("problem", "delta_center_x"),
                  cfg.get("problem", "delta_center_y"))
        spec = test2_spec("delta", delta_center=center,
                          delta_width=cfg.get("problem", "delta_width"),
                          prefactor=pref)
    else:   # custom: constant coefficients on the unit square
        if cfg.get("problem", "init") == "zero":
            init = const_field(0.0)
        else:
            def init(x, y):
                return np.asarray(x) * (1 - np.asarray(x)) * np.asarray(y) * (1 - np.asarray(y))
        wp = cfg.get("problem", "wp")
        spec = ModelSpec(
            xi=const_field(cfg.get("problem", "xi")),
            zeta=const_field(cfg.get("problem", "zeta")),
            r=const_field(cfg.get("problem", "r")),
            wp=1.0 if wp is None else wp,
            e=(1.0, 1.0, 1.0),
            kappa=(cfg.get("problem", "kappa1"), cfg.get("problem", "kappa2")),
            nonlinearity=cfg.get("problem", "nonlinearity"),
            init=(init, init, init),
            name="custom",
        )
    wp_override = cfg.get("problem", "wp")
    if wp_override is not None and kind != "custom":
        spec = spec.with_wp(wp_override)
    return spec


def make_discretization(cfg: RunConfig, order: int | None = None):
    order = order if order is not None else cfg.get("mesh", "order")
    mesh = build_mesh(DOMAIN, cfg.get("mesh", "nex"), cfg.get("mesh", "ney"), order)
    return mesh, make_basis(order)


def make_sampler(cfg: RunConfig) -> QWienerSampler:
    return QWienerSampler(
        truncation=cfg.get("noise", "truncation"),
        decay_exponent=cfg.get("noise", "decay_exponent"),
        amplitude=cfg.get("noise", "sigma"),
        seed=cfg.get("noise", "seed"),
        shared=cfg.get("noise", "shared_paths"),
    )


def scheme_kwargs(cfg: RunConfig) -> dict:
    return {
        "nonlinearity_time": cfg.get("scheme", "nonlinearity_time"),
        "noise_convention": cfg.get("noise", "sign_convention"),
    }


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class OutputWriter:
    """Collects emitted files and their checksums for the manifest."""

    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: dict[str, dict] = {}

    def write_csv(self, name: str, header, rows, volatile: bool = False) -> Path:
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        self.register(name, volatile=volatile)
        return path

    def write_text(self, name: str, text: str, volatile: bool = False) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.register(name, volatile=volatile)
        return path

    def register(self, name: str, volatile: bool = False) -> None:
        digest = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        self.outputs[name] = {"sha256": digest, "volatile": volatile}

    def write_manifest(self, command: str, cfg: RunConfig, wall_clock: float) -> Path:
        # the runtime output directory is invocation metadata, recorded beside
        # the config so identical configs give identical resolved artifacts
        manifest = {
            "command": command,
            "code_version": __version__,
            "wall_clock_seconds": wall_clock,
            "output_directory": str(self.dir),
            "config": cfg.as_sections(),
            "outputs": self.outputs,
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def grid_rows(mesh, basis, fields, grid_n: int, names):
    """Rows (x, y, field values...) over a uniform grid including boundary."""
    from .assembly import evaluate_grid

    x0, x1, y0, y1 = mesh.domain
    xs = np.linspace(x0, x1, grid_n)
    ys = np.linspace(y0, y1, grid_n)
    grids = [evaluate_grid(mesh, basis, f, xs, ys) for f in fields]
    rows = []
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            rows.append([float(x), float(y)] + [float(g[i, j]) for g in grids])
    return ["x", "y", *names], rows


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(cfg: RunConfig, out: OutputWriter) -> None:
    spec = make_problem(cfg)
    mesh, basis = make_discretization(cfg)
    tau = cfg.get("time", "tau")
    T = cfg.get("time", "t_final")
    sigma = cfg.get("noise", "sigma")
    snap_times = cfg.get("time", "snapshot_times")
    kwargs = scheme_kwargs(cfg)

    if sigma > 0:
        sampler = make_sampler(cfg)
        result = run_ensemble(spec, mesh, basis, tau, T, sampler,
                              M=cfg.get("montecarlo", "samples"),
                              workers=cfg.get("montecarlo", "workers"),
                              chunk_size=cfg.get("montecarlo", "chunk_size"),
                              snapshot_times=snap_times, **kwargs)
        final = result.mean
        stderr = result.stderr
        rows = [[i, final.u[i], final.v[i], final.w[i],
                 stderr[0, i], stderr[1, i], stderr[2, i]]
                for i in range(final.n)]
        out.write_csv("ensemble_summary.csv",
                      ["dof", "mean_u", "mean_v", "mean_w",
                       "stderr_u", "stderr_v", "stderr_w"], rows)
        snapshots = {t: result.snapshot_means[t] for t in snap_times}
    else:
        traj = run(spec, mesh, basis, tau, T, snapshot_times=snap_times, **kwargs)
        final = traj.final
        snapshots = {t: traj.snapshots[t].stacked() for t in snap_times}

    grid_n = cfg.get("output", "grid_n")
    header, rows = grid_rows(mesh, basis, final.fields, grid_n, ["u", "v", "w"])
    out.write_csv("final_state.csv", header, rows)
    for i, t in enumerate(snap_times):
        s = snapshots[t]
        header, rows = grid_rows(mesh, basis, (s[0], s[1], s[2]), grid_n,
                                 ["u", "v", "w"])
        out.write_csv(f"snapshot_{i:03d}.csv",
                      ["t", *header],
                      [[float(t), *r] for r in rows])

    if spec.exact is not None:
        rep = error_report(final, spec.exact, mesh, basis,
                           grid_n=cfg.get("output", "grid_n"))
        rows = [["u", rep.l2[0], rep.linf[0]],
                ["v", rep.l2[1], rep.linf[1]],
                ["w", rep.l2[2], rep.linf[2]],
                ["sum", rep.l2_sum, rep.linf_sum]]
        out.write_csv("error_report.csv", ["field", "l2", "linf"], rows)


def cmd_table1(cfg: RunConfig, out: OutputWriter) -> None:
    if cfg.get("problem", "kind") != "test1":
        raise ConfigError("table1 requires [problem] kind = test1 (it measures "
                          "errors against the manufactured solution)")
    spec = make_problem(cfg)
    taus = cfg.get("table1", "tau_list")
    orders_n = cfg.get("table1", "n_list")
    T = cfg.get("time", "t_final")
    kwargs = scheme_kwargs(cfg)

    for N in orders_n:
        mesh, basis = make_discretization(cfg, order=N)
        errs = []
        walls = []
        reports = []
        for tau in taus:
            t0 = time.perf_counter()
            traj = run(spec, mesh, basis, tau, T, record_reports=False, **kwargs)
            walls.append(time.perf_counter() - t0)
            rep = error_report(traj.final, spec.exact, mesh, basis)
            reports.append(rep)
            errs.append(rep.linf_sum)
        orders = convergence_order(errs) if len(errs) > 1 else []
        rows = []
        for i, tau in enumerate(taus):
            rep = reports[i]
            order = "" if i == 0 else repr(float(orders[i - 1]))
            rows.append([tau, rep.linf[0], rep.linf[1], rep.linf[2],
                         rep.linf_sum, order])
        out.write_csv(f"table1_N{N}.csv",
                      ["tau", "linf_u", "linf_v", "linf_w", "linf_sum", "order"],
                      rows)
        out.write_csv(f"table1_N{N}_wallclock.csv", ["tau", "seconds"],
                      [[tau, w] for tau, w in zip(taus, walls)], volatile=True)


def cmd_spatial(cfg: RunConfig, out: OutputWriter) -> None:
    spec = make_problem(cfg)
    taus = cfg.get("spatial", "tau")
    n_list = cfg.get("spatial", "n_list")
    if sorted(n_list) != list(n_list):
        raise ConfigError("[spatial] n_list must be ascending")
    T = cfg.get("time", "t_final")
    sigma = cfg.get("noise", "sigma")
    M = cfg.get("montecarlo", "samples")
    workers = cfg.get("montecarlo", "workers")
    kwargs = scheme_kwargs(cfg)
    tau = taus

    def mean_state(mesh, basis):
        if sigma > 0:
            sampler = make_sampler(cfg)   # same seed at every order: common random numbers
            res = run_ensemble(spec, mesh, basis, tau, T, sampler, M=M,
                               workers=workers,
                               chunk_size=cfg.get("montecarlo", "chunk_size"),
                               **kwargs)
            return res.mean
        return run(spec, mesh, basis, tau, T, record_reports=False, **kwargs).final

    use_exact = spec.exact is not None and sigma == 0
    if not use_exact:
        ref_order = cfg.get("reference", "order")
        if not cfg.get("reference", "common_random_numbers") and sigma > 0:
            raise ConfigError("spatial curves with noise require "
                              "[reference] common_random_numbers = true")
        ref_mesh, ref_basis = make_discretization(cfg, order=ref_order)
        ref_state = mean_state(ref_mesh, ref_basis)

    rows = []
    for N in n_list:
        mesh, basis = make_discretization(cfg, order=N)
        state = mean_state(mesh, basis)
        if use_exact:
            rep = error_report(state, spec.exact, mesh, basis)
            hw = error_hw(state, spec.exact, mesh, basis, spec, tau)
            ref_name = "exact"
        else:
            rep = error_report(state, ref_state, mesh, basis,
                               ref_mesh=ref_mesh, ref_basis=ref_basis)
            hw = error_hw(state, ref_state, mesh, basis, spec, tau,
                          ref_mesh=ref_mesh, ref_basis=ref_basis)
            ref_name = f"order{cfg.get('reference', 'order')}"
        rows.append([N, tau, rep.l2_sum, rep.linf_sum, hw, ref_name])
    out.write_csv("spatial.csv",
                  ["n", "tau", "l2_sum", "linf_sum", "hw_sum", "reference"],
                  rows)


def cmd_evolve(cfg: RunConfig, out: OutputWriter) -> None:
    kind = cfg.get("problem", "kind")
    if not kind.startswith("test2"):
        raise ConfigError("evolve requires a test2 problem kind")
    spec = make_problem(cfg)
    mesh, basis = make_discretization(cfg)
    tau = cfg.get("time", "tau")
    T = cfg.get("time", "t_final")
    times = cfg.get("evolve", "times")
    grid_n = cfg.get("evolve", "grid_n")
    sigma = cfg.get("noise", "sigma")
    kwargs = scheme_kwargs(cfg)
    if any(t > T for t in times):
        raise ConfigError("[evolve] times must lie within [0, t_final]")

    if sigma > 0:
        sampler = make_sampler(cfg)
        res = run_ensemble(spec, mesh, basis, tau, T, sampler,
                           M=cfg.get("montecarlo", "samples"),
                           workers=cfg.get("montecarlo", "workers"),
                           chunk_size=cfg.get("montecarlo", "chunk_size"),
                           snapshot_times=times, **kwargs)
        u_fields = {t: res.snapshot_means[t][0] for t in times}
    else:
        traj = run(spec, mesh, basis, tau, T, snapshot_times=times, **kwargs)
        u_fields = {t: traj.snapshots[t].u for t in times}

    index_rows = []
    for i, t in enumerate(times):
        name = f"evolve_{i:03d}.csv"
        header, rows = grid_rows(mesh, basis, (u_fields[t],), grid_n, ["u"])
        out.write_csv(name, ["t", *header], [[float(t), *r] for r in rows])
        index_rows.append([i, t, name])
    out.write_csv("evolve_times.csv", ["index", "t", "file"], index_rows)


def cmd_spectrum_dump(cfg: RunConfig, out: OutputWriter) -> None:
    sampler = make_sampler(cfg)
    spectrum_to_csv(sampler, out.dir / "spectrum.csv")
    out.register("spectrum.csv")


COMMANDS = {
    "run": cmd_run,
    "table1": cmd_table1,
    "spatial": cmd_spatial,
    "evolve": cmd_evolve,
    "spectrum-dump": cmd_spectrum_dump,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochsem",
        description="Spectral element experiments for the stochastic "
                    "advection-reaction-diffusion system")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="configuration file path")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--workers", type=int, default=None,
                       help="override [montecarlo] workers")
        p.add_argument("--seed", type=int, default=None,
                       help="override [noise] seed")
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg.set("montecarlo", "workers", args.workers)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg.set("noise", "seed", args.seed)
        out_dir = args.out or os.environ.get(OUT_ENV_VAR) or cfg.get("output", "directory")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = OutputWriter(Path(out_dir))
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverFailure, DivergenceError, SchemeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out.write_text("resolved_config.ini", cfg.to_ini())
    out.write_manifest(args.command, cfg, wall_clock=time.perf_counter() - t0)
    print(f"{args.command}: wrote {len(out.outputs)} artifacts to {out.dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
