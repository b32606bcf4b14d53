"""Command-line front end.

Exit codes are a stable contract for scripting:
  0  success
  2  infeasible synthesis or a negative diagnostic (failed PE check,
     failed certification, Monte-Carlo violations)
  3  input error (missing files, malformed JSON, bad flags)
  4  solver or numerical failure
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys as _sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import data as data_mod
from . import ident as ident_mod
from . import lmi
from . import report as report_mod
from . import synth as synth_mod
from . import verify as verify_mod
from .model import (
    DisturbanceModel,
    InputSet,
    SafetySet,
    SystemSpec,
    load_system_spec,
    pendulum_spec,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_DIAGNOSTIC = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4

# Shipped reproduction configuration: seeds and excitation for the benchmark
# study.  The direct stage uses the square+dither excitation; the indirect
# stage deliberately uses weak uniform inputs so the biased disturbance
# corrupts the fit.
REPRO = {
    "collect_seed": 11,
    "collect_steps": 107,
    "square_amplitude": 5.0,
    "square_period": 24,
    "square_dither": 0.5,
    "ident_seed": 5,
    "ident_steps": 650,
    "ident_amplitude": 0.05,
    "trace_max": 5000,
    "trace_step": 10,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class Manifest:
    command: str
    argv: list[str]
    seed: int | None
    version: str = __version__
    tolerances: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def record_input(self, path) -> None:
        self.inputs[str(path)] = _sha256_file(path)

    def record_output(self, path) -> None:
        self.outputs[str(path)] = _sha256_file(path)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2, default=str))


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _load_spec(path) -> SystemSpec:
    try:
        return load_system_spec(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, f"cannot open {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INPUT, f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
    except (KeyError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}")


def _resolve_spec(args) -> SystemSpec:
    if getattr(args, "preset", None):
        if args.preset != "pendulum":
            raise CliError(EXIT_INPUT, f"unknown preset {args.preset!r}")
        return pendulum_spec()
    if getattr(args, "system", None):
        return _load_spec(args.system)
    raise CliError(EXIT_INPUT, "need --system or --preset")


def _load_sets(path) -> tuple[SafetySet, InputSet]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
        return SafetySet(a_rows=np.array(doc["safety_a"])), InputSet(
            b_rows=np.array(doc["input_b"])
        )
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, f"cannot open {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INPUT, f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
    except (KeyError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}")


def _parse_dims(raw: str) -> tuple[int, int]:
    try:
        i, j = (int(v) for v in raw.split(","))
    except ValueError:
        raise CliError(EXIT_INPUT, f"--dims expects 'i,j' (1-based), got {raw!r}")
    if i < 1 or j < 1 or i == j:
        raise CliError(EXIT_INPUT, f"--dims must be two distinct 1-based indices, got {raw!r}")
    return i - 1, j - 1


def _input_sampler_for(spec: SystemSpec, policy: str, amplitude: float | None):
    if policy == "square":
        return data_mod.square_dither_sampler(
            REPRO["square_amplitude"], REPRO["square_period"], REPRO["square_dither"]
        )
    if policy == "uniform":
        if amplitude is None:
            # bounding box of the input polytope along each axis
            caps = []
            for k in range(spec.inputs.m):
                col = np.abs(spec.inputs.b_rows[:, k])
                col = col[col > 0]
                caps.append(1.0 / col.max() if col.size else 1.0)
            amplitude = float(min(caps))
        return data_mod.uniform_input_sampler(amplitude)
    raise CliError(EXIT_INPUT, f"unknown input policy {policy!r}")


# ---------------------------------------------------------------- collect --
def cmd_collect(args) -> int:
    spec = _resolve_spec(args)
    manifest = Manifest("collect", _sys.argv[1:], seed=args.seed)
    if args.system:
        manifest.record_input(args.system)
    dm = spec.disturbance if args.seed is None else DisturbanceModel(
        gamma=spec.disturbance.gamma, density=spec.disturbance.density, seed=args.seed
    )
    rng = dm.rng()
    sampler = _input_sampler_for(spec, args.policy, args.amplitude)
    t0 = time.perf_counter()
    x0 = np.zeros(spec.system.n)
    diagnostic_fail = False
    if args.extend_until_pe:
        try:
            ds, pe = data_mod.extend_until_pe(
                spec.system, x0, dm, sampler,
                n_start=args.steps, n_max=args.max_steps, rng=rng,
            )
        except data_mod.InsufficientExcitationError as exc:
            ds, pe = exc.dataset, exc.report
            diagnostic_fail = True
    else:
        inputs = np.column_stack(
            [np.asarray(sampler(rng, k, spec.system.m)).reshape(-1) for k in range(args.steps)]
        )
        ds = data_mod.collect(spec.system, x0, inputs, dm, rng=rng)
        pe = data_mod.check_pe(ds)
        diagnostic_fail = not pe.pe_satisfied
    manifest.timings["collect_s"] = time.perf_counter() - t0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_mod.write_dataset_csv(ds, out)
    pe_path = out.with_suffix(out.suffix + ".pe.json")
    pe_path.write_text(pe.to_json())
    manifest.record_output(out)
    manifest.record_output(pe_path)
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(pe.to_json())
    return EXIT_DIAGNOSTIC if diagnostic_fail else EXIT_OK


# ------------------------------------------------------------------ synth --
def cmd_synth(args) -> int:
    manifest = Manifest("synth", _sys.argv[1:], seed=args.seed)
    solver_opts = lmi.SolverOptions()
    cfg = synth_mod.SynthConfig(
        kappa_init=args.kappa_init,
        e=args.tol,
        i_max=args.max_iter,
        search_mode=args.search,
        eps_floor=args.eps_floor,
        solver=solver_opts,
    )
    manifest.tolerances = {
        "feas_tol": solver_opts.feas_tol,
        "opt_tol": solver_opts.opt_tol,
        "bisection_e": cfg.e,
    }

    if args.mode == "model":
        if not (args.system or args.preset):
            raise CliError(EXIT_INPUT, "--mode model needs --system or --preset")
        spec = _resolve_spec(args)
        S, U = spec.safety, spec.inputs
        if args.sets:
            S, U = _load_sets(args.sets)
        gamma = spec.disturbance.gamma if args.gamma is None else args.gamma
        sys_ = spec.system

        def assembler(kap):
            return synth_mod.assemble_opm(sys_, S, U, gamma, kap)

        provenance = {"seed": args.seed}
    else:
        if not args.dataset:
            raise CliError(EXIT_INPUT, "--mode data needs --dataset")
        if not args.sets and not args.preset:
            raise CliError(EXIT_INPUT, "--mode data needs --sets (or --preset for the shipped sets)")
        try:
            ds = data_mod.read_dataset_csv(args.dataset)
        except FileNotFoundError as exc:
            raise CliError(EXIT_INPUT, f"cannot open {args.dataset}: {exc}")
        except ValueError as exc:
            raise CliError(EXIT_INPUT, str(exc))
        manifest.record_input(args.dataset)
        if args.sets:
            S, U = _load_sets(args.sets)
        else:
            spec = pendulum_spec()
            S, U = spec.safety, spec.inputs
        if args.gamma is None:
            if args.preset:
                gamma = pendulum_spec().disturbance.gamma
            else:
                raise CliError(EXIT_INPUT, "--mode data needs --gamma")
        else:
            gamma = args.gamma

        def assembler(kap):
            return synth_mod.assemble_opd(ds, S, U, gamma, kap, eps_floor=args.eps_floor)

        provenance = {"seed": args.seed}

    t0 = time.perf_counter()
    try:
        result = synth_mod.kappa_search(assembler, cfg, mode=args.mode, gamma=gamma,
                                        extra_provenance=provenance)
    except synth_mod.KappaDomainError as exc:
        raise CliError(EXIT_INPUT, str(exc))
    manifest.timings["search_s"] = time.perf_counter() - t0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trace_path = out.with_suffix(out.suffix + ".trace.csv")
    trace_path.write_text(result.trace_csv())
    manifest.record_output(trace_path)
    statuses = {p.status for p in result.trace}
    if result.certificate is None:
        manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
        print(f"no feasible contraction level found in {len(result.trace)} solves", file=_sys.stderr)
        return EXIT_DIAGNOSTIC if lmi.INFEASIBLE in statuses else EXIT_NUMERICAL
    out.write_text(result.certificate.to_json())
    manifest.record_output(out)
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"feasible at kappa={result.best_kappa:.6f} "
          f"(log det Q = {_logdet(result.certificate.Q):.6f}), "
          f"{len(result.trace)} solves")
    return EXIT_OK


def _logdet(Q) -> float:
    sign, val = np.linalg.slogdet(Q)
    return val if sign > 0 else float("-inf")


# ---------------------------------------------------------------- certify --
def cmd_certify(args) -> int:
    spec = _resolve_spec(args)
    cert = _load_cert(args.cert)
    report = verify_mod.certify_rsi(spec.system, spec.safety, spec.inputs, cert,
                                    tol=args.tol)
    print(report.to_json())
    return EXIT_OK if report.passed else EXIT_DIAGNOSTIC


def _load_cert(path) -> synth_mod.RsiCertificate:
    try:
        return synth_mod.RsiCertificate.from_json(Path(path))
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, f"cannot open {path}: {exc}")
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}")


# -------------------------------------------------------------- mc-verify --
def cmd_mc_verify(args) -> int:
    spec = _resolve_spec(args)
    cert = _load_cert(args.cert)
    seed = args.seed if args.seed is not None else spec.disturbance.seed
    rng = np.random.default_rng(seed)
    mc = verify_mod.monte_carlo_invariance(
        spec.system, cert, spec.safety, spec.inputs,
        n_traj=args.traj, horizon=args.horizon,
        dm=spec.disturbance, rng=rng,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for i, traj in enumerate(mc.trajectories):
        write_trajectory_csv(traj, outdir / f"traj_{i:03d}.csv")
    summary = mc.summary()
    summary["seed"] = seed
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return EXIT_OK if mc.clean else EXIT_DIAGNOSTIC


# ---------------------------------------------------------------- project --
def cmd_project(args) -> int:
    cert = _load_cert(args.cert)
    dims = _parse_dims(args.dims)
    try:
        Q2 = verify_mod.project_ellipsoid(cert.Q, dims)
    except (IndexError, ValueError) as exc:
        raise CliError(EXIT_INPUT, str(exc))
    pts = verify_mod.ellipse_boundary_points(Q2, n_points=args.points)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["y1,y2"] + [f"{float(p)!r},{float(q)!r}" for p, q in pts]
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(pts)} boundary points to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ ident --
def cmd_ident(args) -> int:
    try:
        ds = data_mod.read_dataset_csv(args.dataset)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, f"cannot open {args.dataset}: {exc}")
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc))
    fit = ident_mod.least_squares_fit(ds)
    if args.out:
        Path(args.out).write_text(fit.to_json())
    print(fit.to_json())
    if args.trace_entry:
        i, j = _parse_dims(args.trace_entry)
        if args.grid:
            try:
                start, stop, stride = (int(v) for v in args.grid.split(":"))
            except ValueError:
                raise CliError(EXIT_INPUT, f"--grid expects start:stop:step, got {args.grid!r}")
        else:
            start, stop, stride = 10, ds.N, max(ds.N // 100, 1)
        grid = [N for N in range(start, min(stop, ds.N) + 1, stride)]
        values = []
        import warnings as _warnings
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore")
            for N in grid:
                prefix = data_mod.Dataset(X0=ds.X0[:, :N], X1=ds.X1[:, :N], U0=ds.U0[:, :N])
                values.append(ident_mod.least_squares_fit(prefix).A_hat[i, j])
        trace_path = Path(args.trace_out or "trace.csv")
        trace_path.write_text(ident_mod.trace_csv(grid, np.array(values)))
        print(f"wrote trace of A_hat[{i + 1},{j + 1}] over {len(grid)} prefixes to {trace_path}")
    return EXIT_OK


# --------------------------------------------------------- repro-pendulum --
def cmd_repro(args) -> int:
    outdir = Path(args.out)
    figdir = outdir / "figures"
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("repro-pendulum", _sys.argv[1:], seed=args.seed)
    spec = pendulum_spec(seed=args.seed if args.seed is not None else REPRO["collect_seed"])
    sys_, S, U, dm = spec.system, spec.safety, spec.inputs, spec.disturbance
    gamma = dm.gamma
    t_start = time.perf_counter()
    lines = ["# Inverted pendulum safety study", ""]
    lines.append(f"gamma = {gamma:g}, disturbance density = {dm.density}, "
                 f"seed = {dm.seed}, tool version {__version__}")
    lines.append("")

    def stage(name):
        print(f"[{time.perf_counter() - t_start:6.1f}s] {name}")

    # -- stage 1: indirect baseline -------------------------------------
    stage("indirect baseline: weak excitation, biased disturbance")
    ident_dm = DisturbanceModel(gamma=gamma, density=dm.density, seed=REPRO["ident_seed"])
    rng_id = ident_dm.rng()
    n_id = REPRO["ident_steps"]
    inputs_id = rng_id.uniform(-REPRO["ident_amplitude"], REPRO["ident_amplitude"],
                               size=(1, n_id))
    ds_id = data_mod.collect(sys_, np.zeros(4), inputs_id, ident_dm, rng=rng_id)
    cfg_small = synth_mod.SynthConfig(kappa_init=0.98, e=1e-2, i_max=6)
    fit, cert_i, honesty = ident_mod.indirect_pipeline(ds_id, S, U, gamma, cfg_small,
                                                       truth=sys_)
    lines.append("## Indirect baseline (identify, then design)")
    lines.append("")
    lines.append(f"- least-squares fit on N = {n_id} weakly excited samples")
    lines.append(f"- fitted A[3,3] = {fit.A_hat[2, 2]:.4f} against the true {sys_.A[2, 2]:.4f}")
    lines.append(f"- estimation error |A - A_hat| = {honesty['delta_A']:.4f}, "
                 f"|B - B_hat| = {honesty['delta_B']:.6f}")
    if cert_i is not None:
        mc_i = verify_mod.monte_carlo_invariance(
            sys_, cert_i, S, U, n_traj=args.traj, horizon=70,
            dm=dm, rng=np.random.default_rng(1700),
        )
        lines.append(f"- controller synthesized for the estimate, then run on the true plant: "
                     f"{mc_i.safety_exits}/{args.traj} trajectories left the safety set "
                     f"(horizon 70)")
        fig1 = report_mod.plot_projection(
            figdir / "indirect_x1x3.svg", (0, 2),
            ellipses=[(verify_mod.project_ellipsoid(cert_i.Q, (0, 2)),
                       "ellipsoid certified for the estimate")],
            trajectories=mc_i.trajectories,
            bounds=(1.0, np.pi / 12),
            labels=("cart position x1", "pendulum angle x3"),
        )
        lines.append(f"- ![indirect closed loop]({fig1.relative_to(outdir)})")
        indirect_violations = mc_i.safety_exits
    else:
        lines.append("- synthesis on the estimate was infeasible; no controller to run")
        indirect_violations = None
    lines.append("")

    # identification trace
    stage("identification trace over growing data")
    grid = list(range(10, REPRO["trace_max"] + 1, REPRO["trace_step"]))
    trace = ident_mod.convergence_trace(
        sys_, DisturbanceModel(gamma=gamma, density="orthant", seed=REPRO["ident_seed"]),
        data_mod.uniform_input_sampler(REPRO["ident_amplitude"]),
        entry=(2, 2), n_grid=grid,
    )
    trace_path = outdir / "ident_trace.csv"
    trace_path.write_text(ident_mod.trace_csv(grid, trace))
    fig2 = report_mod.plot_trace(figdir / "ident_trace.svg", grid, trace,
                                 reference=sys_.A[2, 2], ylabel="fitted A[3,3]")
    dev = np.abs(trace - sys_.A[2, 2])
    lines.append("## Why identification cannot be trusted here")
    lines.append("")
    lines.append(f"- fitted A[3,3] over N = {grid[0]}..{grid[-1]}: "
                 f"deviation from truth ranges {dev.min():.2e} to {dev.max():.2e} "
                 f"and does not settle")
    lines.append(f"- ![identification trace]({fig2.relative_to(outdir)})")
    lines.append("")

    # -- stage 2: PE collection ------------------------------------------
    stage("excited data collection")
    rng_c = dm.rng()
    sampler = data_mod.square_dither_sampler(
        REPRO["square_amplitude"], REPRO["square_period"], REPRO["square_dither"]
    )
    inputs_c = np.column_stack(
        [np.asarray(sampler(rng_c, k, 1)).reshape(-1) for k in range(REPRO["collect_steps"])]
    )
    ds = data_mod.collect(sys_, np.zeros(4), inputs_c, dm, rng=rng_c)
    pe = data_mod.check_pe(ds)
    data_mod.write_dataset_csv(ds, outdir / "dataset.csv")
    (outdir / "pe_report.json").write_text(pe.to_json())
    lines.append("## Data collection and excitation check")
    lines.append("")
    lines.append(f"- single trajectory, N = {ds.N}, square wave with dither, "
                 f"states stay within {np.abs(ds.X0).max():.1f}")
    lines.append(f"- rank([X0; U0]) = {pe.rank_xu} of {pe.required_xu} required; "
                 f"depth-5 input Hankel rank = {pe.hankel_rank} of {pe.required_hankel}")
    lines.append("")
    if not pe.pe_satisfied:
        lines.append("**excitation check failed; aborting**")
        (outdir / "report.md").write_text("\n".join(lines))
        raise CliError(EXIT_DIAGNOSTIC, "collected data is not persistently exciting")

    # -- stage 3: direct synthesis ----------------------------------------
    stage("direct data-driven synthesis (kappa search)")
    cfg = synth_mod.SynthConfig(kappa_init=0.95, e=1e-3, i_max=args.max_iter,
                                search_mode="max-volume")

    def assembler_d(kap):
        return synth_mod.assemble_opd(ds, S, U, gamma, kap)

    res_d = synth_mod.kappa_search(assembler_d, cfg, mode="data", gamma=gamma,
                                   extra_provenance={"seed": dm.seed})
    (outdir / "synth_trace.csv").write_text(res_d.trace_csv())
    if res_d.certificate is None:
        lines.append("**direct synthesis infeasible; aborting**")
        (outdir / "report.md").write_text("\n".join(lines))
        raise CliError(EXIT_DIAGNOSTIC, "no feasible contraction level for the dataset")
    cert_d = res_d.certificate
    (outdir / "certificate_data.json").write_text(cert_d.to_json())
    lines.append("## Direct data-driven synthesis")
    lines.append("")
    lines.append(f"- feasible at kappa = {res_d.best_kappa:.4f} "
                 f"({len(res_d.trace)} solves in the search)")
    lines.append(f"- gain K = {np.round(cert_d.K.ravel(), 4).tolist()}")
    lines.append(f"- log det Q = {_logdet(cert_d.Q):.4f}")
    lines.append("")

    # model-based comparison set
    stage("model-based comparison synthesis")
    def assembler_m(kap):
        return synth_mod.assemble_opm(sys_, S, U, gamma, kap)

    res_m = synth_mod.kappa_search(assembler_m, cfg, mode="model", gamma=gamma)
    cert_m = res_m.certificate
    if cert_m is not None:
        (outdir / "certificate_model.json").write_text(cert_m.to_json())

    # -- stage 4: certification against the truth -------------------------
    stage("analytic certification against the true plant")
    cert_report = verify_mod.certify_rsi(sys_, S, U, cert_d)
    (outdir / "certify_report.json").write_text(cert_report.to_json())
    lines.append("## Certification against the true dynamics")
    lines.append("")
    lines.append(f"- contraction eigenvalue {cert_report.cond1_value:.6f} <= "
                 f"kappa = {cert_report.kappa:.6f}")
    lines.append(f"- smallest eigenvalue of Q = {cert_report.cond2_value:.3e} >= "
                 f"floor c = {cert_report.c:.3e}")
    lines.append(f"- worst safety margin {max(cert_report.safety_margins):.6f}, "
                 f"worst input margin {max(cert_report.input_margins):.6f} (both <= 1)")
    lines.append(f"- verdict: {'PASS' if cert_report.passed else 'FAIL'}")
    lines.append("")

    # -- stage 5: Monte-Carlo --------------------------------------------
    stage("closed-loop Monte-Carlo")
    mc = verify_mod.monte_carlo_invariance(
        sys_, cert_d, S, U, n_traj=args.traj, horizon=args.horizon,
        dm=dm, rng=np.random.default_rng(2024),
    )
    runs = outdir / "runs"
    runs.mkdir(exist_ok=True)
    for i, traj in enumerate(mc.trajectories):
        write_trajectory_csv(traj, runs / f"traj_{i:03d}.csv")
    (outdir / "mc_summary.json").write_text(json.dumps(mc.summary(), indent=2))
    lines.append("## Monte-Carlo closed loop")
    lines.append("")
    lines.append(f"- {mc.n_traj} uniform starts in the ellipsoid, horizon {mc.horizon}")
    lines.append(f"- ellipsoid exits: {mc.ellipsoid_exits}, safety exits: {mc.safety_exits}, "
                 f"input violations: {mc.input_violations}")
    lines.append("")

    # -- stage 6: projections and inputs ----------------------------------
    stage("figures")
    starts = np.vstack([t.states[0] for t in mc.trajectories])
    for dims, tag in (((0, 1), "x1x2"), ((2, 3), "x3x4")):
        ellipses = [(verify_mod.project_ellipsoid(cert_d.Q, dims), "data-driven invariant set")]
        if cert_m is not None:
            ellipses.append((verify_mod.project_ellipsoid(cert_m.Q, dims),
                             "model-based invariant set"))
        figp = report_mod.plot_projection(
            figdir / f"projection_{tag}.svg", dims,
            ellipses=ellipses, trajectories=mc.trajectories, starts=starts,
            labels=(f"x{dims[0] + 1}", f"x{dims[1] + 1}"),
        )
        pts = verify_mod.ellipse_boundary_points(verify_mod.project_ellipsoid(cert_d.Q, dims))
        csvp = outdir / f"ellipse_{tag}.csv"
        csvp.write_text("y1,y2\n" + "\n".join(f"{float(p)!r},{float(q)!r}" for p, q in pts) + "\n")
        lines.append(f"![projection {tag}]({figp.relative_to(outdir)})")
    fig_u = report_mod.plot_inputs(figdir / "inputs.svg", mc.trajectories, bound=5.0)
    lines.append(f"![input sequences]({fig_u.relative_to(outdir)})")
    inputs_csv = outdir / "inputs.csv"
    with open(inputs_csv, "w") as fh:
        fh.write("traj,k,u\n")
        for i, traj in enumerate(mc.trajectories):
            for k in range(traj.horizon):
                fh.write(f"{i},{k},{float(traj.inputs[k, 0])!r}\n")
    lines.append("")

    # -- summary -----------------------------------------------------------
    ok = cert_report.passed and mc.clean
    lines.append("## Outcome")
    lines.append("")
    if indirect_violations is None:
        lines.append("- indirect route: synthesis already failed on the estimate")
    else:
        lines.append(f"- indirect route: {indirect_violations}/{args.traj} unsafe trajectories")
    lines.append(f"- direct route: certified invariant set, "
                 f"{mc.ellipsoid_exits + mc.safety_exits + mc.input_violations} violations")
    total = time.perf_counter() - t_start
    lines.append(f"- total wall time {total:.1f} s")
    (outdir / "report.md").write_text("\n".join(lines) + "\n")
    for p in sorted(outdir.rglob("*")):
        if p.is_file():
            manifest.record_output(p)
    manifest.timings["total_s"] = total
    manifest.write(outdir / "manifest.json")
    stage("done")
    return EXIT_OK if ok else EXIT_DIAGNOSTIC


# ------------------------------------------------------------------- main --
def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rsi",
        description="Synthesize and check robust safety invariant ellipsoids "
                    "for linear systems, from a model or directly from data.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_system_args(p, preset_ok=True):
        p.add_argument("--system", help="system spec JSON")
        if preset_ok:
            p.add_argument("--preset", choices=["pendulum"], help="shipped benchmark")
        p.add_argument("--seed", type=int, default=None, help="override the spec seed")

    p = sub.add_parser("collect", help="run the plant and write a dataset CSV")
    add_system_args(p)
    p.add_argument("--steps", type=int, required=True, help="trajectory length N")
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.add_argument("--extend-until-pe", action="store_true",
                   help="grow the trajectory until the rank condition holds")
    p.add_argument("--max-steps", type=int, default=500,
                   help="ceiling for --extend-until-pe")
    p.add_argument("--policy", choices=["square", "uniform"], default="square",
                   help="input excitation (square wave with dither, or iid uniform)")
    p.add_argument("--amplitude", type=float, default=None,
                   help="amplitude for --policy uniform")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("synth", help="synthesize an invariant ellipsoid and gain")
    p.add_argument("--mode", choices=["model", "data"], required=True)
    add_system_args(p)
    p.add_argument("--dataset", help="dataset CSV (data mode)")
    p.add_argument("--sets", help="JSON with safety_a and input_b rows")
    p.add_argument("--gamma", type=float, default=None, help="disturbance bound")
    p.add_argument("--kappa-init", type=float, default=0.95, dest="kappa_init")
    p.add_argument("--tol", type=float, default=1e-3, help="kappa bracket width")
    p.add_argument("--max-iter", type=int, default=20, dest="max_iter",
                   help="solve budget for the kappa search")
    p.add_argument("--search", choices=["max-volume", "max-kappa"], default="max-volume")
    p.add_argument("--eps-floor", type=float, default=1e-9, dest="eps_floor")
    p.add_argument("--out", required=True, help="certificate JSON path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("certify", help="analytic certification against a system")
    add_system_args(p)
    p.add_argument("--cert", required=True)
    p.add_argument("--tol", type=float, default=verify_mod.DEFAULT_CERT_TOL)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("mc-verify", help="closed-loop Monte-Carlo check")
    add_system_args(p)
    p.add_argument("--cert", required=True)
    p.add_argument("--traj", type=int, default=100)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--out", required=True, help="directory for trajectory CSVs")
    p.set_defaults(func=cmd_mc_verify)

    p = sub.add_parser("project", help="2-D shadow of a certificate ellipsoid")
    p.add_argument("--cert", required=True)
    p.add_argument("--dims", required=True, help="two 1-based coordinates, e.g. 1,2")
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--out", required=True, help="boundary polyline CSV")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("ident", help="least-squares fit of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="fit JSON path")
    p.add_argument("--trace-entry", dest="trace_entry",
                   help="track this A_hat entry over growing prefixes, e.g. 3,3")
    p.add_argument("--grid", help="prefix grid start:stop:step")
    p.add_argument("--trace-out", dest="trace_out", help="trace CSV path")
    p.set_defaults(func=cmd_ident)

    p = sub.add_parser("repro-pendulum", help="full benchmark study with report")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--traj", type=int, default=100)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--max-iter", type=int, default=14, dest="max_iter")
    p.set_defaults(func=cmd_repro)

    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return exc.code
    except synth_mod.ExtractionError as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
