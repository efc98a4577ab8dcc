"""Command-line entry point.

Physics parameters come only from the JSON config; flags control run
mechanics (sizes, seeds, paths, grids).  Exit codes: 0 success, 1 invalid
input, 2 steady-state failure, 3 eigenstructure identity failure, 4
ensemble or analysis failure.
"""

from __future__ import annotations

import argparse
import copy
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .analysis import NonStationaryError, PhaseEstimationError, dark_quadratures, homodyne_spectrum, phase_variance
from .comb import ConfigError, config_from_dict, load_config, mode_indices
from .io import RunManifest, write_csv, write_json
from .linear import (
    IdentityCheckError,
    UnstableModelError,
    analytic_dark_spectra,
    build_linear_model,
    dark_quadrature_vectors,
    numeric_spectrum,
)
from .positivep import EnsembleDivergenceError, RunParams, default_threads, run_ensemble, write_trajectories
from .steady import FieldScales, SteadyStateError, reconstruct_field, solve_steady_state, verify_eigenrelation
from .supermodes import SupermodeError, below_threshold_spectrum, decompose

EXIT_INPUT, EXIT_STEADY, EXIT_IDENTITY, EXIT_ENSEMBLE = 1, 2, 3, 4


class CommandError(Exception):
    def __init__(self, msg, code=EXIT_INPUT):
        super().__init__(msg)
        self.code = code


def _prepare_out(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out_dir}: {exc.strerror}") from None
    if not os.access(out_dir, os.W_OK):
        raise CommandError(f"output directory {out_dir} is not writable")
    return out_dir


def _solve(config, basis):
    try:
        state = solve_steady_state(config, basis, check_phase_locking=not math.isinf(basis.threshold_sigma))
    except SteadyStateError as exc:
        raise CommandError(f"steady state failed: {exc} (residual {exc.residual})", EXIT_STEADY) from None
    if not state.converged:
        raise CommandError(f"steady state not converged: residual {state.residual:.3e}", EXIT_STEADY)
    return state


class _Run:
    """Collects outputs of one subcommand and writes the manifest at the end."""

    def __init__(self, args, config, seed=None, params=None):
        self.out = _prepare_out(args.out)
        self.t0 = time.perf_counter()
        self.manifest = RunManifest(args.command, config.to_dict(), seed, __version__, params=params or {})

    def path(self, name):
        return os.path.join(self.out, name)

    def csv(self, name, header, rows):
        p = self.path(name)
        write_csv(p, header, rows)
        self.manifest.add_output(p)

    def json(self, name, obj):
        p = self.path(name)
        write_json(p, obj)
        self.manifest.add_output(p)

    def binary(self, name, writer):
        p = self.path(name)
        writer(p)
        self.manifest.add_output(p)

    def finish(self):
        self.manifest.wall_time_s = time.perf_counter() - self.t0
        self.manifest.write(self.out)


# ---------------------------------------------------------------------------


def cmd_supermodes(args, config):
    run = _Run(args, config)
    try:
        basis = decompose(config.coupling)
    except SupermodeError as exc:
        raise CommandError(str(exc)) from None
    run.csv("eigenvalues.csv", ["index", "eigenvalue"], enumerate(basis.eigenvalues))
    k = min(args.n_vectors, config.n_modes)
    V = basis.eigenvectors[:, :k]
    run.csv("eigenvectors.csv", ["m"] + [f"v{j}" for j in range(k)],
            ([m, *row] for m, row in zip(mode_indices(config.n_side), V)))
    run.json("threshold.json", {
        "threshold_sigma": basis.threshold_sigma,
        "leading_eigenvalue": basis.eigenvalues[0],
        "n_modes": config.n_modes,
        "sigma": config.sigma,
        "above_threshold": config.sigma > basis.threshold_sigma,
    })
    run.finish()
    return 0


def cmd_steady_state(args, config):
    run = _Run(args, config)
    basis = decompose(config.coupling)
    state = _solve(config, basis)
    run.csv("steady_state.csv", ["m", "rho"], zip(mode_indices(config.n_side), state.rho))
    summary = state.summary()
    summary["threshold_sigma"] = basis.threshold_sigma
    if not state.is_trivial:
        summary["eigenrelation_residual"] = verify_eigenrelation(state, config)
    run.json("steady_state.json", summary)
    run.finish()
    return 0


def _linear(config, state, run):
    try:
        model = build_linear_model(config, state)
    except IdentityCheckError as exc:
        run.json("identities.json", {"ok": False, "checks": exc.report})
        run.finish()
        raise CommandError(f"eigenstructure identity check failed: {exc}", EXIT_IDENTITY) from None
    run.json("identities.json", {"ok": True, "checks": model.report})
    return model


def cmd_spectrum(args, config):
    run = _Run(args, config)
    basis = decompose(config.coupling)
    state = _solve(config, basis)
    omega = np.linspace(args.omega_min, args.omega_max, args.n_points) * config.gamma
    model = _linear(config, state, run)
    try:
        if args.quadrature in ("Y_d", "X_d"):
            if state.is_trivial:
                raise CommandError("the dark mode exists only above threshold")
            qX, qY = dark_quadrature_vectors(state.rho)
            V = numeric_spectrum(model, qY if args.quadrature == "Y_d" else qX, omega).values
            VY, VX = analytic_dark_spectra(omega, config.gamma)
            ref = VY if args.quadrature == "Y_d" else VX
            run.csv("spectrum.csv", ["omega", "V", "V_analytic"], zip(omega, V, ref))
        else:
            if not state.is_trivial:
                raise CommandError("supermode spectra are defined below threshold; use Y_d or X_d")
            Vm, Vp = below_threshold_spectrum(basis, config, args.mode, omega)
            run.csv("spectrum.csv", ["omega", "V_minus", "V_plus"], zip(omega, Vm, Vp))
    except UnstableModelError as exc:
        raise CommandError(str(exc), EXIT_IDENTITY) from None
    run.finish()
    return 0


def _run_params(args, config):
    g = config.gamma
    p = RunParams(
        n_traj=args.n_traj, t_max=args.t_max / g, dt=args.dt / g, save_stride=args.save_stride,
        seed=args.seed, stepper=args.stepper, factorization=args.factorization,
        escape_radius=args.escape_radius, threads=args.threads,
    )
    try:
        p.validate()
    except ValueError as exc:
        raise CommandError(f"invalid run parameters: {exc}") from None
    return p


def cmd_montecarlo(args, config):
    params = _run_params(args, config)
    run = _Run(args, config, seed=args.seed, params=params.to_dict())
    basis = decompose(config.coupling)
    state = _solve(config, basis)
    if state.is_trivial:
        raise CommandError("montecarlo needs an above-threshold config (sigma > threshold_sigma)")
    try:
        ens = run_ensemble(config, params, state)
    except EnsembleDivergenceError as exc:
        raise CommandError(str(exc), EXIT_ENSEMBLE) from None
    run.manifest.extra = {"discarded": ens.discarded, "midpoint_fallbacks": ens.midpoint_fallbacks}
    if args.dump:
        run.binary("trajectories.bin", lambda p: write_trajectories(p, ens))

    g = config.gamma
    failures = []
    summary = {"discard_fraction": ens.discard_fraction, "discarded": ens.discarded,
               "predicted_slope": g / (4 * state.norm_sq), "norm_sq": state.norm_sq}
    try:
        ph = phase_variance(ens)
        run.csv("phase_variance.csv", ["t", "V_theta", "V_theta_err"], zip(ens.t_grid, ph.variance, ph.variance_err))
        summary.update(ph.summary())
        summary["slope_over_gamma"] = ph.fitted_slope / g
    except (PhaseEstimationError, ValueError) as exc:
        failures.append(f"phase variance: {exc}")
        summary["phase_error"] = str(exc)

    omega = np.linspace(0.0, args.omega_max, args.n_omega) * g
    try:
        qs = dark_quadratures(ens)
        t_tr = None if args.t_transient is None else args.t_transient / g
        sY = homodyne_spectrum(qs, g, omega, "Y_d", t_transient=t_tr, taper=args.taper)
        sX = homodyne_spectrum(qs, g, omega, "X_d", t_transient=t_tr, taper=args.taper)
        VY, VX = analytic_dark_spectra(omega, g)
        run.csv("spectra.csv", ["omega", "V_Yd", "V_Yd_err", "V_Yd_analytic", "V_Xd", "V_Xd_err", "V_Xd_analytic"],
                zip(omega, sY.values, sY.errors, VY, sX.values, sX.errors, VX))
    except (NonStationaryError, ValueError) as exc:
        failures.append(f"spectrum: {exc}")
        summary["spectrum_error"] = str(exc)
    run.json("phase_fit.json", summary)
    run.finish()
    if failures:
        raise CommandError("; ".join(failures), EXIT_ENSEMBLE)
    return 0


_SWEEPABLE = {"sigma", "gamma", "kappa", "pump.width", "mismatch.u", "mismatch.v", "mismatch.w"}


def _sweep_point(base, param, value):
    d = copy.deepcopy(base)
    if "." in param:
        sec, key = param.split(".")
        d[sec][key] = value
    else:
        d[param] = value
    row = {"value": value, "threshold_sigma": math.nan, "threshold_margin": math.nan, "norm_sq": math.nan,
           "V_Yd0": math.nan, "predicted_slope": math.nan, "error": ""}
    try:
        cfg = config_from_dict(d)
        basis = decompose(cfg.coupling)
        row["threshold_sigma"] = basis.threshold_sigma
        row["threshold_margin"] = cfg.sigma / basis.threshold_sigma - 1.0
        state = solve_steady_state(cfg, basis)
        row["norm_sq"] = state.norm_sq
        if not state.is_trivial:
            model = build_linear_model(cfg, state)
            _, qY = dark_quadrature_vectors(state.rho)
            row["V_Yd0"] = float(numeric_spectrum(model, qY, [0.0]).values[0])
            row["predicted_slope"] = cfg.gamma / (4 * state.norm_sq)
    except Exception as exc:  # recorded in-row, the sweep goes on
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_sweep(args, config):
    run = _Run(args, config)
    if args.param not in _SWEEPABLE:
        raise CommandError(f"cannot sweep {args.param!r}; choose one of {sorted(_SWEEPABLE)}")
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError:
            raise CommandError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    elif args.linspace:
        a, b, n = args.linspace
        values = list(np.linspace(float(a), float(b), int(n)))
    else:
        raise CommandError("give --values or --linspace")
    base = config.to_dict()
    if args.param.startswith("pump.") and base["pump"]["kind"] not in ("gaussian", "sech2"):
        raise CommandError("pump.width can only be swept for gaussian or sech2 pumps")
    if args.param.startswith("mismatch.") and base["mismatch"]["kind"] != "quadratic":
        raise CommandError("mismatch parameters can only be swept for the quadratic model")
    threads = args.threads or default_threads()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda v: _sweep_point(base, args.param, v), values))
    cols = ["value", "threshold_sigma", "threshold_margin", "norm_sq", "V_Yd0", "predicted_slope", "error"]
    run.csv("sweep.csv", [args.param] + cols[1:], ([r[c] for c in cols] for r in rows))
    run.manifest.params = {"param": args.param, "values": values}
    run.finish()
    return 0


def cmd_field(args, config):
    run = _Run(args, config)
    state = _solve(config, decompose(config.coupling))
    if state.is_trivial:
        raise CommandError("the classical field is zero below threshold")
    scales = FieldScales()
    grid = {
        "phi": np.linspace(0, 2 * np.pi, args.phi_points, endpoint=False),
        "r": np.linspace(0, args.r_max, args.r_points),
        "z": np.linspace(-scales.L_cav / 2, scales.L_cav / 2, args.z_points),
        "t": np.linspace(0, 2 * np.pi / scales.Omega, args.t_points, endpoint=False),
    }
    sample = reconstruct_field(state, grid, args.cavity, args.theta, scales)
    run.csv("field.csv", ["phi", "r", "z", "t", "F"], sample.rows())
    run.json("field.json", {"cavity": args.cavity, "theta": args.theta, "shape": list(sample.values.shape),
                            "scales": vars(scales)})
    run.finish()
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="spopo", description="Multimode OPO comb: classical, linearized and positive-P tools.")
    p.add_argument("--version", action="version", version=f"spopo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        return sp

    sp = common("supermodes", "eigen-decomposition of the coupling matrix")
    sp.add_argument("--n-vectors", type=int, default=5, help="leading eigenvectors to write")

    common("steady-state", "classical above-threshold solution")

    sp = common("spectrum", "linearized output noise spectrum")
    sp.add_argument("--quadrature", choices=["Y_d", "X_d", "supermode"], default="Y_d")
    sp.add_argument("--mode", type=int, default=0, help="supermode index for --quadrature supermode")
    sp.add_argument("--omega-min", type=float, default=0.0, help="in units of gamma")
    sp.add_argument("--omega-max", type=float, default=10.0, help="in units of gamma")
    sp.add_argument("--n-points", type=int, default=101)

    sp = common("montecarlo", "positive-P ensemble: phase diffusion and homodyne spectra")
    sp.add_argument("--n-traj", type=int, default=10_000)
    sp.add_argument("--t-max", type=float, default=5.0, help="in units of 1/gamma")
    sp.add_argument("--dt", type=float, default=1e-3, help="in units of 1/gamma")
    sp.add_argument("--save-stride", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--stepper", choices=["euler_maruyama", "semi_implicit_midpoint"], default="euler_maruyama")
    sp.add_argument("--factorization", choices=["block", "minimal"], default="block")
    sp.add_argument("--escape-radius", type=float, default=None)
    sp.add_argument("--omega-max", type=float, default=5.0, help="in units of gamma")
    sp.add_argument("--n-omega", type=int, default=21)
    sp.add_argument("--t-transient", type=float, default=None, help="in units of 1/gamma (default 2)")
    sp.add_argument("--taper", choices=["tukey", "boxcar", "hann"], default="tukey")
    sp.add_argument("--dump", action="store_true", help="also write trajectories.bin")

    sp = common("sweep", "parameter sweep of classical and linearized quantities")
    sp.add_argument("--param", required=True, help="sigma, gamma, kappa, pump.width or mismatch.u/v/w")
    sp.add_argument("--values", help="comma-separated values")
    sp.add_argument("--linspace", nargs=3, metavar=("START", "STOP", "N"))

    sp = common("field", "classical bright-mode field on a grid")
    sp.add_argument("--cavity", choices=["ring", "fabry_perot"], default="ring")
    sp.add_argument("--theta", type=float, default=0.0)
    sp.add_argument("--phi-points", type=int, default=16)
    sp.add_argument("--r-max", type=float, default=2.5)
    sp.add_argument("--r-points", type=int, default=16)
    sp.add_argument("--z-points", type=int, default=8)
    sp.add_argument("--t-points", type=int, default=8)

    for action in sub.choices.values():
        action.add_argument("--threads", type=int, default=None, help="worker threads (default: $SPOPO_THREADS or 1)")
    return p


_COMMANDS = {
    "supermodes": cmd_supermodes,
    "steady-state": cmd_steady_state,
    "spectrum": cmd_spectrum,
    "montecarlo": cmd_montecarlo,
    "sweep": cmd_sweep,
    "field": cmd_field,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise CommandError("--threads must be >= 1")
        config = load_config(args.config)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"spopo: config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CommandError as exc:
        print(f"spopo {args.command}: {exc}", file=sys.stderr)
        return exc.code


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
