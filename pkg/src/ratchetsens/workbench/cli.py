"""Command-line entry point.

Every subcommand reads a JSON run configuration (``--config``) and writes
its results below the configured output directory. Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 rank-deficient Jacobian.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError, RankDeficiencyError, RatchetError
from ..identify import IdentificationProblem, ParameterLayout, jacobian_fd
from ..sensitivity import (
    NoiseModel,
    SobolConfig,
    correlation_matrix,
    max_offdiagonal,
    run_sensitivity,
    strain_sensitivity,
)
from ..simulator import ExperimentRecord, integrate
from .config import ModelSpec, RunConfig
from .pipeline import fit_reports, generate_synthetic_experiment, identify_parameters, run_validation
from .reports import (
    DiagnosticsReport,
    emit_reports,
    write_json,
    write_matrix_csv,
    write_series,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_RANK = 0, 2, 3, 4
log = logging.getLogger("ratchetsens")


# ---------------------------------------------------------------------------
# helpers


def _tests(cfg: RunConfig, specs):
    paths = [cfg.record_path(e) for e in specs]
    cfg.require_files(*paths)
    return [(e.name, e.program(), ExperimentRecord.from_csv(p)) for e, p in zip(specs, paths)]


def _pairs(tests):
    return [(prog, rec) for _, prog, rec in tests]


def _params_arg(cfg: RunConfig, path: str | None, default: str | None, what: str, model: ModelSpec | None = None):
    src = path or default
    if src is None:
        raise ConfigError(f"no {what} given")
    if model is not None:
        cfg = replace(cfg, model=model)
    return cfg.load_params(src, what)


def _p_star_path(cfg: RunConfig, args) -> str:
    return args.params or str(cfg.out / "p_star.json")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig, args) -> int:
    """Simulate every configured experiment with the true parameters."""
    p_true = _params_arg(cfg, args.truth, cfg.truth, "true parameter file")
    noise = cfg.noise if args.sigma is None else NoiseModel(args.sigma, cfg.noise.n_modes)
    base = cfg.sobol or SobolConfig()
    sobol = SobolConfig(
        dimensions=max(noise.n_modes * len(cfg.experiments), 1), skip=base.skip, leap=base.leap, n_draws=args.draw + 1
    )
    for i, e in enumerate(cfg.experiments):
        rec = generate_synthetic_experiment(p_true, e.program(), noise, sobol, args.draw, i * noise.n_modes, cfg.solver)
        path = cfg.record_path(e)
        path.parent.mkdir(parents=True, exist_ok=True)
        rec.to_csv(path)
        log.info("wrote %s", path)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    p = _params_arg(cfg, args.params, cfg.truth, "parameter file")
    if args.experiment:
        match = [e for e in cfg.experiments if e.name == args.experiment]
        if not match:
            raise ConfigError(f"no experiment named {args.experiment!r}")
        name, prog = match[0].name, match[0].program()
    else:
        name, prog = "metric", cfg.metric_program.program()
    trace = integrate(p, prog, cfg.solver)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / f"{name}_trace.csv")
    write_series(out / "plots" / f"{name}_strain.csv", "time_s", "strain", trace.time, trace.strain)
    write_series(out / "plots" / f"{name}_temperature.csv", "time_s", "temperature_K", trace.time, trace.temperature)
    return EXIT_OK


def cmd_identify(cfg: RunConfig, args) -> int:
    p0 = _params_arg(cfg, args.initial, cfg.initial, "initial parameter file")
    tests = _tests(cfg, cfg.train())
    if not tests:
        raise ConfigError("no training experiments configured")
    idc = cfg.identification
    run = identify_parameters(
        p0, _pairs(tests), idc.fixed, None if (args.skip_nested or idc.skip_nested) else idc.nested, idc.refine, cfg.solver
    )
    rr = run.refine
    fits = fit_reports(run.params, tests, cfg.solver)
    emit_reports(cfg.out, params=run.params, fits=fits)
    summary = {
        "names": list(run.layout.names),
        "x": [float(v) for v in rr.x],
        "phi_start": run.phi_start,
        "phi_nested": run.phi_nested,
        "phi": rr.phi,
        "phi_scale": run.problem.phi_scale,
        "grad_inf": rr.grad_norm,
        "converged": rr.converged,
        "iterations": rr.iterations,
        "nested_evaluations": run.n_evals,
        "message": rr.message,
    }
    write_json(cfg.out / "identification.json", summary)
    log.info("phi = %.6g, |grad|_inf = %.3g, converged = %s", rr.phi, rr.grad_norm, rr.converged)
    return EXIT_OK


def _problem_at(cfg: RunConfig, p):
    tests = _tests(cfg, cfg.train())
    if not tests:
        raise ConfigError("no training experiments configured")
    layout = ParameterLayout.for_params(p, cfg.identification.fixed)
    return IdentificationProblem(_pairs(tests), layout, solver=cfg.solver), layout


def cmd_sensitivity(cfg: RunConfig, args) -> int:
    p = _params_arg(cfg, _p_star_path(cfg, args), None, "identified parameter file")
    problem, layout = _problem_at(cfg, p)
    noise = cfg.noise if args.sigma is None else NoiseModel(args.sigma, cfg.noise.n_modes)
    sobol = cfg.sobol_config()
    if args.draws is not None:
        sobol = replace(sobol, n_draws=args.draws)
    sp = cfg.sensitivity
    cloud = run_sensitivity(
        problem, layout.values(p), noise, sobol, cfg.metric_program.program(), layout=layout, solver=cfg.solver,
        workers=args.workers or sp.workers, chunk=sp.chunk,
        exact_metric=sp.exact_metric if args.exact_metric is None else args.exact_metric, rank_tol=sp.rank_tol,
    )
    emit_reports(cfg.out, cloud=cloud)
    log.info("cloud size %.6g over %d draws", cloud.cloud_size, cloud.n_draws)
    return EXIT_OK


def cmd_correlate(cfg: RunConfig, args) -> int:
    p = _params_arg(cfg, _p_star_path(cfg, args), None, "identified parameter file")
    problem, layout = _problem_at(cfg, p)
    J = jacobian_fd(layout.values(p), problem, cfg.identification.refine.rel_step, cfg.identification.refine.floor)
    C = correlation_matrix(J, problem.weight, layout.names)
    write_matrix_csv(cfg.out / "correlation.csv", layout.names, C)
    print(f"max |Corr| off-diagonal: {max_offdiagonal(C):.12f}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    p = _params_arg(cfg, _p_star_path(cfg, args), None, "identified parameter file")
    tests = _tests(cfg, cfg.held_out())
    res = run_validation(p, _pairs(tests), ParameterLayout.for_params(p, cfg.identification.fixed), cfg.solver)
    emit_reports(cfg.out, validation=res)
    if res.flagged:
        log.warning("no held-out experiments configured; validation error set to 0")
    print(f"validation phi: {res.phi:.12g}")
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig, args) -> int:
    """Identify every configured model size and evaluate criteria I-IV."""
    dg = cfg.diagnostics
    train = _tests(cfg, cfg.train())
    held = _tests(cfg, cfg.held_out())
    if not train:
        raise ConfigError("no training experiments configured")
    sizes = tuple(args.branches or dg.branches)
    missing = [n for n in sizes if str(n) not in dg.initial]
    if missing:
        raise ConfigError(f"diagnostics.initial lacks initial parameter files for sizes {missing}")
    idc = cfg.identification
    phi, phi_val, corr, cloud_size, rank = {}, {}, {}, {}, {}
    metric = cfg.metric_program.program()
    for n in sizes:
        p0 = _params_arg(cfg, dg.initial[str(n)], None, f"initial parameters ({n} branches)", replace(cfg.model, n_branches=n))
        run = identify_parameters(p0, _pairs(train), idc.fixed, None if idc.skip_nested else idc.nested, idc.refine, cfg.solver)
        phi[n] = run.refine.phi
        phi_val[n] = run_validation(run.x, _pairs(held), run.layout, cfg.solver).phi if held else None
        sub = cfg.out / f"branches_{n}"
        emit_reports(sub, params=run.params, fits=fit_reports(run.params, train, cfg.solver))
        try:
            C = correlation_matrix(run.refine.jacobian, None, run.layout.names)
            corr[n] = max_offdiagonal(C)
            write_matrix_csv(sub / "correlation.csv", run.layout.names, C)
            d_eps = strain_sensitivity(run.x, metric, run.layout, cfg.solver)
            cl = run_sensitivity(
                run.problem, run.x, cfg.noise, cfg.sobol_config(), metric, jacobian=run.refine.jacobian,
                mod_star=run.refine.mod, d_eps_dp=d_eps, layout=run.layout, solver=cfg.solver,
                workers=cfg.sensitivity.workers, chunk=cfg.sensitivity.chunk, rank_tol=cfg.sensitivity.rank_tol,
            )
            cloud_size[n] = cl.cloud_size
        except RankDeficiencyError as exc:
            rank[n] = {"column": exc.column, "name": exc.name, "diag_ratio": float(exc.diag_ratio or 0.0)}
            corr.setdefault(n, None)
            cloud_size[n] = None
    report = DiagnosticsReport.build(
        cfg.model.family, phi, phi_val, corr, cloud_size,
        min_relative_gain=dg.min_relative_gain, max_correlation=dg.max_correlation, max_cloud_size=dg.max_cloud_size,
        rank_deficient=rank,
    )
    emit_reports(cfg.out, diagnostics=report)
    for key, c in report.criteria.items():
        print(f"criterion {key:>3}: {c.verdict} {list(c.flagged_sizes)}")
    return EXIT_RANK if report.hard_flag else EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "sensitivity": cmd_sensitivity,
    "correlate": cmd_correlate,
    "diagnose": cmd_diagnose,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ratchetsens", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="override the output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic experiment records")
    p.add_argument("--truth", help="parameter JSON used to generate the data")
    p.add_argument("--sigma", type=float, help="noise standard deviation (0 for clean data)")
    p.add_argument("--draw", type=int, default=0, help="Sobol row used for the noise")

    p = sub.add_parser("simulate", help="integrate one program and write its trace")
    p.add_argument("--params")
    p.add_argument("--experiment", help="experiment name; the metric program if omitted")

    p = sub.add_parser("identify", help="fit parameters to the training records")
    p.add_argument("--initial", help="initial parameter JSON")
    p.add_argument("--skip-nested", action="store_true", help="refine from the initial guess directly")

    p = sub.add_parser("sensitivity", help="parameter cloud of an identified set")
    p.add_argument("--params")
    p.add_argument("--sigma", type=float)
    p.add_argument("--draws", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--exact-metric", type=int, help="re-simulate this many draws for full distances")

    p = sub.add_parser("correlate", help="correlation matrix at an identified set")
    p.add_argument("--params")

    p = sub.add_parser("validate", help="error on held-out experiments")
    p.add_argument("--params")

    p = sub.add_parser("diagnose", help="overparametrization criteria over model sizes")
    p.add_argument("--branches", type=int, nargs="+")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if args.out:
            cfg = replace(cfg, output_dir=str(Path(args.out).resolve()))
        return COMMANDS[args.command](cfg, args)
    except RankDeficiencyError as exc:
        print(f"rank-deficient Jacobian: {exc}", file=sys.stderr)
        return EXIT_RANK
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RatchetError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
