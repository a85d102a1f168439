"""Command-line entry point.

``rollstir SUBCOMMAND [--config FILE] [--KEY VALUE ...] [--output DIR]``

Subcommands: ``solve``, ``mc``, ``sweep``, ``alt-scaling``, ``averaging``,
``check``. Any config key can be overridden by a flag of the same name.
Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure (solver non-convergence, censoring overflow, impossible fit).
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, field

from . import __version__, averaging, pde, scaling, sde
from .config import KEYS, ConfigError, RunConfig, build, dumps, format_value, load_config, parse_value
from .flow import check_assumptions, make_handle
from .kernels import BACKEND

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class NumericalFailure(RuntimeError):
    pass


@dataclass
class RunManifest:
    """Everything needed to reproduce a run.

    Written as the full config (loadable with ``--config``) followed by
    ``#``-comment lines with the version, seeds, timings, outputs and the
    assumption report.
    """

    config: RunConfig
    command: str
    version: str = __version__
    backend: str = BACKEND
    seeds: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    assumptions: dict = field(default_factory=dict)

    def dumps(self) -> str:
        lines = [dumps(self.config).rstrip("\n"),
                 f"# command: {self.command}",
                 f"# version: {self.version}",
                 f"# backend: {self.backend}"]
        lines += [f"# seed {k}: {v}" for k, v in self.seeds.items()]
        lines += [f"# seconds {k}: {v:.3f}" for k, v in self.timings.items()]
        lines += [f"# output: {p}" for p in self.outputs]
        lines += [f"# assumption {k}: {v}" for k, v in self.assumptions.items()]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def _handle(cfg: RunConfig, amplitude: float | None = None):
    A = cfg.amplitude if amplitude is None else amplitude
    return make_handle(cfg.kind, cfg.epsilon, A, N=cfg.N, c0=cfg.c0, alpha=cfg.alpha, base=cfg.base)


def _sweep_config(cfg: RunConfig) -> scaling.SweepConfig:
    return scaling.SweepConfig(
        p=cfg.p, gamma=cfg.gamma, alpha=cfg.alpha, epsilons=cfg.epsilons, N=cfg.N,
        kind=cfg.kind, base=cfg.base, c0=cfg.c0, bc_bottom=cfg.bc_bottom, nx=cfg.nx, ny=cfg.ny,
        ny_per_roll=cfg.ny_per_roll, rtol=cfg.rtol, solver=cfg.solver,
        pe_resolution=cfg.pe_resolution, sde_check=cfg.sde_check, sde_paths=cfg.sde_paths,
        sde_seed=cfg.seed, dt_safety=cfg.dt_safety, workers=cfg.workers, run_label=cfg.run_label)


def _write_kv(path, values: dict) -> None:
    with open(path, "w") as fh:
        for k, v in values.items():
            fh.write(f"{k} = {format_value(v) if not isinstance(v, str) else v}\n")


def _assumptions(cfg: RunConfig) -> dict:
    rep = check_assumptions(_handle(cfg, cfg.amplitude or 1.0).spec, n=201)
    return {k: v for k, v in rep.as_dict().items() if k != "notes"}


# --------------------------------------------------------------------------
# subcommands

def cmd_solve(cfg, out, manifest, echo):
    h = _handle(cfg)
    prob = pde.CellProblem(h, nx=cfg.nx, ny=max(cfg.ny, cfg.ny_per_roll * round(h.height)),
                           bc_bottom=cfg.bc_bottom)
    try:
        res = pde.solve(prob, rtol=cfg.rtol, method=cfg.solver)
    except pde.SolverError as err:
        raise NumericalFailure(str(err)) from None
    summary = {"norm_inf": res.norm_inf, "norm_1": res.norm_1, "norm_2": res.norm_2,
               "iterations": res.iterations, "residual": res.residual,
               "underresolved": res.underresolved}
    for k, v in summary.items():
        echo(f"{k} = {v}")
    if out:
        pde.write_csv(res, os.path.join(out, "solution.csv"))
        _write_kv(os.path.join(out, "summary.txt"), summary)
        manifest.outputs += ["solution.csv", "summary.txt"]


def cmd_mc(cfg, out, manifest, echo):
    h = _handle(cfg)
    sc = sde.SdeConfig(h, dt_safety=cfg.dt_safety, dt_max=cfg.dt_max, rng_seed=cfg.seed,
                       n_samples=cfg.n_samples, bc_bottom=cfg.bc_bottom, workers=cfg.workers)
    manifest.seeds["mc"] = cfg.seed
    T, se, st = sde.temperature(cfg.point, sc)
    summary = {"temperature": T, "std_error": se, **st.as_dict()}
    for k, v in summary.items():
        echo(f"{k} = {v}")
    if out:
        _write_kv(os.path.join(out, "mc.txt"), summary)
        manifest.outputs.append("mc.txt")
    if st.flagged:
        raise NumericalFailure(f"{st.censored} of {st.n} paths censored")


def cmd_sweep(cfg, out, manifest, echo):
    sc = _sweep_config(cfg)
    if sc.sde_check:
        manifest.seeds["sde_check"] = sc.sde_seed
    try:
        rows = scaling.run_sweep(sc)
    except pde.SolverError as err:
        raise NumericalFailure(str(err)) from None
    for r in rows:
        manifest.timings[f"eps={r.epsilon!r}"] = r.seconds
        echo(f"eps = {r.epsilon:.6g}  A = {r.A:.6g}  Pe = {r.pe:.6g}  |T|_inf = {r.norm_inf:.6g}"
             + ("  (under-resolved)" if r.underresolved else ""))
    summary = {"rows": len(rows)}
    fit = None
    for model in scaling.FitModel:
        try:
            f = scaling.fit_exponent(rows, model)
        except scaling.FitError as err:
            summary[f"{model.value}_error"] = str(err)
            continue
        summary.update(scaling.fit_summary(f, cfg.p, prefix=f"{model.value}_"))
        if model is scaling.FitModel.PURE_POWER:
            fit = f
            echo(f"slope = {f.slope:.6f} +- {f.stderr:.2g} (reference {scaling.theory_exponent(cfg.p):.6f})")
    if out:
        scaling.write_results_csv(rows, os.path.join(out, "results.csv"))
        _write_kv(os.path.join(out, "fit.txt"), summary)
        with open(os.path.join(out, "scaling.gp"), "w") as fh:
            fh.write(scaling.gnuplot_script("results.csv", fit, cfg.p))
        manifest.outputs += ["results.csv", "fit.txt", "scaling.gp"]
    if fit is None:
        raise NumericalFailure(summary.get("pure_power_error", "fit failed"))


def cmd_alt_scaling(cfg, out, manifest, echo):
    sc = _sweep_config(cfg)
    try:
        study = scaling.alternate_scaling_study(cfg.alphas, sc)
    except (pde.SolverError, scaling.FitError) as err:
        raise NumericalFailure(str(err)) from None
    echo(f"matched Pe = {study.pe_match:.6g}")
    for row in study.table():
        echo("alpha = {alpha:g}  predicted = {predicted:.6f}  fitted = {fitted:.6f}  "
             "|T|_inf at matched Pe = {norm_inf_at_match:.6g}".format(**row))
    echo(f"best alpha = {study.best_alpha:g}")
    if out:
        path = os.path.join(out, "alt_scaling.csv")
        with open(path, "w") as fh:
            fh.write("alpha,predicted,fitted,stderr,norm_inf_at_match\n")
            for row in study.table():
                fh.write(",".join(repr(float(row[k])) for k in
                                  ("alpha", "predicted", "fitted", "stderr", "norm_inf_at_match")) + "\n")
        for a in study.alphas:
            scaling.write_results_csv(study.rows[a], os.path.join(out, f"results_alpha_{a:g}.csv"))
            manifest.outputs.append(f"results_alpha_{a:g}.csv")
        manifest.outputs.append("alt_scaling.csv")


def cmd_averaging(cfg, out, manifest, echo):
    spec = _handle(cfg, 1.0 if cfg.kind != "cutoff" else cfg.amplitude).spec
    levels = averaging.chebyshev_levels(cfg.n_levels, cfg.h_min, cfg.h_max)
    try:
        coeffs = averaging.averaged_coefficients(spec, levels, cfg.n_points)
    except averaging.ContourError as err:
        raise NumericalFailure(str(err)) from None
    resid = averaging.verify_flux_identity(coeffs)
    echo(f"levels = {levels.size}")
    echo(f"flux_identity_residual = {resid:.3e}")
    if out:
        coeffs.to_csv(os.path.join(out, "coefficients.csv"))
        manifest.outputs.append("coefficients.csv")


def cmd_check(cfg, out, manifest, echo):
    rep = check_assumptions(_handle(cfg, cfg.amplitude or 1.0).spec)
    for k, v in rep.as_dict().items():
        if k == "notes":
            for note in v:
                echo(f"note: {note}")
        else:
            echo(f"{k} = {v}")
    if out:
        _write_kv(os.path.join(out, "assumptions.txt"),
                  {k: v for k, v in rep.as_dict().items() if k != "notes"})
        manifest.outputs.append("assumptions.txt")


COMMANDS = {"solve": cmd_solve, "mc": cmd_mc, "sweep": cmd_sweep,
            "alt-scaling": cmd_alt_scaling, "averaging": cmd_averaging, "check": cmd_check}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rollstir", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("-c", "--config", help="flat key = value config file")
    ap.add_argument("-o", "--output", help="directory for CSV, summary and manifest files")
    for key in KEYS:
        ap.add_argument(f"--{key.replace('_', '-')}", dest=f"set_{key}", metavar="VALUE",
                        help=argparse.SUPPRESS)
    return ap


def main(argv=None, echo=print) -> int:
    """Run the command line; returns the exit code."""
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    overrides = {k: getattr(args, f"set_{k}") for k in KEYS if getattr(args, f"set_{k}") is not None}
    try:
        if args.config:
            cfg = load_config(args.config, overrides)
        else:
            cfg = build({k: parse_value(k, v) for k, v in overrides.items()})
    except ConfigError as err:
        print(f"rollstir: {err}", file=sys.stderr)
        return EXIT_USAGE

    out = args.output
    if out:
        os.makedirs(out, exist_ok=True)
    manifest = RunManifest(config=cfg, command=args.command)
    start = time.perf_counter()
    try:
        COMMANDS[args.command](cfg, out, manifest, echo)
        code = EXIT_OK
    except NumericalFailure as err:
        print(f"rollstir: numerical failure: {err}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except ValueError as err:
        print(f"rollstir: {err}", file=sys.stderr)
        code = EXIT_USAGE
    manifest.timings["total"] = time.perf_counter() - start
    if out:
        if args.command in ("sweep", "alt-scaling", "solve", "mc"):
            manifest.assumptions = _assumptions(cfg)
        manifest.write(os.path.join(out, "manifest.txt"))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
