# cli.py — command line: equilibria / spectrum / branch / simulate / phi
#
#   python cli.py equilibria --preset choices --alpha 10
#   python cli.py branch --preset "plus(34)" --alpha-range 18:25:0.05 --svg x34.svg
#   python cli.py simulate --config configs/choices2_hopf.toml --out trace.csv

import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from age_model import AgeModel, build_model
from continuation import trace_diagram
from diagram_svg import render_diagram
from equilibria import disease_free_point, find_endemic, phi_curve
from errors import EXIT_OK, AgepiError, ConfigError, NumericalError, exit_code_for
from presets import plus_fields
from rate_expr import parse_rate
from run_config import RunConfig, dump_config, load_run_config, parse_range
from run_log import clear_status_log, log_error, log_step, log_success
from simulate import SimReport, discrete_dfe, discrete_level, init, perturbed_state, run
from spectrum import SearchRegion, build_kernels, find_roots

logger = logging.getLogger(__name__)

CSV_FLOAT = "%.17g"


# -----------------------------------------
# Output
# -----------------------------------------
def write_csv(table: pd.DataFrame, out: Optional[str]) -> None:
    """RFC-4180 CSV, 17 significant digits, to a file or stdout."""
    kwargs = dict(index=False, float_format=CSV_FLOAT, lineterminator="\r\n")
    if out:
        table.to_csv(out, **kwargs)
        log_step(f"[CLI] {len(table)} rows written to {out}")
    else:
        table.to_csv(sys.stdout, **kwargs)


def _model(cfg: RunConfig, **overrides: Any) -> AgeModel:
    return build_model(cfg.build_spec(**overrides))


def _select(model: AgeModel, alpha: float, which: str, index: int, section: str):
    if which == "dfe":
        return disease_free_point(model, alpha)
    if which != "endemic":
        raise ConfigError(f"expected 'dfe' or 'endemic', got {which!r}", key_path=f"{section}.equilibrium")
    points = find_endemic(model, alpha)
    if not -len(points) <= index < len(points):
        raise ConfigError(f"no endemic equilibrium #{index} at alpha={alpha:g} ({len(points)} found)",
                          key_path=f"{section}.index")
    return points[index]


# -----------------------------------------
# Commands
# -----------------------------------------
def cmd_equilibria(cfg: RunConfig, args: argparse.Namespace) -> pd.DataFrame:
    model = _model(cfg)
    alphas = cfg.option("equilibria", "alphas") or [model.alpha]
    if args.alpha is not None:
        alphas = [args.alpha]
    rows = []
    for alpha in alphas:
        alpha = float(alpha)
        for eq in [disease_free_point(model, alpha)] + find_endemic(model, alpha):
            rows.append([alpha, eq.kind, eq.W_star, eq.B_star, eq.Q_star, eq.R0e, eq.phi_slope])
    log_success("[CLI] equilibria", f"{len(rows)} equilibria over {len(alphas)} alpha value(s)")
    return pd.DataFrame(rows, columns=["alpha", "kind", "W_star", "B_star", "Q_star", "R0e", "phi_slope"])


def cmd_spectrum(cfg: RunConfig, args: argparse.Namespace) -> pd.DataFrame:
    model = _model(cfg)
    opts = model.options
    eq = _select(model, model.alpha, cfg.option("spectrum", "equilibrium", "dfe", str),
                 cfg.option("spectrum", "index", 0, int), "spectrum")
    region = SearchRegion(cfg.option("spectrum", "zeta_lo", opts.zeta_lo, float),
                          cfg.option("spectrum", "zeta_hi", opts.zeta_hi, float),
                          cfg.option("spectrum", "omega_max", opts.omega_max, float))
    if not region.zeta_lo < region.zeta_hi or not region.omega_max > 0:
        raise ConfigError("need zeta_lo < zeta_hi and omega_max > 0", key_path="spectrum.zeta_lo")
    result = find_roots(build_kernels(model, eq), region, cfg.option("spectrum", "max_roots", None, int))
    top = result.rightmost
    rows = [[r.zeta, r.omega, r.residual, top is not None and r.value == top.value] for r in result.roots]
    log_success("[CLI] spectrum", f"{len(rows)} roots at alpha={model.alpha:g} ({eq.kind})"
                + (" [partial]" if result.partial else ""))
    return pd.DataFrame(rows, columns=["re", "im", "residual", "rightmost"])


def _family(cfg: RunConfig, args: argparse.Namespace) -> List[float]:
    if args.family:
        lo, hi, step = parse_range(args.family, "--family")
        return list(np.round(np.arange(lo, hi + 0.5 * step, step), 12))
    values = cfg.option("branch", "family") or []
    try:
        return [float(x) for x in values]
    except (TypeError, ValueError):
        raise ConfigError(f"expected a list of numbers, got {values!r}", key_path="branch.family") from None


def cmd_branch(cfg: RunConfig, args: argparse.Namespace) -> pd.DataFrame:
    if args.alpha_range:
        alpha_lo, alpha_hi, step = parse_range(args.alpha_range, "--alpha-range")
    else:
        alpha_lo = cfg.option("branch", "alpha_lo", 0.0, float)
        alpha_hi = cfg.option("branch", "alpha_hi", 25.0, float)
        step = cfg.option("branch", "step", 0.05, float)
    threads = args.threads or cfg.option("branch", "threads", 1, int)

    family = _family(cfg, args)
    models = {f"X={x:g}": _model(cfg, **plus_fields(x)) for x in family} if family else {"": _model(cfg)}

    rows, drawn = [], {}
    for label, model in models.items():
        branches = trace_diagram(model, alpha_lo, alpha_hi, step, threads=threads)
        drawn[label] = branches
        for b_id, branch in enumerate(branches):
            for p in branch.points:
                rows.append([label, b_id, branch.kind, "point", p.alpha, p.W_star, p.status,
                             p.rightmost.real, p.rightmost.imag, 0.0])
        for b_id, branch in enumerate(branches):
            for ev in branch.bifurcations:
                rows.append([label, b_id, branch.kind, ev.kind, ev.alpha, ev.W_star, "",
                             np.nan, np.nan, ev.omega])

    if args.svg:
        render_diagram(drawn, args.svg, title=cfg.name)
    log_success("[CLI] branch", f"{len(rows)} rows for {len(models)} model(s)")
    return pd.DataFrame(rows, columns=["family", "branch", "branch_kind", "row", "alpha", "W_star", "stable",
                                       "rightmost_re", "rightmost_im", "omega"])


def _summary(report: SimReport) -> str:
    parts = [f"outcome={report.outcome}", f"final_W={report.final_W:.17g}"]
    if report.period is not None:
        parts.append(f"period={report.period:.6g} amplitude={report.amplitude:.6g}")
    if report.decay_rate is not None:
        parts.append(f"decay_rate={report.decay_rate:.6g}")
    return " ".join(parts)


def cmd_simulate(cfg: RunConfig, args: argparse.Namespace) -> pd.DataFrame:
    model = _model(cfg)
    cells = cfg.option("simulate", "cells", 512, int)
    initial = cfg.option("simulate", "initial", "endemic", str)
    perturbation = cfg.option("simulate", "perturbation", 0.01, float)
    reference = None
    if initial == "expr":
        s0, i0 = cfg.option("simulate", "s0"), cfg.option("simulate", "i0")
        if s0 is None or i0 is None:
            raise ConfigError("initial = 'expr' needs s0 and i0", key_path="simulate.s0")
        state = init(model, parse_rate(str(s0)), parse_rate(str(i0)), cells=cells)
    elif initial == "dfe" and perturbation == 0.0:
        state = discrete_dfe(model, cells=cells)
        reference = 0.0
    else:
        eq = _select(model, model.alpha, initial, cfg.option("simulate", "index", 0, int), "simulate")
        state = perturbed_state(model, eq, cells=cells, perturbation=perturbation)
        reference = discrete_level(model, eq, cells=cells)

    report = run(state, cfg.option("simulate", "t_end", 20.0, float),
                 conv_tol=cfg.option("simulate", "conv_tol", None, float), reference=reference,
                 record_every=cfg.option("simulate", "record_every", 1, int))
    summary = _summary(report)
    log_success("[CLI] simulate", summary)
    # stdout carries the CSV when there is no --out
    print(summary, file=sys.stdout if args.out else sys.stderr)
    return pd.DataFrame(report.trajectory, columns=list(SimReport.TRAJECTORY_COLUMNS))


def cmd_phi(cfg: RunConfig, args: argparse.Namespace) -> pd.DataFrame:
    model = _model(cfg)
    w_max = cfg.option("phi", "w_max", model.options.w_scan_max, float)
    points = cfg.option("phi", "points", 201, int)
    ws = np.linspace(0.0, w_max, points)
    values = phi_curve(model, model.alpha, ws)
    log_success("[CLI] phi", f"{points} values at alpha={model.alpha:g}")
    return pd.DataFrame({"W": ws, "phi": values})


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], pd.DataFrame]] = {
    "equilibria": cmd_equilibria,
    "spectrum": cmd_spectrum,
    "branch": cmd_branch,
    "simulate": cmd_simulate,
    "phi": cmd_phi,
}


# -----------------------------------------
# Entry point
# -----------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or YAML run configuration (bare names are looked up in configs/)")
    common.add_argument("--preset", help="named parameter set: choices, plus(X), choices-stab, "
                                         "choices-stab2, choices2, choices3")
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("--svg", help="SVG diagram path (branch)")
    common.add_argument("--alpha", type=float, help="override model.alpha")
    common.add_argument("--alpha-range", help="LO:HI:STEP for branch")
    common.add_argument("--family", help="LO:HI:STEP of plus(X) caps for branch")
    common.add_argument("--threads", type=int, default=0, help="worker threads for branch sweeps")
    common.add_argument("--dump-config", help="write the effective configuration as YAML")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="agepi", description="Age-structured S-I epidemic toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip())
    return parser


def _fail(step: str, err: AgepiError) -> int:
    log_error(step, err)
    print(f"error: {err}", file=sys.stderr)
    return exit_code_for(err)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="[LOG] %(message)s")
    clear_status_log()
    step = f"[CLI] {args.command}"
    try:
        cfg = load_run_config(args.config, preset=args.preset, alpha=args.alpha)
        if args.dump_config:
            dump_config(cfg, args.dump_config)
        write_csv(COMMANDS[args.command](cfg, args), args.out)
    except AgepiError as err:
        return _fail(step, err)
    except (ArithmeticError, ValueError, MemoryError) as err:
        # numpy/scipy failures deep inside a computation
        wrapped = NumericalError(f"{type(err).__name__}: {err}")
        wrapped.__cause__ = err
        return _fail(step, wrapped)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
