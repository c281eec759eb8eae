"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on numerical failure.
Results go to stdout (or ``--output``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from . import density, experiment
from .estimate import FitError, FitOptions, FitResult, fit
from .model import JUMP_FAMILIES, builtin_candidates, builtin_true_model, candidate
from .pic import SelectionError, pic_value, select
from .quasilik import LikelihoodError, ThresholdRule
from .simulate import PathConfig, SimulationError, format_path_csv, read_path_csv, simulate_path

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

NUMERICAL_ERRORS = (
    FitError,
    LikelihoodError,
    SimulationError,
    SelectionError,
    density.QuadratureError,
    density.TailConditionError,
    FloatingPointError,
)

FIT_KEYS = (
    "drift_params",
    "diff_params",
    "jump_params",
    "lambda_hat",
    "h1",
    "h2",
    "pic",
    "converged",
    "n_detected_jumps",
)

CONFIG_HELP = """\
config file keys (flat `key = value`, `#` comments; flags override the file):
  scenarios   comma list of T:h pairs, e.g. 30:0.05, 50:0.025, 100:0.01
  n_rep       replications per scenario
  rho         threshold exponent, inside (3/8, 1/2)
  seed        base seed; replication r of scenario i uses its own stream
  candidates  candidate set name (only `section3`)
  output      file for the tables (stdout when absent)
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage errors are 1 here
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _label(text: str) -> tuple[int, int, int]:
    try:
        d, s, j = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected d,s,j family indices, got {text!r}") from None
    return d, s, j


def _num(v: float) -> str:
    return repr(float(v))


def _vec(v) -> str:
    return ",".join(_num(x) for x in np.atleast_1d(v))


def format_fit(res: FitResult) -> str:
    pic = res.pic if res.pic is not None else math.nan
    vals = {
        "drift_params": _vec(res.drift_params),
        "diff_params": _vec(res.diff_params),
        "jump_params": _vec(res.jump_params),
        "lambda_hat": _num(res.lambda_hat),
        "h1": _num(res.h1_value),
        "h2": _num(res.h2_value),
        "pic": _num(pic),
        "converged": "true" if res.converged else "false",
        "n_detected_jumps": str(res.n_detected_jumps),
    }
    return "".join(f"{k}={vals[k]}\n" for k in FIT_KEYS)


def parse_fit(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, value = line.split("=", 1)
            out[key] = value
    return out


def _threshold_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", type=float, default=0.4, help="threshold exponent (default 0.4)")
    p.add_argument(
        "--threshold-scale", type=float, default=1.0, help="cutoff is scale * h**rho (default 1)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="jdpic",
        description="Jump-diffusion quasi-likelihood and PIC selection.",
        epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a path and write it as t,x CSV")
    p.add_argument("--model", type=_label, default=None, help="d,s,j family indices (default 3,2,2)")
    p.add_argument("--params", type=_floats, default=None, help="stacked drift,diffusion,jump params")
    p.add_argument("--lam", type=float, default=None, help="jump intensity (default 1)")
    p.add_argument("--T", type=float, required=True, help="observation horizon")
    p.add_argument("--h", type=float, required=True, help="sampling step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--substeps", type=int, default=16, help="Euler steps per observation interval")
    p.add_argument("--burn-in", type=float, default=0.0, help="discarded lead-in time")
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--output", help="output file (stdout when absent)")

    p = sub.add_parser("fit", help="fit one candidate to a t,x CSV")
    p.add_argument("path", help="CSV produced by `simulate`")
    p.add_argument("--model", type=_label, default=(3, 2, 2), help="d,s,j family indices")
    _threshold_args(p)
    p.add_argument("--output")

    p = sub.add_parser("select", help="fit all twelve candidates and pick the PIC minimizer")
    p.add_argument("path", help="CSV produced by `simulate`")
    _threshold_args(p)
    p.add_argument("--output")

    p = sub.add_parser(
        "reproduce",
        help="Monte Carlo selection tables",
        epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--n-rep", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--scenarios", help="T:h pairs, e.g. 30:0.05,100:0.01")
    p.add_argument("--candidates")
    p.add_argument("--output")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.add_argument("--joint", action="store_true", help="also report selection over all 12 models")
    p.add_argument("--threads", type=int, default=1, help="worker process cap")
    p.add_argument("--threshold-scale", type=float, default=None)
    p.add_argument("--burn-in", type=float, default=None)

    p = sub.add_parser("certify-density", help="empirical constants for the k-jump density bound")
    p.add_argument("--k", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--h-values", type=_floats, default=(0.1, 0.02, 0.01))
    p.add_argument("--u", type=float, default=0.5, help="exponential tail rate")
    p.add_argument("--zeta", type=float, default=0.9, help="rate shrink factor in (0, 1)")
    p.add_argument("--b", type=float, default=1.0, help="constant diffusion coefficient")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--jump", type=int, default=2, choices=sorted(JUMP_FAMILIES))
    p.add_argument("--jump-params", type=_floats, default=(0.0, 2.0))
    p.add_argument("--output")

    p = sub.add_parser("check-lemma", help="Gaussian-exponential convolution ratio")
    p.add_argument("--a-values", type=_floats, default=(0.1, 0.01, 0.001))
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--z-max", type=float, default=20.0)
    p.add_argument("--n-z", type=int, default=81)
    p.add_argument("--output")
    return parser


def _emit(text: str, path: str | None, stdout: TextIO) -> None:
    if path:
        Path(path).write_text(text)
    else:
        stdout.write(text)


def _cmd_simulate(a, out: TextIO) -> int:
    if a.model is None:
        model, params, lam = builtin_true_model()
    else:
        model = candidate(*a.model)
        params, lam = None, 1.0
    if a.params is not None:
        params = np.asarray(a.params)
    if params is None:
        raise UsageError("--params is required for a non-default --model")
    if a.lam is not None:
        lam = a.lam
    if len(params) != model.dim:
        raise UsageError(f"model {model.name} takes {model.dim} parameters, got {len(params)}")
    cfg = PathConfig.from_horizon(
        a.T, a.h, substeps=a.substeps, burn_in_time=a.burn_in, seed=a.seed, x0=a.x0
    )
    obs = simulate_path(model, params, lam, cfg)
    _emit(format_path_csv(obs), a.output, out)
    return EXIT_OK


def _cmd_fit(a, out: TextIO) -> int:
    obs = read_path_csv(a.path)
    model = candidate(*a.model)
    res = fit(model, obs, ThresholdRule(a.rho, a.threshold_scale), FitOptions())
    for note in res.diagnostics:
        print(f"jdpic fit: {note}", file=sys.stderr)
    if res.converged:
        res = res.with_pic(pic_value(res, model))
    _emit(format_fit(res), a.output, out)
    if not res.converged:
        print("jdpic fit: optimizer did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_select(a, out: TextIO) -> int:
    obs = read_path_csv(a.path)
    cands = builtin_candidates()
    outcome = select(cands, obs, ThresholdRule(a.rho, a.threshold_scale), FitOptions())
    for i, msg in outcome.failures.items():
        print(f"jdpic select: {cands[i].name} excluded: {msg}", file=sys.stderr)
    lines = ["drift,diffusion,jump,dim,pic,chosen"]
    for i, (m, v) in enumerate(zip(cands, outcome.pic_values)):
        d, s, j = m.label
        lines.append(f"{d},{s},{j},{m.dim},{_num(v)},{int(i == outcome.chosen_index)}")
    if outcome.ties_broken:
        print("jdpic select: tie on the minimum broken by dimension", file=sys.stderr)
    _emit("\n".join(lines) + "\n", a.output, out)
    return EXIT_OK


def _cmd_reproduce(a, out: TextIO) -> int:
    values = experiment.read_config_file(a.config) if a.config else {}
    flags = {
        "n_rep": a.n_rep,
        "seed": a.seed,
        "rho": a.rho,
        "scenarios": a.scenarios,
        "candidates": a.candidates,
        "output": a.output,
    }
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    extra = {"joint": a.joint, "workers": max(1, a.threads)}
    if a.threshold_scale is not None:
        extra["threshold_scale"] = a.threshold_scale
    if a.burn_in is not None:
        extra["burn_in_time"] = a.burn_in
    cfg = experiment.config_from_mapping(values, **extra)
    tables = experiment.run_experiment(cfg)
    for t in tables:
        if t.degraded:
            print(
                f"jdpic reproduce: scenario {t.scenario} degraded "
                f"({t.drift_diffusion_failures} / {t.jump_failures} failed fits)",
                file=sys.stderr,
            )
    _emit(experiment.emit_tables(tables, a.format), cfg.output_path, out)
    return EXIT_OK


def _cmd_certify(a, out: TextIO) -> int:
    m = density.ConstCoeffModel(a.b, a.lam, JUMP_FAMILIES[a.jump], a.jump_params)
    cert = density.certify_ktesti_bound(m, a.k, a.h_values, a.u, a.zeta)
    _emit(cert.to_csv(), a.output, out)
    status = "passed" if cert.passed else "FAILED"
    print(
        f"jdpic certify-density: k={cert.k} C={cert.empirical_C:.6g} "
        f"stability={cert.stability_ratio:.4f} grid: {cert.grid_spec} -> {status}",
        file=sys.stderr,
    )
    return EXIT_OK if cert.passed else EXIT_NUMERIC


def _cmd_lemma(a, out: TextIO) -> int:
    z = np.linspace(-a.z_max, a.z_max, a.n_z)
    ratios = density.lemma_ratios(a.a_values, a.u, z)
    lines = ["a,max_ratio"] + [f"{av!r},{_num(r)}" for av, r in zip(a.a_values, ratios.max(axis=1))]
    _emit("\n".join(lines) + "\n", a.output, out)
    print(f"jdpic check-lemma: max ratio {ratios.max():.6g}", file=sys.stderr)
    return EXIT_OK if np.isfinite(ratios).all() else EXIT_NUMERIC


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "select": _cmd_select,
    "reproduce": _cmd_reproduce,
    "certify-density": _cmd_certify,
    "check-lemma": _cmd_lemma,
}


def main(argv: Sequence[str] | None = None, stdout: TextIO | None = None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:  # --help
        return EXIT_OK if err.code in (0, None) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.verb](args, stdout)
    except UsageError as err:
        print(f"jdpic {args.verb}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as err:
        print(f"jdpic {args.verb}: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as err:
        print(f"jdpic {args.verb}: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
