"""Command-line interface: ``partvar estimate | simulate | designs | golden``.

Exit codes: 0 success, 2 validation error, 3 numerical degeneracy that
defeats every requested estimator.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

from . import _kernels
from . import estimators as est
from . import io
from .designs import (
    DESIGN_GRAMMAR,
    PoissonDesign,
    dependence_matrices,
    format_design,
    parse_design,
    theoretical_inclusion,
)
from .errors import EmptySampleError, EnumerationTooLargeError, FileFormatError, InvalidConfigurationError
from .model import DependenceMatrix
from .verify import (
    DEFAULT_VARIANT,
    bias_report,
    covariance_identity_check,
    exact_unbiasedness_check,
    golden_values,
    run_monte_carlo,
)

EXIT_OK, EXIT_VALIDATION, EXIT_DEGENERATE = 0, 2, 3

ZERO_C_WARNING = (
    "no dependence matrix given: using C = 0, which asserts that particles are selected independently"
)


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        self.code = code
        super().__init__(msg)


def _parse_xs(text: str) -> tuple[float, ...]:
    try:
        xs = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise CliError(EXIT_VALIDATION, f"--x expects comma-separated positive numbers, got {text!r}") from None
    if not xs or any(not (math.isfinite(x) and x > 0) for x in xs):
        raise CliError(EXIT_VALIDATION, f"--x expects comma-separated positive numbers, got {text!r}")
    return xs


def _emit(report: dict, out: str | None) -> None:
    text = io.dumps_report(report)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _estimate_section(report: est.EstimateReport, clamp: bool) -> dict:
    section = {}
    for rec in report.estimates:
        if rec.error is not None:
            section[rec.name] = {"error": rec.error}
        elif clamp and rec.negative_flag:
            section[rec.name] = {"value": 0.0, "negative_flag": True, "clamped": True, "raw": rec.value}
        else:
            section[rec.name] = {"value": rec.value, "negative_flag": rec.negative_flag}
    return section


def estimate_from_inputs(inputs: dict) -> est.EstimateReport:
    """Re-run estimate_all from the ``inputs`` section of an estimate report."""
    sample = io.sample_from_echo(inputs["sample"])
    C = io.matrix_from_echo(inputs["cmatrix"])
    pop = io.population_from_echo(inputs["population"]) if inputs.get("population") else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return est.estimate_all(sample, C, tuple(inputs["xs"]), population=pop)


def cmd_estimate(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sample = io.read_sample(args.sample)
        pop = io.read_population(args.population) if args.population else None
    notes = [str(w.message) for w in caught]
    digests = {"sample": io.file_digest(args.sample)}
    if pop is not None:
        io.check_same_kinds(sample, pop, "sample vs population")
        digests["population"] = io.file_digest(args.population)
    if args.cmatrix:
        C = io.read_cmatrix(args.cmatrix, sample.kind_ids)
        digests["cmatrix"] = io.file_digest(args.cmatrix)
    else:
        C = DependenceMatrix.zeros(sample.n_kinds)
        notes.append(ZERO_C_WARNING)
    xs = _parse_xs(args.x)
    for n in notes:
        _warn(n)
    try:
        rep = est.estimate_all(sample, C, xs, population=pop)
    except EmptySampleError as exc:
        raise CliError(EXIT_DEGENERATE, str(exc)) from None

    report = io.report_header("estimate")
    report["input_digests"] = digests
    report["seed"] = None
    report["inputs"] = {
        "sample": io.echo_kinds(sample, "count_sample", sample.counts),
        "cmatrix": io.matrix_echo(C),
        "xs": list(xs),
        "population": io.echo_kinds(pop, "count_batch", pop.batch_counts) if pop is not None else None,
    }
    report["theta_hat"] = rep.theta_hat
    report["sample_mass"] = rep.sample_mass
    report["var_m_hat"] = rep.var_m_hat
    report["rsd_hat"] = rep.rsd_hat
    report["matrix_variant"] = rep.matrix_variant
    report["clamp_negative"] = bool(args.clamp_negative)
    report["estimates"] = _estimate_section(rep, args.clamp_negative)
    report["warnings"] = notes + list(rep.warnings)
    _emit(report, args.out)
    if all(r.error is not None for r in rep.estimates):
        print("error: every estimator failed on this input", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def _design_and_population(args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pop = io.read_population(args.population)
    for w in caught:
        _warn(str(w.message))
    try:
        design = parse_design(args.design)
    except InvalidConfigurationError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from None
    return design, pop


def _bias_dict(b) -> dict:
    return {
        "n_records": b.n_records,
        "n_empty": b.n_empty,
        "theta_mean": b.theta_mean,
        "batch_conc": b.batch_conc,
        "var_theta": b.var_theta,
        "var_m_sample": b.var_m_sample,
        "advisory_m_sample_skewness": b.skewness_m,
        "advisory_m_sample_excess_kurtosis": b.excess_kurtosis_m,
        "estimators": {
            e.name: {
                "target": e.target,
                "mean": e.mean,
                "mc_se": e.mc_se,
                "relative_bias": e.relative_bias,
                "z": e.z,
                "negative_count": e.negative_count,
                "error_count": e.error_count,
            }
            for e in b.estimators
        },
    }


def cmd_simulate(args) -> int:
    design, pop = _design_and_population(args)
    if args.reps < 1:
        raise CliError(EXIT_VALIDATION, "--reps must be >= 1")
    if args.seed < 0:
        raise CliError(EXIT_VALIDATION, "--seed must be >= 0")
    xs = _parse_xs(args.x)
    digests = {"population": io.file_digest(args.population)}
    if args.cmatrix_mode == "file":
        if not args.cmatrix:
            raise CliError(EXIT_VALIDATION, "--cmatrix-mode file requires --cmatrix PATH")
        C_taylor = C_ht = io.read_cmatrix(args.cmatrix, pop.kind_ids)
        digests["cmatrix"] = io.file_digest(args.cmatrix)
    else:
        C_ht, C_taylor = dependence_matrices(design, pop)

    if args.exact:
        # refuse oversized enumeration before spending time on Monte Carlo
        exact = {}
        for name in DEFAULT_VARIANT:
            for variant in ("cprime", "eq1"):
                r = exact_unbiasedness_check(design, pop, name, variant)
                exact[f"{name}/{variant}"] = {
                    "default_variant": variant == DEFAULT_VARIANT[name],
                    "expected_estimate": r.expected_estimate,
                    "exact_variance": r.exact_variance,
                    "relative_bias": r.relative_bias,
                    "absolute_bias": r.absolute_bias,
                    "p_empty": r.p_empty,
                    "error": r.error,
                }

    records = run_monte_carlo(design, pop, C_taylor, args.reps, args.seed, C_ht=C_ht, xs=xs, workers=args.workers)
    report = io.report_header("simulate")
    report["input_digests"] = digests
    report["seed"] = args.seed
    report["reps"] = args.reps
    report["design"] = format_design(design)
    report["kernel_backend"] = _kernels.BACKEND
    report["inputs"] = {
        "population": io.echo_kinds(pop, "count_batch", pop.batch_counts),
        "cmatrix_mode": args.cmatrix_mode,
        "cmatrix_taylor": io.matrix_echo(C_taylor),
        "cmatrix_ht": io.matrix_echo(C_ht),
        "xs": list(xs),
    }
    try:
        report["bias_report"] = _bias_dict(bias_report(records, pop))
    except InvalidConfigurationError as exc:
        report["bias_report"] = {"error": str(exc)}
    try:
        cc = covariance_identity_check(records, C_taylor, pop, design)
        report["covariance_identity_check"] = {
            "status": cc.status,
            "reps": cc.reps,
            "max_abs_z": cc.max_abs_z,
            "z": cc.z,
            "empirical": cc.empirical,
            "predicted": cc.predicted,
        }
    except InvalidConfigurationError as exc:
        report["covariance_identity_check"] = {"status": "error", "error": str(exc)}
    if args.exact:
        report["exact_unbiasedness"] = exact
    _emit(report, args.out)
    return EXIT_OK


def cmd_designs(args) -> int:
    design, pop = _design_and_population(args)
    table = theoretical_inclusion(design, pop)
    cprime, c = dependence_matrices(design, pop)
    report = io.report_header("designs")
    report["input_digests"] = {"population": io.file_digest(args.population)}
    report["design"] = format_design(design)
    report["kind_ids"] = list(pop.kind_ids)
    if isinstance(design, PoissonDesign):
        report["rates"] = table.rates
        report["kappa"] = None
        report["kappa2"] = None
    else:
        report["kappa"] = table.kappa
        report["kappa2"] = table.kappa2
    report["cprime"] = cprime.values
    report["c"] = c.values
    _emit(report, args.out)
    return EXIT_OK


def cmd_golden(args) -> int:
    text = json.dumps(golden_values(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="partvar", description="Variance estimators for particulate material samples.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="evaluate every estimator on one sample")
    e.add_argument("--sample", required=True, help="CSV with header kind,mass_g,conc,count_sample")
    e.add_argument("--cmatrix", help="dense or triplet CSV of C_ij (default: zero matrix)")
    e.add_argument("--x", default="0.01,0.05", help="hybrid parameters (default 0.01,0.05)")
    e.add_argument("--population", help="CSV with header kind,mass_g,conc,count_batch; enables HT_FINITE")
    e.add_argument("--clamp-negative", action="store_true", help="report negative estimates as 0, keeping the raw value")
    e.add_argument("--out", help="write the report here instead of stdout")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="Monte Carlo bias study for a sampling design", epilog=DESIGN_GRAMMAR)
    s.add_argument("--population", required=True)
    s.add_argument("--design", required=True, help=DESIGN_GRAMMAR)
    s.add_argument("--reps", type=int, default=10000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--cmatrix-mode", choices=("theory", "file"), default="theory")
    s.add_argument("--cmatrix")
    s.add_argument("--x", default="0.01,0.05")
    s.add_argument("--exact", action="store_true", help="add exact expectations by enumeration")
    s.add_argument("--workers", type=int, default=1, help="threads; results do not depend on this")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("designs", help="print inclusion probabilities and dependence matrices", epilog=DESIGN_GRAMMAR)
    d.add_argument("--population", required=True)
    d.add_argument("--design", required=True, help=DESIGN_GRAMMAR)
    d.add_argument("--out")
    d.set_defaults(func=cmd_designs)

    g = sub.add_parser("golden", help="regenerate enumeration-oracle golden values")
    g.add_argument("--out")
    g.set_defaults(func=cmd_golden)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except EnumerationTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileFormatError, InvalidConfigurationError) as exc:
        msg = str(exc)
        if "design" in msg and DESIGN_GRAMMAR not in msg:
            msg += f"; {DESIGN_GRAMMAR}"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except EmptySampleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
