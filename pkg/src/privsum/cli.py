"""Command-line front end: estimate, risk, rate-scan, verify, hard-instance.

Every run is reproducible from its manifest: configuration comes from flags
(optionally overriding a flat ``key = value`` config file), the master seed
is always explicit for risk/rate-scan runs, and numbers are serialized with
17 significant digits so reruns are byte-identical. Output files are
written atomically (temp file then rename), so partial outputs never land.

Exit codes: 0 success, 1 runtime or check failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import __version__, errors
from .channels import (
    laplace_channel,
    run_interactive_protocol,
    verify_ldp_interactive,
    verify_ldp_ni,
)
from .core import PrivacyBudget, ThresholdSpec, sample_categorical, uniform_law
from .estimators import (
    EstimateResult,
    EstimatorKind,
    combined_estimate,
    interactive_estimate,
    plugin_estimate,
    thresholded_estimate,
)
from .experiments import (
    DEFAULT_C_TILDE,
    DistributionSpec,
    ExperimentConfig,
    concentration_check,
    monte_carlo_risk,
    negative_association_check,
    perturbation_family,
    predicted_slope_from_theory,
    rate_scan,
    resolve_distribution,
    separation_check,
    two_point_instance,
)
from .rng import (
    ROLE_CHANNEL,
    ROLE_CHANNEL_SECOND,
    ROLE_COMBINED,
    ROLE_SAMPLE,
    child_seed,
)

CSV_SCHEMA_VERSION = 1
RISK_HEADER = "gamma,K,n,alpha,estimator,trials,seed,true_value,bias,variance,mse,mse_stderr"
SCAN_SUMMARY_HEADER = "fitted_slope,predicted_slope,r_squared"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class RuntimeFailure(Exception):
    """A failure after configuration was accepted; maps to exit code 1."""


def run_phase(fn, *args, **kwargs):
    """Execute computation; contract violations there are runtime, not usage."""
    try:
        return fn(*args, **kwargs)
    except errors.PrivsumError as exc:
        raise RuntimeFailure(str(exc)) from exc


def fmt(x) -> str:
    """Fixed serialization: 17 significant digits for floats, plain ints."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, EstimatorKind):
        return obj.value
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def emit_json(obj) -> None:
    sys.stdout.write(json.dumps(_sanitize(obj), sort_keys=True, indent=2))
    sys.stdout.write("\n")


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".privsum-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(path: str, subcommand: str, config: dict, seed: int,
                   outputs: list[str]) -> None:
    manifest = {
        "tool": "privsum",
        "tool_version": __version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "subcommand": subcommand,
        "config": _sanitize(config),
        "seed": int(seed),
        "outputs": outputs,
    }
    atomic_write(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# config file + flag merging


def read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise errors.PrivsumError(
                        f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise errors.PrivsumError(f"cannot read config file {path}: {exc}") from exc
    return values


def merged_option(args: argparse.Namespace, file_values: dict, name: str, cast,
                  default=None):
    """Flag value if given, else config-file value, else the default."""
    raw = getattr(args, name, None)
    source = "flag"
    if raw is None and name in file_values:
        raw, source = file_values[name], "config"
    if raw is None:
        return default
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise errors.PrivsumError(f"{source} value {name} = {raw!r}: {exc}") from exc


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v != ""]
    except ValueError as exc:
        raise errors.PrivsumError(f"expected comma-separated integers: {exc}") from exc


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v != ""]
    except ValueError as exc:
        raise errors.PrivsumError(f"expected comma-separated reals: {exc}") from exc


def require(value, field: str):
    if value is None:
        raise errors.PrivsumError(f"{field} is required")
    return value


def validate_gamma(gamma) -> float:
    if gamma is None or not math.isfinite(gamma) or gamma <= 0.0:
        raise errors.PrivsumError("gamma must be > 0")
    return float(gamma)


# ---------------------------------------------------------------------------
# shared builders


_DIST_NAMES = {
    "uniform": "uniform",
    "point-mass": "point_mass",
    "point_mass": "point_mass",
    "two-point": "two_point",
    "two_point": "two_point",
    "perturbation-family": "perturbation_family",
    "perturbation_family": "perturbation_family",
    "custom": "custom",
}

_ESTIMATOR_NAMES = {kind.value: kind for kind in EstimatorKind}


def build_distribution(name: str, custom: str | None, c_tilde: float) -> DistributionSpec:
    if name not in _DIST_NAMES:
        raise errors.PrivsumError(
            f"dist must be one of {sorted(set(_DIST_NAMES.values()))}, got {name!r}")
    kind = _DIST_NAMES[name]
    values = None
    if kind == "custom":
        if not custom:
            raise errors.PrivsumError("custom distribution requires custom-p")
        values = tuple(parse_float_list(custom))
    return DistributionSpec(kind=kind, values=values, c_tilde=c_tilde)


def build_estimator(name: str) -> EstimatorKind:
    if name not in _ESTIMATOR_NAMES:
        raise errors.PrivsumError(
            f"estimator must be one of {sorted(_ESTIMATOR_NAMES)}, got {name!r}")
    return _ESTIMATOR_NAMES[name]


def build_experiment_config(args, file_values, *, n: int, K: int, alpha: float,
                            need_trials: bool) -> ExperimentConfig:
    gamma = validate_gamma(merged_option(args, file_values, "gamma", float))
    sigma = merged_option(args, file_values, "sigma", float, 2.0)
    seed = merged_option(args, file_values, "seed", int)
    if seed is None:
        raise errors.PrivsumError("seed is required (runs must be reproducible)")
    dist = merged_option(args, file_values, "dist", str, "uniform")
    custom = merged_option(args, file_values, "custom_p", str)
    c_tilde = merged_option(args, file_values, "c_tilde", float, DEFAULT_C_TILDE)
    estimator = build_estimator(
        merged_option(args, file_values, "estimator", str, "plugin"))
    trials = merged_option(args, file_values, "trials", int)
    if need_trials and trials is None:
        raise errors.PrivsumError("trials is required")
    threshold_c = merged_option(args, file_values, "c", float, 1.0)
    return ExperimentConfig(
        gamma=gamma, K=int(K), n=int(n),
        budget=PrivacyBudget(alpha=float(alpha), sigma=sigma),
        distribution=build_distribution(dist, custom, c_tilde),
        estimator=estimator, trials=trials if trials is not None else 2,
        seed=seed, threshold_c=threshold_c,
    )


def _manifest_config(args, file_values) -> dict:
    merged = dict(file_values)
    for key, value in vars(args).items():
        if key in ("func", "subcommand", "config") or value is None:
            continue
        merged[key] = value
    return merged


# ---------------------------------------------------------------------------
# estimate


def estimate_from_sample(x: np.ndarray, config: ExperimentConfig) -> EstimateResult:
    kind = config.estimator
    budget = config.budget
    g = config.gamma
    if kind is EstimatorKind.PLUG_IN:
        batch = laplace_channel(x, config.K, budget,
                                child_seed(config.seed, ROLE_CHANNEL, 0))
        return plugin_estimate(batch, g)
    if kind is EstimatorKind.THRESHOLDED:
        spec = ThresholdSpec(c=config.threshold_c)
        if g > 1.0:
            half = x.size // 2
            if half < 1:
                raise errors.ZeroSampleSize("thresholded split needs n >= 2")
            b1 = laplace_channel(x[:half], config.K, budget,
                                 child_seed(config.seed, ROLE_CHANNEL, 0))
            b2 = laplace_channel(x[half : 2 * half], config.K, budget,
                                 child_seed(config.seed, ROLE_CHANNEL_SECOND, 0))
            return thresholded_estimate(b1, b2, g, budget, spec)
        batch = laplace_channel(x, config.K, budget,
                                child_seed(config.seed, ROLE_CHANNEL, 0))
        return thresholded_estimate(batch, batch, g, budget, spec)
    if kind is EstimatorKind.INTERACTIVE:
        half = x.size // 2
        if half < 1:
            raise errors.ZeroSampleSize("interactive split needs n >= 2")
        transcript = run_interactive_protocol(
            x[:half], x[half : 2 * half], config.K, budget, g,
            child_seed(config.seed, ROLE_CHANNEL, 0))
        return interactive_estimate(transcript)
    return combined_estimate(x, config.K, g, budget,
                             child_seed(config.seed, ROLE_COMBINED, 0),
                             ThresholdSpec(c=config.threshold_c))


def single_estimate(config: ExperimentConfig) -> EstimateResult:
    """One end-to-end estimate with full release objects and diagnostics."""
    p = resolve_distribution(config)
    x = sample_categorical(p, config.n, child_seed(config.seed, ROLE_SAMPLE, 0))
    return estimate_from_sample(x, config)


def cmd_estimate(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    data_file = merged_option(args, file_values, "data_file", str)
    categories = None
    if data_file:
        try:
            categories = np.loadtxt(data_file, dtype=np.int64, ndmin=1)
        except (OSError, ValueError) as exc:
            raise errors.PrivsumError(f"cannot read data file {data_file}: {exc}") from exc
    n = merged_option(args, file_values, "n", int)
    if n is None and categories is not None:
        n = int(categories.size)
    config = build_experiment_config(
        args, file_values,
        n=require(n, "n"),
        K=require(merged_option(args, file_values, "k", int), "k"),
        alpha=require(merged_option(args, file_values, "alpha", float), "alpha"),
        need_trials=False)
    if categories is not None:
        result = run_phase(estimate_from_sample, categories, config)
    else:
        result = run_phase(single_estimate, config)
    emit_json({
        "value": result.value,
        "kind": result.kind.value,
        "branch": result.diagnostics.get("branch", result.kind.value),
        "n_used": result.n_used,
        "gamma": config.gamma,
        "K": config.K,
        "alpha": config.budget.alpha,
        "seed": config.seed,
        "diagnostics": result.diagnostics,
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# risk / rate-scan


def risk_row(report) -> str:
    cfg = report.config
    cells = [fmt(cfg.gamma), str(cfg.K), str(cfg.n), fmt(cfg.budget.alpha),
             cfg.estimator.value, str(cfg.trials), str(cfg.seed),
             fmt(report.true_value), fmt(report.bias), fmt(report.variance),
             fmt(report.mse), fmt(report.mse_stderr)]
    return ",".join(cells)


def cmd_risk(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    out = require(merged_option(args, file_values, "out", str), "out")
    n_list = parse_int_list(require(merged_option(args, file_values, "n", str), "n"))
    k_list = parse_int_list(require(merged_option(args, file_values, "k", str), "k"))
    a_list = parse_float_list(
        require(merged_option(args, file_values, "alpha", str), "alpha"))
    if not n_list or not k_list or not a_list:
        raise errors.PrivsumError("n, k and alpha each need at least one value")
    base = build_experiment_config(args, file_values, n=n_list[0], K=k_list[0],
                                   alpha=a_list[0], need_trials=True)
    rows = [RISK_HEADER]
    for n in n_list:
        for K in k_list:
            for alpha in a_list:
                cfg = replace(base, n=n, K=K,
                              budget=PrivacyBudget(alpha=alpha, sigma=base.budget.sigma))
                rows.append(risk_row(run_phase(monte_carlo_risk, cfg)))
    atomic_write(out, "\n".join(rows) + "\n")
    write_manifest(out + ".manifest.json", "risk",
                   _manifest_config(args, file_values), base.seed, [out])
    return EXIT_OK


def cmd_rate_scan(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    out = require(merged_option(args, file_values, "out", str), "out")
    axis = require(merged_option(args, file_values, "axis", str), "axis")
    if axis not in ("n", "K", "alpha"):
        raise errors.PrivsumError("axis must be one of n, K, alpha")
    raw_values = require(merged_option(args, file_values, "values", str), "values")
    values = parse_float_list(raw_values) if axis == "alpha" else parse_int_list(raw_values)
    if len(values) < 4:
        raise errors.PrivsumError("values must list at least 4 axis points")
    if max(values) < 8 * min(values):
        raise errors.PrivsumError("axis values must span at least a factor of 8")
    n = merged_option(args, file_values, "n", int, 1024)
    K = merged_option(args, file_values, "k", int, 8)
    alpha = merged_option(args, file_values, "alpha", float, 0.5)
    if axis == "n":
        n = int(values[0])
    elif axis == "K":
        K = int(values[0])
    else:
        alpha = float(values[0])
    base = build_experiment_config(args, file_values, n=n, K=K, alpha=alpha,
                                   need_trials=True)
    predicted = merged_option(args, file_values, "predicted_slope", float)
    if predicted is None:
        predicted = run_phase(predicted_slope_from_theory, base, axis, values)

    result = run_phase(rate_scan, base, axis, values, predicted)
    rows = [RISK_HEADER]
    rows.extend(risk_row(report) for report in result.reports)
    rows.append(SCAN_SUMMARY_HEADER)
    rows.append(",".join([fmt(result.fitted_slope), fmt(result.predicted_slope),
                          fmt(result.r_squared)]))
    atomic_write(out, "\n".join(rows) + "\n")
    write_manifest(out + ".manifest.json", "rate-scan",
                   _manifest_config(args, file_values), base.seed, [out])
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify / hard-instance


def cmd_verify(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    suite = require(merged_option(args, file_values, "suite", str), "suite")
    known = ("ldp", "concentration", "negative-association", "separation", "all")
    if suite not in known:
        raise errors.PrivsumError(f"suite must be one of {known}")
    alpha = merged_option(args, file_values, "alpha", float, 0.5)
    sigma = merged_option(args, file_values, "sigma", float, 2.0)
    gamma = validate_gamma(merged_option(args, file_values, "gamma", float, 2.0))
    K = merged_option(args, file_values, "k", int, 8)
    n = merged_option(args, file_values, "n", int, 1024)
    trials = merged_option(args, file_values, "trials", int, 300)
    samples = merged_option(args, file_values, "samples", int, 1000)
    seed = merged_option(args, file_values, "seed", int, 0)
    budget = PrivacyBudget(alpha=alpha, sigma=sigma)

    lines = []
    if suite in ("ldp", "all"):
        ni = verify_ldp_ni(budget)
        lines.append(("ldp-non-interactive", ni.satisfied,
                      f"worst_log_ratio={fmt(ni.worst_case_log_ratio)} budget={fmt(alpha)}"))
        if gamma > 1.0:
            inter = verify_ldp_interactive(budget, gamma)
            lines.append(("ldp-interactive", inter.satisfied,
                          f"worst_ratio={fmt(inter.details['closed_ratio'])} "
                          f"target={fmt(math.exp(alpha))}"))
        else:
            lines.append(("ldp-interactive", False, "needs gamma > 1"))
    if suite in ("concentration", "all"):
        rep = concentration_check(uniform_law(K), n, budget, trials, seed)
        lines.append((rep.name, rep.passed,
                      f"max_freq={fmt(max(rep.details['frequencies']))} "
                      f"bound={fmt(rep.details['bound'])}"))
    if suite in ("negative-association", "all"):
        rep = negative_association_check(uniform_law(K), n, budget, gamma, trials, seed)
        lines.append((rep.name, rep.passed,
                      f"worst_margin={fmt(rep.details['worst_margin'])}"))
    if suite in ("separation", "all"):
        g_sep = gamma if 0.0 < gamma < 2.0 and gamma != 1.0 else 1.5
        inst = perturbation_family(K, n, budget, g_sep)
        rep = separation_check(inst, g_sep, samples, seed)
        lines.append((rep.name, rep.passed,
                      f"gamma={fmt(g_sep)} min_ratio={fmt(rep.details['min_ratio'])}"))

    for name, passed, detail in lines:
        sys.stdout.write(f"{'PASS' if passed else 'FAIL'} {name}: {detail}\n")
    return EXIT_OK if all(passed for _, passed, _ in lines) else EXIT_RUNTIME


def cmd_hard_instance(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    family = require(merged_option(args, file_values, "family", str), "family")
    gamma = validate_gamma(merged_option(args, file_values, "gamma", float))
    K = require(merged_option(args, file_values, "k", int), "k")
    n = require(merged_option(args, file_values, "n", int), "n")
    alpha = require(merged_option(args, file_values, "alpha", float), "alpha")
    sigma = merged_option(args, file_values, "sigma", float, 2.0)
    budget = PrivacyBudget(alpha=alpha, sigma=sigma)
    if family == "two-point":
        c_tilde = merged_option(args, file_values, "c_tilde", float, DEFAULT_C_TILDE)
        inst = two_point_instance(K, n, budget, gamma, c_tilde)
    elif family == "perturbation":
        inst = perturbation_family(K, n, budget, gamma)
    else:
        raise errors.PrivsumError("family must be two-point or perturbation")
    emit_json({
        "kind": inst.kind,
        "gamma": inst.gamma,
        "K": K,
        "n": inst.n,
        "alpha": inst.alpha,
        "regime": inst.regime,
        "k_tilde": inst.k_tilde,
        "separation": inst.separation,
        "kl_budget": inst.kl_budget,
        "kl_condition_met": inst.kl_condition_met,
        "delta": inst.delta,
        "vectors": [v.entries for v in inst.vectors],
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privsum",
        description="Private power-sum estimation: channels, estimators, risk scans.")
    parser.add_argument("--version", action="version", version=f"privsum {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, *, alpha_is_list=False, with_estimator=True):
        p.add_argument("--config", help="flat key = value config file; flags override")
        p.add_argument("--gamma", type=float)
        p.add_argument("--alpha", type=(str if alpha_is_list else float))
        p.add_argument("--sigma", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--dist", help="uniform | point-mass | two-point | "
                                      "perturbation-family | custom")
        p.add_argument("--custom-p", dest="custom_p",
                       help="comma-separated probabilities for --dist custom")
        p.add_argument("--c-tilde", dest="c_tilde", type=float,
                       help="two-point constant, in (0, 1/(6*sqrt(2))]")
        p.add_argument("--c", type=float, help="threshold constant c >= 1")
        if with_estimator:
            p.add_argument("--estimator",
                           help="plugin | thresholded | interactive | combined")

    p_est = sub.add_parser("estimate", help="one estimate as JSON")
    add_common(p_est)
    p_est.add_argument("--k", type=int)
    p_est.add_argument("--n", type=int)
    p_est.add_argument("--data-file", dest="data_file",
                       help="file of raw categories (one integer per line)")
    p_est.set_defaults(func=cmd_estimate)

    p_risk = sub.add_parser("risk", help="Monte Carlo risk grid as CSV")
    add_common(p_risk, alpha_is_list=True)
    p_risk.add_argument("--k", help="comma-separated alphabet sizes")
    p_risk.add_argument("--n", help="comma-separated sample sizes")
    p_risk.add_argument("--trials", type=int)
    p_risk.add_argument("--out")
    p_risk.set_defaults(func=cmd_risk)

    p_scan = sub.add_parser("rate-scan", help="log-log MSE slope along one axis")
    add_common(p_scan)
    p_scan.add_argument("--k", type=int)
    p_scan.add_argument("--n", type=int)
    p_scan.add_argument("--axis", help="n | K | alpha")
    p_scan.add_argument("--values", help="comma-separated axis values")
    p_scan.add_argument("--predicted-slope", dest="predicted_slope", type=float)
    p_scan.add_argument("--trials", type=int)
    p_scan.add_argument("--out")
    p_scan.set_defaults(func=cmd_rate_scan)

    p_verify = sub.add_parser("verify", help="run a named check suite")
    add_common(p_verify, with_estimator=False)
    p_verify.add_argument("--suite")
    p_verify.add_argument("--k", type=int)
    p_verify.add_argument("--n", type=int)
    p_verify.add_argument("--trials", type=int)
    p_verify.add_argument("--samples", type=int)
    p_verify.set_defaults(func=cmd_verify)

    p_hard = sub.add_parser("hard-instance", help="lower-bound construction as JSON")
    add_common(p_hard, with_estimator=False)
    p_hard.add_argument("--family", help="two-point | perturbation")
    p_hard.add_argument("--k", type=int)
    p_hard.add_argument("--n", type=int)
    p_hard.set_defaults(func=cmd_hard_instance)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except errors.PrivsumError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except RuntimeFailure as exc:
        sys.stderr.write(f"runtime error: {exc}\n")
        return EXIT_RUNTIME
    except Exception as exc:  # unexpected runtime failure
        sys.stderr.write(f"runtime error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
