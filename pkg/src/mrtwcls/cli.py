"""Command line interface.

Two subcommands: ``estimate`` fits the weighted-and-centered analysis
described by a YAML config to a CSV panel and writes a per-contrast
report; ``simulate`` runs replication experiments (named presets or an
explicit generative config plus analysis list) and writes the summary
table. Both emit a CSV and an aligned text rendering with no timestamps,
so identical inputs produce byte-identical outputs.

Exit codes: 0 success, 1 estimation failure (a structured error record
is printed and written), 2 config parse failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, EstimationError
from .features import FeatureSpec, build_design
from .panel import ingest_csv
from .sim import (
    GeeAnalysis,
    GenerativeConfig,
    WclsAnalysis,
    _probability_model,
    run_preset,
    run_replications,
)
from .wcls import compute_weights, fit_wcls, infer, sandwich_variance, small_sample_correct

PRESET_NAMES = ("table1", "table2", "table3", "appendixD")


def _load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path) as handle:
            parsed = yaml.safe_load(handle)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(parsed, dict):
        raise ConfigError(f"config file {path} must hold a mapping at top level")
    return parsed


def _require(config, key, context):
    if key not in config:
        raise ConfigError(f"{context} config is missing required key {key!r}")
    return config[key]


def _probability_tuple(entry, side, context):
    """Translate a YAML probability-model block into the declarative
    tuple used by the analysis layer, plus its feature list."""
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ConfigError(f"{context}: {side} block must be a mapping with a 'kind'")
    kind = entry["kind"]
    if kind == "constant-estimated":
        return ("constant-estimated",), ()
    if kind == "constant-fixed":
        if "value" not in entry:
            raise ConfigError(f"{context}: constant-fixed {side} needs 'value'")
        return ("constant-fixed", float(entry["value"])), ()
    if kind == "known-column":
        if "column" not in entry:
            raise ConfigError(f"{context}: known-column {side} needs 'column'")
        return ("known-column", str(entry["column"])), ()
    if kind == "logistic":
        features = entry.get("features")
        if not features:
            raise ConfigError(f"{context}: logistic {side} needs a 'features' list")
        return ("logistic", side), tuple(str(f) for f in features)
    raise ConfigError(f"{context}: unknown {side} kind {kind!r}")


def _feature_spec(config, numerator_features, denominator_features, context):
    try:
        return FeatureSpec(
            effect=tuple(str(f) for f in _require(config, "effect", context)),
            working=tuple(str(f) for f in _require(config, "working", context)),
            numerator=numerator_features,
            denominator=denominator_features,
            lag=int(config.get("lag", 1)),
            initial_values=config.get("initial_values"),
            allow_unguarded_numerator=bool(config.get("allow_unguarded_numerator", False)),
        )
    except EstimationError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def _fmt(value, digits=4):
    if value is None:
        return "--"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.{digits}f}"


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def _write_csv(path, headers, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(headers)
        for row in rows:
            writer.writerow([_csv_cell(cell) for cell in row])


def _aligned(headers, rows):
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(line[j]) for line in cells) for j in range(len(headers))]
    out = []
    for index, line in enumerate(cells):
        out.append("  ".join(cell.rjust(width) for cell, width in zip(line, widths)))
        if index == 0:
            out.append("  ".join("-" * width for width in widths))
    return "\n".join(out) + "\n"


def run_estimate(config_path, out_dir, seed=None, one_sided=False):
    """Run one analysis config against its CSV; returns the fit."""
    del seed  # estimation is deterministic; accepted for interface symmetry
    config = _load_config(config_path)
    context = "estimate"
    numerator_tuple, numerator_features = _probability_tuple(
        config.get("numerator", {"kind": "constant-estimated"}), "numerator", context)
    denominator_tuple, denominator_features = _probability_tuple(
        _require(config, "denominator", context), "denominator", context)
    spec = _feature_spec(config, numerator_features, denominator_features, context)
    alpha0 = float(config.get("alpha0", 0.05))

    input_path = Path(str(_require(config, "input", context)))
    if not input_path.is_absolute():
        input_path = Path(config_path).parent / input_path
    if not input_path.is_file():
        raise ConfigError(f"{context}: input CSV {input_path} does not exist")

    contrasts = []
    for index, entry in enumerate(config.get("contrasts", [])):
        if not isinstance(entry, dict) or ("vector" not in entry) == ("matrix" not in entry):
            raise ConfigError(
                f"{context}: contrast {index} needs exactly one of 'vector' or 'matrix'"
            )
        name = str(entry.get("name", f"contrast{index + 1}"))
        value = entry.get("vector", entry.get("matrix"))
        contrasts.append((name, np.asarray(value, dtype=np.float64)))
    if not contrasts:
        contrasts = [
            (f"effect:{expr.source}", np.eye(spec.p)[j])
            for j, expr in enumerate(spec.effect)
        ]

    data = ingest_csv(input_path, config.get("schema"))
    design = build_design(data, spec)
    numerator, numerator_report = _probability_model(design, numerator_tuple)
    denominator, denominator_report = _probability_model(design, denominator_tuple)
    weights = compute_weights(design, numerator, denominator)
    fit = fit_wcls(design, weights)
    fit = sandwich_variance(fit, denominator_report, numerator_report)
    if bool(config.get("small_sample", True)):
        fit = small_sample_correct(fit)

    results = [(name, infer(fit, contrast, alpha0=alpha0, one_sided=one_sided))
               for name, contrast in contrasts]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    headers = ("contrast", "estimate", "std_error", "df",
               "ci_lower", "ci_upper", "p_value", "test_kind")
    csv_rows = []
    text_rows = []
    for name, res in results:
        if res.test_kind == "t":
            lo, hi = res.confidence_interval
            csv_rows.append((name, float(res.estimate), float(res.std_error),
                             res.degrees_of_freedom, lo, hi, res.p_value, "t"))
            text_rows.append((name, _fmt(res.estimate), _fmt(res.std_error),
                              res.degrees_of_freedom, _fmt(lo), _fmt(hi),
                              _fmt(res.p_value), "t"))
        else:
            joint = ";".join(format(v, ".10g") for v in np.atleast_1d(res.estimate))
            df_text = f"{res.degrees_of_freedom[0]};{res.degrees_of_freedom[1]}"
            csv_rows.append((name, joint, None, df_text, None, None,
                             res.p_value, "hotelling"))
            text_rows.append((name, joint, "--", df_text, "--", "--",
                              _fmt(res.p_value), "hotelling"))
    _write_csv(out / "estimate.csv", headers, csv_rows)

    lines = [_aligned(headers, text_rows)]
    lines.append("\nnuisance models\n")
    for label, model, report in (("numerator", numerator, numerator_report),
                                 ("denominator", denominator, denominator_report)):
        lines.append(f"  {label}: {model!r}\n")
        if report is not None:
            lines.append(f"    converged={report.converged} "
                         f"iterations={report.iterations}\n")
    n, T, k, p, q = fit.dims
    available = design.avail > 0
    w = fit.weights[available]
    lines.append("\ndiagnostics\n")
    lines.append(f"  n={n} T={T} k={k} p={p} q={q} rows={len(design)}\n")
    lines.append(f"  weights on available rows: min={w.min():.6g} "
                 f"mean={w.mean():.6g} max={w.max():.6g}\n")
    lines.append(f"  condition number={fit.condition_number:.6g}\n")
    lines.append(f"  corrections: weight_adjusted={fit.corrections['weight_adjusted']!r} "
                 f"small_sample={fit.corrections['small_sample']}\n")
    (out / "estimate.txt").write_text("".join(lines))
    return fit


def _parse_analysis(entry, index):
    context = f"analysis {index + 1}"
    if not isinstance(entry, dict):
        raise ConfigError(f"{context}: must be a mapping")
    kind = entry.get("kind", "wcls")
    name = str(entry.get("name", f"{kind}{index + 1}"))
    contrast = entry.get("contrast")
    base = {
        "effect": entry.get("effect", ["1"]),
        "working": entry.get("working", ["1", "s"]),
        "initial_values": entry.get("initial_values"),
        "allow_unguarded_numerator": entry.get("allow_unguarded_numerator", False),
        "lag": entry.get("lag", 1),
    }
    if kind == "wcls":
        numerator_tuple, numerator_features = _probability_tuple(
            entry.get("numerator", {"kind": "constant-estimated"}), "numerator", context)
        denominator_tuple, denominator_features = _probability_tuple(
            entry.get("denominator", {"kind": "known-column", "column": "prob"}),
            "denominator", context)
        spec = _feature_spec(base, numerator_features, denominator_features, context)
        return WclsAnalysis(name, spec, numerator=numerator_tuple,
                            denominator=denominator_tuple, contrast=contrast)
    if kind == "gee":
        spec = _feature_spec(base, (), (), context)
        correlation = entry.get("correlation", "independence")
        if correlation not in ("independence", "ar1_estimated", "ar1_fixed"):
            raise ConfigError(f"{context}: unknown correlation {correlation!r}")
        decay = entry.get("decay")
        if correlation == "ar1_fixed" and decay is None:
            raise ConfigError(f"{context}: ar1_fixed needs 'decay'")
        centered = entry.get("centered_value")
        return GeeAnalysis(name, spec, correlation=correlation,
                           fixed_decay=decay, centered_value=centered,
                           contrast=contrast)
    raise ConfigError(f"{context}: unknown analysis kind {kind!r}")


def run_simulate(config_path, out_dir, seed=None, threads=None, replicates=None):
    """Run a replication experiment; returns the list of reports."""
    config = _load_config(config_path)
    replicates = int(replicates if replicates is not None
                     else config.get("replicates", 1000))
    threads = int(threads if threads is not None else config.get("threads", 1))
    seed = seed if seed is not None else config.get("seed")

    if "preset" in config:
        preset = str(config["preset"])
        if preset not in PRESET_NAMES:
            raise ConfigError(
                f"unknown preset {preset!r}; choose one of {', '.join(PRESET_NAMES)}"
            )
        overrides = config.get("overrides") or {}
        if not isinstance(overrides, dict):
            raise ConfigError("preset 'overrides' must be a mapping")
        unknown = set(overrides) - set(GenerativeConfig.FIELDS)
        if unknown:
            raise ConfigError(f"unknown override fields {sorted(unknown)}")
        reports = run_preset(preset, replicates=replicates, seed=seed,
                             threads=threads, overrides=overrides)
    else:
        if "generative" not in config or "analyses" not in config:
            raise ConfigError(
                "simulate config needs either 'preset' or both 'generative' and 'analyses'"
            )
        generative = config["generative"]
        if not isinstance(generative, dict):
            raise ConfigError("'generative' must be a mapping")
        unknown = set(generative) - set(GenerativeConfig.FIELDS)
        if unknown:
            raise ConfigError(f"unknown generative fields {sorted(unknown)}")
        try:
            gen_config = GenerativeConfig(seed=seed, **{
                k: v for k, v in generative.items() if k != "seed"})
        except EstimationError as exc:
            raise ConfigError(str(exc)) from exc
        analyses = [_parse_analysis(entry, index)
                    for index, entry in enumerate(config["analyses"])]
        if not analyses:
            raise ConfigError("'analyses' must be non-empty")
        reports = [run_replications(gen_config, analyses, replicates,
                                    threads=threads)]
        reports[0].label = str(config.get("label", "experiment"))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    headers = ("block", "analysis", "mean", "sd", "se", "rmse", "cp",
               "failures", "replicates", "truth")
    csv_rows = []
    text_rows = []
    any_success = False
    for report in reports:
        for row in report.rows:
            if row["mean"] is not None:
                any_success = True
            csv_rows.append((report.label, row["analysis"], row["mean"],
                             row["sd"], row["se"], row["rmse"], row["cp"],
                             row["failures"], report.replicates,
                             report.truth.average))
            text_rows.append((report.label, row["analysis"], _fmt(row["mean"]),
                              _fmt(row["sd"]), _fmt(row["se"]), _fmt(row["rmse"]),
                              _fmt(row["cp"], 3), row["failures"],
                              report.replicates, _fmt(report.truth.average)))
    _write_csv(out / "simulate.csv", headers, csv_rows)
    (out / "simulate.txt").write_text(_aligned(headers, text_rows))
    if not any_success:
        raise EstimationError("every replicate failed in every analysis")
    return reports


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mrtwcls",
        description="Moderated treatment-effect estimation for longitudinal "
                    "micro-randomized designs, plus a simulation harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit one analysis config to a CSV panel")
    est.add_argument("--config", required=True, help="YAML analysis config")
    est.add_argument("--out", required=True, help="output directory")
    est.add_argument("--seed", type=int, default=None,
                     help="accepted for symmetry; estimation is deterministic")
    est.add_argument("--one-sided", action="store_true",
                     help="use the 1 - alpha0 quantile for interval half-widths")

    simulate = sub.add_parser("simulate", help="run a replication experiment")
    simulate.add_argument("--config", required=True, help="YAML experiment config")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--seed", type=int, default=None, help="root RNG seed")
    simulate.add_argument("--threads", type=int, default=None,
                          help="worker threads for replicates")
    simulate.add_argument("--replicates", type=int, default=None,
                          help="replicate count override")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            run_estimate(args.config, args.out, seed=args.seed,
                         one_sided=args.one_sided)
        else:
            run_simulate(args.config, args.out, seed=args.seed,
                         threads=args.threads, replicates=args.replicates)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        record = f"error: {type(exc).__name__}: {exc}"
        print(record, file=sys.stderr)
        try:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.txt").write_text(record + "\n")
        except OSError:
            pass
        return 1
    return 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
