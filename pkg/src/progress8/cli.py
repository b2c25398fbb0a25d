"""Command-line front end.

Every subcommand reads the same configuration (defaults < config file <
flags), writes its artifacts under one output directory, and records the
conventions used in run_metadata.json. Exit codes: 0 success, 1 data or
validation failure, 2 usage error (argparse's convention).
"""

from __future__ import annotations

import argparse
import csv
import sys

from . import __version__
from .adjustment import DESIGN_PRESETS, adjusted_p8, compare_measures, fit_ols
from .attainment import SLOT_PRESETS, school_attainment8
from .cohort import CohortError
from .config import (
    ConfigError,
    RunConfig,
    build_config,
    build_partition,
    parse_config_file,
)
from .distributions import norm_ppf
from .ingest import format_number, load_cohort, write_cohort, write_csv
from .inference import funnel_limits, goldstein_healy_intervals, pairwise_compare
from .interpret import dispersion_report, interpretation_rows, national_summary
from .mobility import mobility_weighted_p8
from .multilevel import (
    compare_single_vs_multilevel,
    estimate_components,
    multilevel_effects,
    shrink_scores,
)
from .pipeline import Conventions, PipelineResult, run_pipeline
from .report import ReportBundle, emit_reports, file_digest
from .scoring import SchoolP8, subgroup_p8
from .synth import GeneratorSpec, generate_cohort
from .trend import YearScore, pool_panel, stability_correlations

SUBCOMMANDS = (
    "validate",
    "attainment8",
    "progress8",
    "adjust",
    "multilevel",
    "compare",
    "trend",
    "mobility",
    "interpret",
    "simulate",
    "report",
)


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--pupils", help="pupils.csv path")
    parser.add_argument("--qualifications", help="qualifications.csv path")
    parser.add_argument("--enrollments", help="enrollments.csv path")
    parser.add_argument("--catalog", help="subject_catalog.csv path")
    parser.add_argument("--year-label", dest="year_label")
    parser.add_argument("--pag-table", dest="pag_table", help="pag_table.csv path")
    parser.add_argument("--slot-preset", dest="slot_preset", choices=sorted(SLOT_PRESETS))
    parser.add_argument("--sigma-source", dest="sigma_source")
    parser.add_argument("--multiplier", dest="multiplier")
    parser.add_argument("--level", dest="level", type=float)
    parser.add_argument("--cap", dest="cap", help="'auto', 'none', or SDs below group mean")
    parser.add_argument(
        "--suppression-threshold", dest="suppression_threshold", type=float
    )
    parser.add_argument("--subgroups", dest="subgroups", help="comma list: fsm,eal,sen,gender")
    parser.add_argument("--out", dest="out_dir", help="output directory (or $P8_OUT_DIR)")
    parser.add_argument("--no-figures", dest="figures", action="store_false", default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else None
    flag_keys = (
        "pupils", "qualifications", "enrollments", "catalog", "year_label",
        "pag_table", "slot_preset", "sigma_source", "multiplier", "level",
        "cap", "suppression_threshold", "subgroups", "out_dir", "figures",
        "design", "thresholds", "scheme", "decay", "seed",
    )
    flags = {k: getattr(args, k) for k in flag_keys if hasattr(args, k)}
    return build_config(file_values, flags)


def _load(config: RunConfig):
    for name in ("pupils", "qualifications", "enrollments", "catalog"):
        if not getattr(config, name):
            raise ConfigError(f"missing required input path: {name}")
    return load_cohort(
        config.pupils,
        config.qualifications,
        config.enrollments,
        config.catalog,
        year_label=config.year_label,
        ks2_range=config.ks2_range(),
    )


def _conventions(config: RunConfig) -> Conventions:
    return Conventions(
        sigma_source=config.sigma_source,
        multiplier=config.multiplier,
        level=config.level,
        cap_multiplier=config.cap_value(),
        suppression_threshold=config.suppression_threshold,
    )


def _run(config: RunConfig) -> tuple[PipelineResult, object]:
    cohort, report = _load(config)
    result = run_pipeline(
        cohort,
        slot_config=SLOT_PRESETS[config.slot_preset],
        intervals=config.intervals(),
        conventions=_conventions(config),
    )
    return result, report


def _input_paths(config: RunConfig) -> dict[str, str]:
    return {
        name: getattr(config, name)
        for name in ("pupils", "qualifications", "enrollments", "catalog")
        if getattr(config, name)
    }


def _subgroups(result: PipelineResult, config: RunConfig):
    names = config.subgroup_list()
    if not names:
        return None
    rows = []
    for name in names:
        rows.extend(
            subgroup_p8(
                result.cohort,
                result.pupil_scores,
                build_partition(name),
                result.national,
                roster=result.roster,
                sigma_source=config.sigma_source,
                multiplier=config.multiplier,
                level=config.level,
            )
        )
    return rows


def _emit(bundle: ReportBundle, config: RunConfig, subcommand: str) -> dict[str, str]:
    render = config.figures if config.figures is not None else True
    paths = emit_reports(
        bundle, config.resolved_out_dir(), subcommand=subcommand, render_figures=render
    )
    print(f"{subcommand}: wrote {len(paths)} files to {config.resolved_out_dir()}")
    return paths


def cmd_validate(args) -> int:
    config = _config_from_args(args)
    cohort, report = _load(config)
    for name in sorted(report.rows_presented):
        print(
            f"{name}: {report.rows_ingested[name]}/{report.rows_presented[name]} rows ingested"
        )
    for error in report.errors:
        print(f"  {error.file}:{error.line}: {error.reason}")
    for issue in report.dropped_pupils:
        print(f"  pupil {issue.pupil_id}: {issue.reason}")
    print(f"pupils in cohort: {len(cohort.pupils)}")
    return 0 if report.ok() else 1


def cmd_attainment8(args) -> int:
    config = _config_from_args(args)
    result, _ = _run(config)
    out_dir = config.resolved_out_dir()
    import os

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "attainment8.csv")
    rows = [
        [a.school_id, a.n, a.published()]
        for a in result.a8_by_school
    ]
    write_csv(path, ["school_id", "n", "attainment8"], rows)
    print(f"attainment8: {len(rows)} schools -> {path}")
    return 0


def cmd_progress8(args) -> int:
    config = _config_from_args(args)
    result, _ = _run(config)
    bundle = ReportBundle(
        result=result,
        subgroups=_subgroups(result, config),
        input_paths=_input_paths(config),
    )
    _emit(bundle, config, "progress8")
    return 0


def cmd_adjust(args) -> int:
    config = _config_from_args(args)
    result, _ = _run(config)
    design = DESIGN_PRESETS[config.design]
    fit = fit_ols(result.cohort, result.a8_results, design, result.intervals)
    adjusted, _, _, _ = adjusted_p8(
        fit,
        result.roster,
        cap_multiplier=config.cap_value(),
        sigma_source=config.sigma_source,
        multiplier=config.multiplier,
        level=config.level,
    )
    comparison = compare_measures(result.schools, adjusted, config.threshold_list())
    bundle = ReportBundle(
        result=result,
        adjusted=adjusted,
        adjusted_design_id=design.design_id,
        comparison=comparison,
        input_paths=_input_paths(config),
        extra_metadata={"design": design.design_id, "fit_warnings": fit.warnings},
    )
    _emit(bundle, config, "adjust")
    print(
        f"adjust[{design.design_id}]: r={comparison.pearson_r:.3f} "
        f"rho={comparison.spearman_rho:.3f} over {comparison.n_common} schools"
    )
    return 0


def cmd_multilevel(args) -> int:
    config = _config_from_args(args)
    result, _ = _run(config)
    components = estimate_components(result.pupil_scores, result.roster)
    shrinkage = shrink_scores(result.schools, components)
    multi = multilevel_effects(
        result.cohort, result.a8_results, intervals=result.intervals, roster=result.roster
    )
    intake = _school_mean_ks2(result)
    deltas = compare_single_vs_multilevel(result.schools, multi, intake)
    bundle = ReportBundle(
        result=result,
        shrinkage=shrinkage,
        components=components,
        input_paths=_input_paths(config),
        extra_metadata={
            "multilevel": {
                "delta_vs_intake_slope": deltas.slope,
                "delta_vs_intake_correlation": deltas.correlation,
            }
        },
    )
    paths = _emit(bundle, config, "multilevel")
    import os

    delta_path = os.path.join(config.resolved_out_dir(), "multilevel_deltas.csv")
    write_csv(
        delta_path,
        ["school_id", "mean_ks2", "single", "multilevel", "delta"],
        [
            [r.school_id, format_number(r.mean_ks2), format_number(r.single_score),
             format_number(r.multi_effect), format_number(r.delta)]
            for r in deltas.rows
        ],
    )
    paths["multilevel_deltas.csv"] = delta_path
    print(f"multilevel: vpc={components.vpc:.3f} tau2={components.tau2:.4f}")
    return 0


def _school_mean_ks2(result: PipelineResult) -> dict[str, float]:
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for pupil in result.cohort.pupils:
        grade = pupil.mean_fine_grade()
        if grade is None:
            continue
        school = result.roster[pupil.pupil_id]
        sums[school] = sums.get(school, 0.0) + grade
        counts[school] = counts.get(school, 0) + 1
    return {s: sums[s] / counts[s] for s in sums}


def read_school_scores(path: str, level: float = 0.95) -> list[SchoolP8]:
    """Read an emitted school_scores.csv back; SEs recovered from CI width."""
    z = norm_ppf(0.5 * (1.0 + level))
    schools = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            if row.get("suppressed") == "1" or not row.get("score"):
                continue
            ci_low = float(row["ci_low"]) if row.get("ci_low") else None
            ci_high = float(row["ci_high"]) if row.get("ci_high") else None
            se = (ci_high - ci_low) / (2 * z) if ci_low is not None else None
            schools.append(
                SchoolP8(
                    school_id=row["school_id"],
                    score=float(row["score"]),
                    n=int(row["n"]),
                    se=se,
                    ci_low=ci_low,
                    ci_high=ci_high,
                    banding=row.get("banding") or None,
                )
            )
    return schools


def cmd_compare(args) -> int:
    config = _config_from_args(args)
    a = read_school_scores(args.a)
    b = read_school_scores(args.b)
    comparison = compare_measures(a, b, config.threshold_list())
    import os

    out_dir = config.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    from .report import write_comparison

    path = os.path.join(out_dir, "comparison.json")
    write_comparison(comparison, path)
    print(
        f"compare: r={comparison.pearson_r:.3f} rho={comparison.spearman_rho:.3f} "
        f"n={comparison.n_common} -> {path}"
    )
    return 0


def cmd_trend(args) -> int:
    config = _config_from_args(args)
    panel: list[YearScore] = []
    for item in args.scores:
        if "=" not in item:
            raise ConfigError(f"--scores expects YEAR=path, got {item!r}")
        year, path = item.split("=", 1)
        for s in read_school_scores(path, config.level):
            if s.se is None or s.se <= 0:
                continue
            panel.append(YearScore(s.school_id, year, s.score, s.se, s.n))
    if not panel:
        raise ConfigError("no usable scores in the supplied panels")
    pooled = pool_panel(panel, scheme=config.scheme, decay=config.decay, level=config.level)
    import os

    out_dir = config.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    from .report import write_pooled, write_stability

    pooled_path = os.path.join(out_dir, "pooled_scores.csv")
    write_pooled(pooled, pooled_path)
    years = {y.year_label for y in panel}
    if len(years) >= 2:
        stability = stability_correlations(panel)
        write_stability(stability, os.path.join(out_dir, "stability.csv"))
    print(f"trend: pooled {len(pooled)} schools over {len(years)} years -> {pooled_path}")
    return 0


def cmd_mobility(args) -> int:
    config = _config_from_args(args)
    result, _ = _run(config)
    schools, warnings = mobility_weighted_p8(
        result.pupil_scores,
        result.cohort,
        national=result.national,
        multiplier=config.multiplier,
        level=config.level,
    )
    import os

    out_dir = config.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "mobility_scores.csv")
    rows = [
        [
            s.school_id,
            s.n,
            format_number(s.effective_n),
            f"{s.score:.2f}",
            f"{s.ci_low:.2f}",
            f"{s.ci_high:.2f}",
            s.banding or "",
        ]
        for s in schools
    ]
    write_csv(
        path,
        ["school_id", "n", "effective_n", "score", "ci_low", "ci_high", "banding"],
        rows,
    )
    for w in warnings:
        print(f"  warning: {w}", file=sys.stderr)
    print(f"mobility: {len(rows)} schools -> {path}")
    return 0


def cmd_interpret(args) -> int:
    config = _config_from_args(args)
    result, _ = _run(config)
    included = [s.pupil_id for s in result.pupil_scores]
    a8_totals = {pid: result.a8_results[pid].total for pid in included}
    import math

    values = list(a8_totals.values())
    mean_a8 = sum(values) / len(values)
    sd_a8 = math.sqrt(sum((v - mean_a8) ** 2 for v in values) / (len(values) - 1))
    per_subject_sd = sd_a8 / 10.0
    rows = interpretation_rows(result.schools, per_subject_sd, config.gain_list())
    dispersion = dispersion_report(result.pupil_scores, result.roster)
    components = None
    try:
        components = estimate_components(result.pupil_scores, result.roster)
    except ValueError:
        pass
    summary = national_summary(
        result.pupil_scores,
        result.schools,
        a8_totals,
        sigma=result.national.sigma,
        vpc=components.vpc if components else None,
        capped_fraction=result.cap_diagnostics.capped_fraction,
    )
    sizes = sorted({s.n for s in result.schools if s.n > 0})
    funnel = funnel_limits(
        result.national.sigma, sizes, config.funnel_level_list()
    ) if sizes else None
    gh = None
    with_se = [s for s in result.schools if s.se is not None]
    if len(with_se) >= 2:
        gh = goldstein_healy_intervals(with_se, config.level)
    bundle = ReportBundle(
        result=result,
        interpretation=rows,
        dispersion=dispersion,
        summary=summary,
        funnel=funnel,
        goldstein_healy=gh,
        components=components,
        input_paths=_input_paths(config),
        extra_metadata={"per_subject_a8_sd": per_subject_sd},
    )
    _emit(bundle, config, "interpret")
    return 0


def cmd_simulate(args) -> int:
    config = _config_from_args(args)
    spec = GeneratorSpec(
        seed=config.seed,
        n_schools=args.schools,
        pupils_per_school=args.pupils_per_school,
        tau2=args.tau2,
        sigma2_w=args.sigma2_w,
        effect_intake_corr=args.intake_corr,
        ks2_school_sd=args.school_sd,
        reliability=args.reliability,
        selective_share=args.selective_share,
        secondary_modern_share=args.secondary_modern_share,
        mobility_rate=args.mobility_rate,
        rho_effect=args.rho_effect,
        year_label=config.year_label,
        covariate_effects=(
            (("fsm_flag", args.fsm_effect),) if args.fsm_effect else ()
        ),
    )
    cohort, truth = generate_cohort(spec)
    import os

    out_dir = config.resolved_out_dir()
    paths = write_cohort(cohort, out_dir)
    truth_path = os.path.join(out_dir, "truth.json")
    import json

    with open(truth_path, "w", encoding="utf-8", newline="") as handle:
        json.dump(truth.to_json_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    digests = {name: file_digest(path) for name, path in sorted(paths.items())}
    for name, digest in digests.items():
        print(f"{name}: {digest}")
    print(f"simulate: {len(cohort.pupils)} pupils in {spec.n_schools} schools -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    config = _config_from_args(args)
    result, _ = _run(config)
    design = DESIGN_PRESETS[config.design]
    fit = fit_ols(result.cohort, result.a8_results, design, result.intervals)
    adjusted, _, _, _ = adjusted_p8(
        fit,
        result.roster,
        cap_multiplier=config.cap_value(),
        sigma_source=config.sigma_source,
        multiplier=config.multiplier,
        level=config.level,
    )
    comparison = compare_measures(result.schools, adjusted, config.threshold_list())
    components = estimate_components(result.pupil_scores, result.roster)
    shrinkage = shrink_scores(result.schools, components)
    included = [s.pupil_id for s in result.pupil_scores]
    a8_totals = {pid: result.a8_results[pid].total for pid in included}
    import math

    values = list(a8_totals.values())
    mean_a8 = sum(values) / len(values)
    sd_a8 = math.sqrt(sum((v - mean_a8) ** 2 for v in values) / (len(values) - 1))
    rows = interpretation_rows(result.schools, sd_a8 / 10.0, config.gain_list())
    dispersion = dispersion_report(result.pupil_scores, result.roster)
    summary = national_summary(
        result.pupil_scores,
        result.schools,
        a8_totals,
        sigma=result.national.sigma,
        vpc=components.vpc,
        capped_fraction=result.cap_diagnostics.capped_fraction,
    )
    sizes = sorted({s.n for s in result.schools if s.n > 0})
    funnel = funnel_limits(result.national.sigma, sizes, config.funnel_level_list())
    with_se = [s for s in result.schools if s.se is not None]
    gh = goldstein_healy_intervals(with_se, config.level) if len(with_se) >= 2 else None
    pairwise = []
    by_id = {s.school_id: s for s in with_se}
    for pair in args.pair or []:
        names = pair.split(",")
        if len(names) != 2 or names[0] not in by_id or names[1] not in by_id:
            raise ConfigError(f"--pair expects two known school ids, got {pair!r}")
        pairwise.append(
            pairwise_compare(by_id[names[0]], by_id[names[1]], config.level, len(with_se))
        )
    bundle = ReportBundle(
        result=result,
        subgroups=_subgroups(result, config),
        adjusted=adjusted,
        adjusted_design_id=design.design_id,
        comparison=comparison,
        shrinkage=shrinkage,
        components=components,
        interpretation=rows,
        dispersion=dispersion,
        summary=summary,
        funnel=funnel,
        goldstein_healy=gh,
        pairwise=pairwise or None,
        input_paths=_input_paths(config),
    )
    _emit(bundle, config, "report")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p8",
        description="School value-added analytics: attainment and progress "
        "measures, adjustments, uncertainty, and synthetic verification.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    for name, handler, help_text in (
        ("validate", cmd_validate, "check input files and report every rejected row"),
        ("attainment8", cmd_attainment8, "per-school eight-slot attainment means"),
        ("progress8", cmd_progress8, "full value-added pipeline and published tables"),
        ("adjust", cmd_adjust, "covariate-adjusted scores and measure comparison"),
        ("multilevel", cmd_multilevel, "variance components, shrinkage, random intercepts"),
        ("mobility", cmd_mobility, "enrollment-time-weighted school scores"),
        ("interpret", cmd_interpret, "effect sizes, months, percentiles, funnel data"),
        ("report", cmd_report, "every artifact in one run"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_data_flags(p)
        if name in ("adjust", "report"):
            p.add_argument("--design", dest="design", choices=sorted(DESIGN_PRESETS))
            p.add_argument("--thresholds", dest="thresholds")
        if name == "report":
            p.add_argument(
                "--pair", action="append",
                help="school pair 'A,B' for an exact comparison (repeatable)",
            )
        p.set_defaults(handler=handler)

    p = sub.add_parser("compare", help="correlate two emitted score tables")
    p.add_argument("--a", required=True, help="first school_scores.csv")
    p.add_argument("--b", required=True, help="second school_scores.csv")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--thresholds", dest="thresholds")
    p.add_argument("--out", dest="out_dir")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("trend", help="multi-year pooling and stability")
    p.add_argument(
        "--scores", action="append", required=True,
        help="YEAR=school_scores.csv (repeatable)",
    )
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--scheme", dest="scheme")
    p.add_argument("--decay", dest="decay", type=float)
    p.add_argument("--out", dest="out_dir")
    p.set_defaults(handler=cmd_trend)

    p = sub.add_parser("simulate", help="generate a synthetic cohort with known truth")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", dest="seed", type=int)
    p.add_argument("--schools", type=int, default=50)
    p.add_argument("--pupils-per-school", type=int, default=150)
    p.add_argument("--tau2", type=float, default=0.2236)
    p.add_argument("--sigma2-w", dest="sigma2_w", type=float, default=1.64)
    p.add_argument("--reliability", type=float, default=1.0)
    p.add_argument("--intake-corr", dest="intake_corr", type=float, default=0.0)
    p.add_argument("--school-sd", dest="school_sd", type=float, default=0.0)
    p.add_argument("--selective-share", dest="selective_share", type=float, default=0.0)
    p.add_argument(
        "--secondary-modern-share", dest="secondary_modern_share", type=float, default=0.0
    )
    p.add_argument("--mobility-rate", dest="mobility_rate", type=float, default=0.0)
    p.add_argument("--rho-effect", dest="rho_effect", type=float, default=1.0)
    p.add_argument("--fsm-effect", dest="fsm_effect", type=float, default=0.0)
    p.add_argument("--year-label", dest="year_label")
    p.add_argument("--out", dest="out_dir")
    p.set_defaults(handler=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (CohortError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
