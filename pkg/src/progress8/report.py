"""Artifact emission: published tables, plot-data files, and run metadata.

Every file is deterministic — fixed column order, fixed sort order, documented
rounding, no timestamps — so identical runs are byte-identical. Published
scores round to two decimals (one for attainment totals) exactly as the
national tables do; analytical files keep full precision via shortest
round-trip float text.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from . import __version__
from .adjustment import MeasureComparison
from .cohort import CoverageReport
from .ingest import format_number, write_csv
from .inference import FunnelData, GoldsteinHealyResult, PairwiseComparison
from .interpret import (
    DispersionRow,
    InterpretationRow,
    NationalSummary,
)
from .multilevel import ShrinkageResult, VarianceComponents
from .pipeline import PipelineResult
from .scoring import SchoolP8
from .trend import PooledScore, StabilityMatrix

__all__ = ["ReportBundle", "emit_reports", "file_digest"]


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _fmt2(value: float | None) -> str:
    return "" if value is None else f"{value:.2f}"


def _fmt1(value: float | None) -> str:
    return "" if value is None else f"{value:.1f}"


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _school_rows(schools: list[SchoolP8]):
    """Published rows: suppressed schools keep their identity but no numbers."""
    for s in sorted(schools, key=lambda x: (x.subgroup_label or "", x.school_id)):
        if s.suppressed:
            yield [s.school_id, s.n, "", "", "", "", 1]
        else:
            yield [
                s.school_id,
                s.n,
                _fmt2(s.score),
                _fmt2(s.ci_low),
                _fmt2(s.ci_high),
                s.banding or "",
                0,
            ]


def write_school_scores(schools: list[SchoolP8], path: str) -> None:
    write_csv(
        path,
        ["school_id", "n", "score", "ci_low", "ci_high", "banding", "suppressed"],
        _school_rows(schools),
    )


def write_adjusted_scores(schools: list[SchoolP8], design_id: str, path: str) -> None:
    rows = ([*row, design_id] for row in _school_rows(schools))
    write_csv(
        path,
        ["school_id", "n", "score", "ci_low", "ci_high", "banding", "suppressed", "design_id"],
        rows,
    )


def write_school_table(result: PipelineResult, path: str) -> None:
    """The full published layout: roll counts, attainment, progress, banding."""
    a8_by_school = {a.school_id: a for a in result.a8_by_school}
    coverage = result.coverage.by_school()
    rows = []
    for s in sorted(result.schools, key=lambda x: x.school_id):
        cov = coverage.get(s.school_id)
        a8 = a8_by_school.get(s.school_id)
        if s.suppressed:
            rows.append([s.school_id, cov.pupils_at_end_ks4 if cov else "", "", s.n, "", "", "", ""])
            continue
        rows.append(
            [
                s.school_id,
                cov.pupils_at_end_ks4 if cov else "",
                _fmt1(a8.mean) if a8 else "",
                s.n,
                _fmt2(s.score),
                _fmt2(s.ci_low),
                _fmt2(s.ci_high),
                s.banding or "",
            ]
        )
    write_csv(
        path,
        [
            "school_id",
            "pupils_end_ks4",
            "attainment8",
            "pupils_included",
            "progress8",
            "ci_low",
            "ci_high",
            "banding",
        ],
        rows,
    )


def write_subgroup_scores(subgroups: list[SchoolP8], path: str) -> None:
    rows = [
        [
            s.subgroup_label or "",
            s.school_id,
            s.n,
            _fmt2(s.score),
            _fmt2(s.ci_low),
            _fmt2(s.ci_high),
            s.banding or "",
            1 if s.unreliable else 0,
        ]
        for s in sorted(subgroups, key=lambda x: (x.subgroup_label or "", x.school_id))
    ]
    write_csv(
        path,
        ["subgroup", "school_id", "n", "score", "ci_low", "ci_high", "banding", "unreliable"],
        rows,
    )


def write_coverage(coverage: CoverageReport, path: str) -> None:
    rows = [
        [
            s.school_id,
            s.pupils_at_end_ks4,
            s.pupils_included,
            format_number(s.coverage_fraction),
        ]
        for s in coverage.schools
    ]
    write_csv(path, ["school_id", "pupils_end_ks4", "pupils_included", "coverage"], rows)


def write_caterpillar(schools: list[SchoolP8], path: str) -> None:
    """Rank-ordered scores with intervals: the caterpillar plot's data."""
    scored = [s for s in schools if s.score is not None and not s.suppressed]
    ordered = sorted(scored, key=lambda s: (-(s.score), s.school_id))
    rows = [
        [rank, s.school_id, format_number(s.score), format_number(s.ci_low), format_number(s.ci_high)]
        for rank, s in enumerate(ordered, start=1)
    ]
    write_csv(path, ["rank", "school_id", "score", "ci_low", "ci_high"], rows)


def write_funnel(funnel: FunnelData, path: str) -> None:
    rows = [
        [n, format_number(lower), format_number(upper), format_number(level)]
        for n, lower, upper, level in funnel.rows
    ]
    write_csv(path, ["n", "lower", "upper", "level"], rows)


def write_shrinkage(shrinkage: ShrinkageResult, path: str) -> None:
    rows = [
        [
            r.school_id,
            r.n,
            format_number(r.raw),
            format_number(r.lam),
            format_number(r.shrunken),
            format_number(r.delta),
        ]
        for r in shrinkage.rows
    ]
    write_csv(path, ["school_id", "n", "raw", "lambda", "shrunken", "delta"], rows)


def write_vpc(components: VarianceComponents, path: str) -> None:
    _write_json(
        path,
        {
            "tau2": components.tau2,
            "sigma2_w": components.sigma2_w,
            "vpc": components.vpc,
            "n0": components.n0,
            "truncated": components.truncated,
        },
    )


def write_pooled(pooled: list[PooledScore], path: str) -> None:
    rows = [
        [
            p.school_id,
            format_number(p.pooled),
            format_number(p.se),
            format_number(p.ci_low),
            format_number(p.ci_high),
            ";".join(p.years_included),
            p.scheme,
        ]
        for p in sorted(pooled, key=lambda x: x.school_id)
    ]
    write_csv(path, ["school_id", "pooled", "se", "ci_low", "ci_high", "years", "scheme"], rows)


def write_stability(matrix: StabilityMatrix, path: str) -> None:
    rows = [
        [c.year_a, c.year_b, format_number(c.r), c.n_common]
        for c in matrix.cells
    ]
    write_csv(path, ["year_a", "year_b", "r", "n_common"], rows)


def write_comparison(comparison: MeasureComparison, path: str) -> None:
    _write_json(
        path,
        {
            "pearson_r": comparison.pearson_r,
            "spearman_rho": comparison.spearman_rho,
            "n_common": comparison.n_common,
            "rank_change_histogram": comparison.rank_change_histogram,
            "moved_at_least": {str(k): v for k, v in comparison.moved_at_least.items()},
            "max_abs_move": comparison.max_abs_move,
        },
    )


def write_pairwise(comparisons: list[PairwiseComparison], path: str) -> None:
    _write_json(
        path,
        {
            "comparisons": [
                {
                    "school_a": c.school_a,
                    "school_b": c.school_b,
                    "diff": c.diff,
                    "se_diff": c.se_diff,
                    "z": c.z_stat,
                    "p_value": c.p_value,
                    "significant_at_level": c.significant_at_level,
                    "prob_a_exceeds_b": c.prob_a_exceeds_b,
                    "level": c.level,
                    "family_size": c.family_size,
                }
                for c in comparisons
            ]
        },
    )


def write_goldstein_healy(gh: GoldsteinHealyResult, path: str) -> None:
    rows = [
        [sid, format_number(score), format_number(half), format_number(lo),
         format_number(hi), format_number(gh.k)]
        for sid, score, half, lo, hi in gh.rows
    ]
    write_csv(path, ["school_id", "score", "half_width", "low", "high", "k"], rows)


def write_interpretation(rows: list[InterpretationRow], path: str) -> None:
    gains = sorted(rows[0].months) if rows else []
    header = ["school_id", "score", "effect_size", "percentile"]
    for g in gains:
        header += [f"months_gain_{g}", f"months_gain_{g}_rounded"]
    out = []
    for r in rows:
        row = [
            r.school_id,
            format_number(r.score),
            format_number(r.effect_size),
            format_number(r.percentile),
        ]
        for g in gains:
            row += [format_number(r.months[g].months_exact), r.months[g].months_rounded]
        out.append(row)
    write_csv(path, header, out)


def write_dispersion(rows: list[DispersionRow], path: str) -> None:
    out = [
        [
            r.school_id,
            r.n,
            format_number(r.within_sd),
            format_number(r.frac_below_low),
            format_number(r.frac_above_high),
        ]
        for r in rows
    ]
    write_csv(path, ["school_id", "n", "within_sd", "frac_below_low", "frac_above_high"], out)


def write_national_summary(summary: NationalSummary, path: str) -> None:
    _write_json(
        path,
        {
            "n_pupils": summary.n_pupils,
            "n_schools": summary.n_schools,
            "mean_attainment8": summary.mean_a8,
            "sigma": summary.sigma,
            "vpc": summary.vpc,
            "banding_shares": summary.banding_shares,
            "counterfactual_uplift": summary.counterfactual_uplift,
            "counterfactual_mean_attainment8": summary.counterfactual_mean_a8,
            "capped_fraction": summary.capped_fraction,
        },
    )


@dataclass
class ReportBundle:
    """Everything a report run may carry; unset pieces are simply not emitted."""

    result: PipelineResult
    subgroups: list[SchoolP8] | None = None
    adjusted: list[SchoolP8] | None = None
    adjusted_design_id: str | None = None
    comparison: MeasureComparison | None = None
    shrinkage: ShrinkageResult | None = None
    components: VarianceComponents | None = None
    pooled: list[PooledScore] | None = None
    stability: StabilityMatrix | None = None
    funnel: FunnelData | None = None
    pairwise: list[PairwiseComparison] | None = None
    goldstein_healy: GoldsteinHealyResult | None = None
    interpretation: list[InterpretationRow] | None = None
    dispersion: list[DispersionRow] | None = None
    summary: NationalSummary | None = None
    truth: dict | None = None
    input_paths: dict[str, str] = field(default_factory=dict)
    extra_metadata: dict = field(default_factory=dict)


def emit_reports(
    bundle: ReportBundle,
    out_dir: str,
    subcommand: str = "report",
    render_figures: bool = True,
) -> dict[str, str]:
    """Write every artifact present in the bundle; returns name → path.

    run_metadata.json records the package version, conventions, input digests
    and convention caveats — enough to reproduce the run byte-for-byte.
    """
    os.makedirs(out_dir, exist_ok=True)
    result = bundle.result
    paths: dict[str, str] = {}

    def target(name: str) -> str:
        paths[name] = os.path.join(out_dir, name)
        return paths[name]

    write_school_scores(result.schools, target("school_scores.csv"))
    write_school_table(result, target("school_table.csv"))
    write_coverage(result.coverage, target("coverage.csv"))
    write_caterpillar(result.schools, target("caterpillar.csv"))
    if bundle.subgroups is not None:
        write_subgroup_scores(bundle.subgroups, target("subgroup_scores.csv"))
    if bundle.adjusted is not None:
        write_adjusted_scores(
            bundle.adjusted, bundle.adjusted_design_id or "", target("adjusted_scores.csv")
        )
    if bundle.comparison is not None:
        write_comparison(bundle.comparison, target("comparison.json"))
    if bundle.shrinkage is not None:
        write_shrinkage(bundle.shrinkage, target("shrinkage.csv"))
    if bundle.components is not None:
        write_vpc(bundle.components, target("vpc.json"))
    if bundle.pooled is not None:
        write_pooled(bundle.pooled, target("pooled_scores.csv"))
    if bundle.stability is not None:
        write_stability(bundle.stability, target("stability.csv"))
    if bundle.funnel is not None:
        write_funnel(bundle.funnel, target("funnel.csv"))
    if bundle.pairwise is not None:
        write_pairwise(bundle.pairwise, target("pairwise.json"))
    if bundle.goldstein_healy is not None:
        write_goldstein_healy(bundle.goldstein_healy, target("goldstein_healy.csv"))
    if bundle.interpretation is not None:
        write_interpretation(bundle.interpretation, target("months.csv"))
    if bundle.dispersion is not None:
        write_dispersion(bundle.dispersion, target("dispersion.csv"))
    if bundle.summary is not None:
        write_national_summary(bundle.summary, target("national_summary.json"))
    if bundle.truth is not None:
        _write_json(target("truth.json"), bundle.truth)

    if render_figures:
        from . import figures

        for name, path in figures.render_all(bundle, out_dir).items():
            paths[name] = path

    metadata = {
        "version": __version__,
        "subcommand": subcommand,
        "year_label": result.cohort.year_label,
        "slot_config": result.slot_config.name,
        "conventions": result.conventions.as_dict(),
        "cap": {
            "requested": str(result.cap_diagnostics.requested),
            "multiplier": result.cap_diagnostics.multiplier,
            "capped_fraction": result.cap_diagnostics.capped_fraction,
            "note": "cap multiplier auto-calibrated to ≈1% national capped fraction; "
            "sigma computed after capping",
        },
        "national": {
            "sigma": result.national.sigma,
            "mean": result.national.mean,
            "N": result.national.N,
        },
        "ks2_range": [result.intervals.bounds[0], result.intervals.bounds[-1]],
        "inputs": {
            name: file_digest(path) for name, path in sorted(bundle.input_paths.items())
        },
        "outputs": sorted(paths),
        "warnings": result.warnings,
    }
    metadata.update(bundle.extra_metadata)
    meta_path = os.path.join(out_dir, "run_metadata.json")
    _write_json(meta_path, metadata)
    paths["run_metadata.json"] = meta_path
    return paths
