"""Least-squares engine for covariate-adjusted value-added scores.

The baseline model is the 34 prior-attainment indicators with no intercept;
adjustment designs extend it with background covariates, optional pairwise
interactions, and optionally KS1. Fitting uses a pivoted orthogonal
factorization so rank-deficient columns are pruned deterministically instead
of poisoning the solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.stats import rankdata

from .cohort import CohortDataset, PupilRecord, default_inclusion
from .attainment import Attainment8Result
from .scoring import (
    NUM_GROUPS,
    CapDiagnostics,
    NationalStats,
    PagIntervals,
    PupilP8,
    SchoolP8,
    apply_caps,
    finalize_schools,
    national_stats,
    school_p8,
)

__all__ = [
    "DesignSpec",
    "FitResult",
    "MeasureComparison",
    "PAG_ONLY",
    "BACKGROUND",
    "BACKGROUND_INTERACTIONS",
    "DESIGN_PRESETS",
    "COVARIATE_KINDS",
    "fit_ols",
    "adjusted_pupil_scores",
    "adjusted_p8",
    "compare_measures",
    "intake_overlap",
]

# How each background field enters the design matrix. Booleans are 0/1
# numerics so their coefficients read directly as gaps (e.g. an FSM penalty).
COVARIATE_KINDS: dict[str, str] = {
    "gender": "categorical",
    "ethnicity_code": "categorical",
    "eal_flag": "boolean",
    "sen_flag": "boolean",
    "fsm_flag": "boolean",
    "deprivation_decile": "numeric",
    "ks1_score": "numeric",
    "month_of_birth": "numeric",
}

CONDITION_WARN_THRESHOLD = 1e8


@dataclass(frozen=True)
class DesignSpec:
    """An adjustment design: which covariates extend the baseline indicators."""

    design_id: str
    covariates: tuple[str, ...] = ()
    interactions: tuple[tuple[str, str], ...] = ()
    include_ks1: bool = False

    def __post_init__(self):
        fields = list(self.covariates) + [f for pair in self.interactions for f in pair]
        if self.include_ks1:
            fields.append("ks1_score")
        for name in fields:
            if name not in COVARIATE_KINDS:
                raise ValueError(f"unknown covariate field {name!r}")
        if len(set(self.covariates)) != len(self.covariates):
            raise ValueError("duplicate covariates in design")

    def all_fields(self) -> tuple[str, ...]:
        out = list(self.covariates)
        if self.include_ks1 and "ks1_score" not in out:
            out.append("ks1_score")
        return tuple(out)


PAG_ONLY = DesignSpec("pag_only")
# The conventional background-adjustment list: age (via birth month), gender,
# ethnicity, language, SEN, FSM, and neighborhood deprivation. KS1 is off by
# default; adding it buys little once KS2 is in the baseline.
BACKGROUND = DesignSpec(
    "background",
    covariates=(
        "month_of_birth",
        "gender",
        "ethnicity_code",
        "eal_flag",
        "sen_flag",
        "fsm_flag",
        "deprivation_decile",
    ),
)
BACKGROUND_INTERACTIONS = DesignSpec(
    "background_interactions",
    covariates=BACKGROUND.covariates,
    interactions=(("ethnicity_code", "fsm_flag"),),
)
DESIGN_PRESETS = {
    d.design_id: d for d in (PAG_ONLY, BACKGROUND, BACKGROUND_INTERACTIONS)
}


@dataclass
class FitResult:
    design_id: str
    pupil_ids: list[str]
    pag_indices: np.ndarray
    coefficients: dict[str, float]
    predictions: np.ndarray
    residuals: np.ndarray
    columns_pruned: list[str]
    condition_number: float
    warnings: list[str] = field(default_factory=list)


def _field_value(pupil: PupilRecord, name: str):
    return getattr(pupil.background, name)


def _expand_covariate(
    name: str, pupils: Sequence[PupilRecord], warnings: list[str]
) -> list[tuple[str, np.ndarray]]:
    """Columns for one covariate.

    Categorical missing becomes an explicit "unknown" level; the reference
    level (dropped) is the most frequent. Numeric/boolean missing is
    mean-imputed with a companion missingness-indicator column so no pupil
    drops out of the adjusted measure.
    """
    kind = COVARIATE_KINDS[name]
    values = [_field_value(p, name) for p in pupils]
    n_missing = sum(1 for v in values if v is None)
    if n_missing == len(values):
        raise ValueError(f"covariate {name} is missing for every pupil")
    if kind == "categorical":
        levels = ["unknown" if v is None else str(v) for v in values]
        counts: dict[str, int] = {}
        for level in levels:
            counts[level] = counts.get(level, 0) + 1
        reference = max(sorted(counts), key=lambda l: counts[l])
        columns = []
        for level in sorted(counts):
            if level == reference:
                continue
            col = np.fromiter((1.0 if l == level else 0.0 for l in levels), float)
            columns.append((f"{name}[{level}]", col))
        return columns
    numeric = np.array(
        [float(v) if v is not None else np.nan for v in values], dtype=float
    )
    columns = []
    if n_missing:
        observed_mean = float(np.nanmean(numeric))
        indicator = np.isnan(numeric).astype(float)
        numeric = np.where(np.isnan(numeric), observed_mean, numeric)
        columns.append((name, numeric))
        columns.append((f"{name}_missing", indicator))
        warnings.append(f"{name}: {n_missing} missing values mean-imputed")
    else:
        columns.append((name, numeric))
    return columns


def _assemble(
    cohort: CohortDataset,
    a8_results: dict[str, Attainment8Result],
    design: DesignSpec,
    intervals: PagIntervals,
    inclusion: Callable[[PupilRecord], bool],
):
    pupils = [
        p
        for p in cohort.pupils
        if inclusion(p) and p.pupil_id in a8_results and p.mean_fine_grade() is not None
    ]
    if not pupils:
        raise ValueError("no pupils available to fit")
    y = np.array([a8_results[p.pupil_id].total for p in pupils], dtype=float)
    pag = np.array([intervals.assign(p.mean_fine_grade()) for p in pupils], dtype=int)

    labels: list[str] = []
    columns: list[np.ndarray] = []
    for k in range(1, NUM_GROUPS + 1):
        labels.append(f"pag_{k}")
        columns.append((pag == k).astype(float))

    warnings: list[str] = []
    expanded: dict[str, list[tuple[str, np.ndarray]]] = {}
    for name in design.all_fields():
        expanded[name] = _expand_covariate(name, pupils, warnings)
        for label, col in expanded[name]:
            labels.append(label)
            columns.append(col)
    for a, b in design.interactions:
        cols_a = expanded.get(a) or _expand_covariate(a, pupils, warnings)
        cols_b = expanded.get(b) or _expand_covariate(b, pupils, warnings)
        for la, ca in cols_a:
            for lb, cb in cols_b:
                labels.append(f"{la}*{lb}")
                columns.append(ca * cb)

    X = np.column_stack(columns)
    return pupils, y, pag, X, labels, warnings


def fit_ols(
    cohort: CohortDataset,
    a8_results: dict[str, Attainment8Result],
    design: DesignSpec,
    intervals: PagIntervals,
    inclusion: Callable[[PupilRecord], bool] = default_inclusion,
) -> FitResult:
    """No-intercept least squares of Attainment 8 on the design's columns.

    Pivoted QR detects rank; columns beyond the numerical rank (and all-zero
    columns, e.g. indicators for empty prior-attainment groups) are pruned
    with a warning and report a zero coefficient.
    """
    pupils, y, pag, X, labels, warnings = _assemble(
        cohort, a8_results, design, intervals, inclusion
    )
    norms = np.linalg.norm(X, axis=0)
    nonzero = norms > 0
    pruned = [labels[j] for j in range(len(labels)) if not nonzero[j]]
    keep_idx = np.flatnonzero(nonzero)
    Xk = X[:, keep_idx]

    q, r, pivot = sla.qr(Xk, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(Xk.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    retained_local = np.sort(pivot[:rank])
    dropped_local = np.sort(pivot[rank:])
    pruned += [labels[keep_idx[j]] for j in dropped_local]
    final_idx = keep_idx[retained_local]
    Xf = X[:, final_idx]

    beta, *_ = np.linalg.lstsq(Xf, y, rcond=None)
    predictions = Xf @ beta
    residuals = y - predictions

    condition = float(diag[0] / diag[rank - 1]) if rank else math.inf
    if condition > CONDITION_WARN_THRESHOLD:
        warnings.append(f"design matrix ill-conditioned (estimate {condition:.3g})")
    if pruned:
        warnings.append(f"pruned {len(pruned)} rank-deficient or empty columns")

    coefficients = {label: 0.0 for label in labels}
    for j, value in zip(final_idx, beta):
        coefficients[labels[j]] = float(value)
    return FitResult(
        design_id=design.design_id,
        pupil_ids=[p.pupil_id for p in pupils],
        pag_indices=pag,
        coefficients=coefficients,
        predictions=predictions,
        residuals=residuals,
        columns_pruned=pruned,
        condition_number=condition,
        warnings=warnings,
    )


def adjusted_pupil_scores(fit: FitResult) -> list[PupilP8]:
    """Adjusted pupil score = residual / 10, on the fit's pupil set."""
    return [
        PupilP8(pid, int(k), r / 10.0, r / 10.0)
        for pid, k, r in zip(fit.pupil_ids, fit.pag_indices, fit.residuals)
    ]


def adjusted_p8(
    fit: FitResult,
    roster: dict[str, str],
    cap_multiplier: float | str | None = "auto",
    sigma_source: str = "national",
    multiplier: str = "z",
    level: float = 0.95,
) -> tuple[list[SchoolP8], list[PupilP8], NationalStats, CapDiagnostics]:
    """School-level adjusted scores with the standard capping and CI chain."""
    raw = adjusted_pupil_scores(fit)
    capped, diagnostics = apply_caps(raw, cap_multiplier)
    stats = national_stats(capped)
    schools = school_p8(capped, roster)
    done = finalize_schools(
        schools, stats, capped, roster,
        sigma_source=sigma_source, multiplier=multiplier, level=level,
    )
    return done, capped, stats, diagnostics


@dataclass
class MeasureComparison:
    pearson_r: float
    spearman_rho: float
    n_common: int
    rank_change_histogram: dict[str, int]
    moved_at_least: dict[int, int]
    max_abs_move: float


def compare_measures(
    a: list[SchoolP8],
    b: list[SchoolP8],
    thresholds: Sequence[int] = (500, 1000),
) -> MeasureComparison:
    """Score correlation and league-table rank movement between two measures.

    Ranks are descending (1 = best) with average ties; the histogram bins
    absolute rank moves at the configured thresholds and carries total mass
    equal to the number of schools present in both measures.
    """
    score_a = {s.school_id: s.score for s in a if s.score is not None}
    score_b = {s.school_id: s.score for s in b if s.score is not None}
    common = sorted(set(score_a) & set(score_b))
    if len(common) < 2:
        raise ValueError(f"need ≥2 schools in common, got {len(common)}")
    x = np.array([score_a[s] for s in common])
    y = np.array([score_b[s] for s in common])
    pearson = float(np.corrcoef(x, y)[0, 1])
    # Descending ranks: rank 1 is the top score.
    rank_x = rankdata(-x, method="average")
    rank_y = rankdata(-y, method="average")
    spearman = float(np.corrcoef(rank_x, rank_y)[0, 1])
    moves = np.abs(rank_y - rank_x)

    thresholds = sorted(thresholds)
    edges = [0] + list(thresholds)
    histogram: dict[str, int] = {}
    for lo, hi in zip(edges, edges[1:]):
        histogram[f"[{lo},{hi})"] = int(np.sum((moves >= lo) & (moves < hi)))
    histogram[f"[{edges[-1]},inf)"] = int(np.sum(moves >= edges[-1]))
    moved = {t: int(np.sum(moves >= t)) for t in thresholds}
    return MeasureComparison(
        pearson_r=pearson,
        spearman_rho=spearman,
        n_common=len(common),
        rank_change_histogram=histogram,
        moved_at_least=moved,
        max_abs_move=float(moves.max()),
    )


def intake_overlap(
    school_a_pags: dict[int, int],
    school_b_pags: dict[int, int],
    threshold: float = 0.2,
) -> tuple[float, bool]:
    """Σ_k min(share_a(k), share_b(k)) over prior-attainment groups.

    Returns the overlap coefficient in [0, 1] and a flag raised when it falls
    below the threshold — a warning that two schools' intakes barely overlap
    and their scores compare pupils no school actually shares.
    """
    total_a = sum(school_a_pags.values())
    total_b = sum(school_b_pags.values())
    if total_a == 0 or total_b == 0:
        raise ValueError("each school needs at least one included pupil")
    overlap = 0.0
    for k in set(school_a_pags) | set(school_b_pags):
        overlap += min(
            school_a_pags.get(k, 0) / total_a, school_b_pags.get(k, 0) / total_b
        )
    return overlap, overlap < threshold
