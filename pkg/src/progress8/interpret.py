"""Translating scores into effect sizes, months of progress, percentiles, and
national summary quantities.

A school score is in grades-per-subject units; dividing by the national
per-subject SD of pupil attainment gives a conventional effect size, and the
months-of-progress transform (12 × ES / assumed annual gain) turns that into
the familiar tutoring-style claim — which is why the annual-gain assumption is
a required, visible parameter rather than a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "MonthsProgress",
    "InterpretationRow",
    "DispersionRow",
    "NationalSummary",
    "effect_size",
    "months_progress",
    "percentile_rank",
    "interpretation_rows",
    "dispersion_report",
    "national_summary",
]


def effect_size(score: float, national_sd_per_subject: float) -> float:
    """Score expressed in national pupil-attainment SD units."""
    if national_sd_per_subject <= 0:
        raise ValueError(f"SD must be positive, got {national_sd_per_subject}")
    return score / national_sd_per_subject


@dataclass(frozen=True)
class MonthsProgress:
    months_exact: float
    months_rounded: int
    annual_gain_sd: float


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def months_progress(es: float, annual_gain_sd: float) -> MonthsProgress:
    """12 × ES / annual gain, exact and rounded to the nearest whole month.

    The annual-gain assumption drives everything: the same effect size reads
    as 3 months under a 1.0-SD year and 8 months under a 0.4-SD year.
    """
    if annual_gain_sd <= 0:
        raise ValueError(f"annual gain must be positive, got {annual_gain_sd}")
    exact = 12.0 * es / annual_gain_sd
    return MonthsProgress(exact, _round_half_away(exact), annual_gain_sd)


def percentile_rank(scores: Sequence[float], target: float) -> float:
    """Mid-rank percentile of target within scores: 100·(below + ½·equal)/N."""
    if not scores:
        raise ValueError("empty score list")
    below = sum(1 for s in scores if s < target)
    equal = sum(1 for s in scores if s == target)
    return 100.0 * (below + 0.5 * equal) / len(scores)


@dataclass(frozen=True)
class InterpretationRow:
    school_id: str
    score: float
    effect_size: float
    months: dict[float, MonthsProgress]  # keyed by annual-gain assumption
    percentile: float


def interpretation_rows(
    schools,
    national_sd_per_subject: float,
    annual_gains: Sequence[float] = (1.0, 0.4),
) -> list[InterpretationRow]:
    """Effect size, months (per gain assumption), and percentile per school."""
    scored = [s for s in schools if s.score is not None]
    all_scores = [s.score for s in scored]
    rows = []
    for s in sorted(scored, key=lambda x: x.school_id):
        es = effect_size(s.score, national_sd_per_subject)
        rows.append(
            InterpretationRow(
                school_id=s.school_id,
                score=s.score,
                effect_size=es,
                months={g: months_progress(es, g) for g in annual_gains},
                percentile=percentile_rank(all_scores, s.score),
            )
        )
    return rows


@dataclass(frozen=True)
class DispersionRow:
    school_id: str
    n: int
    within_sd: float | None  # None when a single pupil leaves SD undefined
    frac_below_low: float
    frac_above_high: float


def dispersion_report(
    pupil_scores,
    roster: dict[str, str],
    cutoffs: tuple[float, float] = (-1.0, 1.0),
) -> list[DispersionRow]:
    """Within-school SD and tail shares — the spread schools also influence.

    Two schools with identical means can treat their weakest pupils very
    differently; the tail fractions (strictly below low, strictly above high)
    make that visible.
    """
    low, high = cutoffs
    if not low < high:
        raise ValueError(f"cutoffs must satisfy low < high, got {cutoffs}")
    by_school: dict[str, list[float]] = {}
    for s in pupil_scores:
        by_school.setdefault(roster[s.pupil_id], []).append(s.capped_score)
    rows = []
    for school_id in sorted(by_school):
        values = by_school[school_id]
        n = len(values)
        if n > 1:
            mean = sum(values) / n
            sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))
        else:
            sd = None
        rows.append(
            DispersionRow(
                school_id=school_id,
                n=n,
                within_sd=sd,
                frac_below_low=sum(1 for v in values if v < low) / n,
                frac_above_high=sum(1 for v in values if v > high) / n,
            )
        )
    return rows


@dataclass
class NationalSummary:
    n_pupils: int
    n_schools: int
    mean_a8: float
    sigma: float
    vpc: float | None
    banding_shares: dict[str, float]
    counterfactual_uplift: float
    counterfactual_mean_a8: float
    capped_fraction: float | None


def national_summary(
    pupil_scores,
    school_scores,
    a8_totals: dict[str, float],
    sigma: float,
    vpc: float | None = None,
    capped_fraction: float | None = None,
) -> NationalSummary:
    """The headline national block, including the zero-sum counterfactual.

    The counterfactual asks what the national mean attainment would be if
    every below-zero school merely reached zero progress: it rises by
    (Σ_neg n_j · 10 · |score_j|) / N — small, because negative-school pupils
    are a minority and their average deficit is fractions of a grade.
    """
    scored = [s for s in school_scores if s.score is not None and s.n > 0]
    included = [s for s in pupil_scores if s.pupil_id in a8_totals]
    n_pupils = sum(s.n for s in scored)
    mean_a8 = (
        sum(a8_totals[s.pupil_id] for s in included) / len(included) if included else 0.0
    )
    uplift_points = sum(s.n * 10.0 * abs(s.score) for s in scored if s.score < 0)
    uplift = uplift_points / n_pupils if n_pupils else 0.0
    banded = [s for s in scored if s.banding is not None]
    shares: dict[str, float] = {}
    for s in banded:
        shares[s.banding] = shares.get(s.banding, 0.0) + 1.0
    shares = {k: v / len(banded) for k, v in sorted(shares.items())} if banded else {}
    return NationalSummary(
        n_pupils=n_pupils,
        n_schools=len(scored),
        mean_a8=mean_a8,
        sigma=sigma,
        vpc=vpc,
        banding_shares=shares,
        counterfactual_uplift=uplift,
        counterfactual_mean_a8=mean_a8 + uplift,
        capped_fraction=capped_fraction,
    )
