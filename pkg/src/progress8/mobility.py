"""Enrollment-time-weighted school scores.

The official measure attributes each pupil wholly to their final school, which
rewards moving weak pupils off roll before the census. Weighting each pupil's
score by the share of their secondary-school years spent at each school makes
every school that taught the pupil own a proportional piece of the outcome.
"""

from __future__ import annotations

from dataclasses import replace

from .cohort import CohortDataset
from .scoring import NationalStats, PupilP8, SchoolP8, assign_banding, compute_ci

__all__ = ["mobility_weighted_p8"]


def mobility_weighted_p8(
    pupil_scores: list[PupilP8],
    cohort: CohortDataset,
    national: NationalStats | None = None,
    multiplier: str = "z",
    level: float = 0.95,
) -> tuple[list[SchoolP8], list[str]]:
    """School scores with pupils weighted by years enrolled per school.

    Pupil weight at school j is years_j / Σ years over all the pupil's spans,
    so weights sum to 1 and total pupil mass is conserved versus the official
    rule. The effective n used for standard errors is the school's summed
    weight. Pupils with zero recorded years are excluded with a warning.
    Pass `national` to attach CIs and bandings (national-σ convention).
    """
    spans_by_pupil = {p.pupil_id: p.enrollments for p in cohort.pupils}
    weighted_sum: dict[str, float] = {}
    weight_total: dict[str, float] = {}
    contributors: dict[str, set[str]] = {}
    warnings: list[str] = []
    for score in pupil_scores:
        spans = spans_by_pupil.get(score.pupil_id)
        if spans is None:
            warnings.append(f"pupil {score.pupil_id} has no enrollment record; excluded")
            continue
        total_years = sum(s.years_enrolled for s in spans)
        if total_years <= 0:
            warnings.append(f"pupil {score.pupil_id} has zero enrollment years; excluded")
            continue
        for span in spans:
            w = span.years_enrolled / total_years
            if w == 0.0:
                continue
            weighted_sum[span.school_id] = (
                weighted_sum.get(span.school_id, 0.0) + w * score.capped_score
            )
            weight_total[span.school_id] = weight_total.get(span.school_id, 0.0) + w
            contributors.setdefault(span.school_id, set()).add(score.pupil_id)
    schools = []
    for school_id in sorted(weight_total):
        mass = weight_total[school_id]
        school = SchoolP8(
            school_id=school_id,
            score=weighted_sum[school_id] / mass,
            n=len(contributors[school_id]),
            effective_n=mass,
        )
        if national is not None:
            school = compute_ci(
                school, national, sigma_source="national",
                multiplier=multiplier, level=level,
            )
            school = replace(school, banding=assign_banding(school))
        schools.append(school)
    return schools, warnings
