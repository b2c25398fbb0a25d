"""Pupil-level cohort data model: records, validation, coverage, suppression.

A cohort is immutable once validated and safe to share across threads; all
downstream analytics treat it as read-only.
"""

from __future__ import annotations

import dataclasses
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable

__all__ = [
    "QualificationResult",
    "BackgroundProfile",
    "EnrollmentSpan",
    "PupilRecord",
    "CohortDataset",
    "SchoolCoverage",
    "CoverageReport",
    "ValidationIssue",
    "CohortError",
    "DEFAULT_KS2_RANGE",
    "MAX_ENROLLMENT_YEARS",
    "validate_cohort",
    "default_inclusion",
    "exclusion_reason",
    "coverage_stats",
    "apply_suppression",
]

# Fine grades are decimal-scaled prior-attainment scores; the numeric range is
# a configuration choice, not a property of the method.
DEFAULT_KS2_RANGE: tuple[float, float] = (80.0, 120.0)
MAX_ENROLLMENT_YEARS = 5.0

ELIGIBILITIES = ("english", "maths", "ebacc", "open")


class CohortError(ValueError):
    """Raised when cohort data violates a structural invariant."""


@dataclass(frozen=True)
class QualificationResult:
    subject_code: str
    points: float


@dataclass(frozen=True)
class BackgroundProfile:
    gender: str | None = None
    ethnicity_code: str | None = None
    eal_flag: bool | None = None
    sen_flag: bool | None = None
    fsm_flag: bool | None = None
    deprivation_decile: int | None = None
    ks1_score: float | None = None
    month_of_birth: int | None = None


@dataclass(frozen=True)
class EnrollmentSpan:
    school_id: str
    years_enrolled: float
    is_final_school: bool


@dataclass
class PupilRecord:
    pupil_id: str
    ks2_reading_fine: float | None = None
    ks2_maths_fine: float | None = None
    qualifications: list[QualificationResult] = field(default_factory=list)
    background: BackgroundProfile = field(default_factory=BackgroundProfile)
    enrollments: list[EnrollmentSpan] = field(default_factory=list)

    def mean_fine_grade(self) -> float | None:
        """Mean of the two KS2 fine grades, or None if either is absent."""
        if self.ks2_reading_fine is None or self.ks2_maths_fine is None:
            return None
        return 0.5 * (self.ks2_reading_fine + self.ks2_maths_fine)

    def final_school(self) -> str:
        for span in self.enrollments:
            if span.is_final_school:
                return span.school_id
        raise CohortError(f"pupil {self.pupil_id} has no final school")


@dataclass
class CohortDataset:
    year_label: str
    pupils: list[PupilRecord]
    subject_catalog: dict[str, str]

    def pupil_index(self) -> dict[str, PupilRecord]:
        return {p.pupil_id: p for p in self.pupils}

    def final_school_map(self) -> dict[str, str]:
        return {p.pupil_id: p.final_school() for p in self.pupils}

    def school_ids(self) -> list[str]:
        return sorted({p.final_school() for p in self.pupils})


@dataclass(frozen=True)
class ValidationIssue:
    pupil_id: str | None
    reason: str


def validate_cohort(
    cohort: CohortDataset,
    ks2_range: tuple[float, float] = DEFAULT_KS2_RANGE,
) -> list[ValidationIssue]:
    """Check every cohort invariant; returns one issue per violation."""
    issues: list[ValidationIssue] = []
    if not cohort.year_label:
        issues.append(ValidationIssue(None, "year_label is empty"))
    for code, elig in cohort.subject_catalog.items():
        if elig not in ELIGIBILITIES:
            issues.append(
                ValidationIssue(None, f"subject {code} has unknown eligibility {elig!r}")
            )
    low, high = ks2_range
    seen: set[str] = set()
    for pupil in cohort.pupils:
        pid = pupil.pupil_id
        if pid in seen:
            issues.append(ValidationIssue(pid, "duplicate pupil_id"))
            continue
        seen.add(pid)
        for grade, label in (
            (pupil.ks2_reading_fine, "ks2_reading_fine"),
            (pupil.ks2_maths_fine, "ks2_maths_fine"),
        ):
            if grade is not None and not low <= grade <= high:
                issues.append(
                    ValidationIssue(pid, f"{label} {grade} outside [{low}, {high}]")
                )
        for qual in pupil.qualifications:
            if qual.points < 0:
                issues.append(
                    ValidationIssue(pid, f"negative points for {qual.subject_code}")
                )
            if qual.subject_code not in cohort.subject_catalog:
                issues.append(
                    ValidationIssue(pid, f"unresolvable subject_code {qual.subject_code}")
                )
        finals = [s for s in pupil.enrollments if s.is_final_school]
        if len(finals) != 1:
            issues.append(
                ValidationIssue(pid, f"expected exactly 1 final school, got {len(finals)}")
            )
        total_years = 0.0
        for span in pupil.enrollments:
            if span.years_enrolled < 0:
                issues.append(
                    ValidationIssue(pid, f"negative years_enrolled at {span.school_id}")
                )
            total_years += span.years_enrolled
        if total_years > MAX_ENROLLMENT_YEARS + 1e-9:
            issues.append(
                ValidationIssue(
                    pid, f"enrollment years sum to {total_years}, above {MAX_ENROLLMENT_YEARS}"
                )
            )
        decile = pupil.background.deprivation_decile
        if decile is not None and not 1 <= decile <= 10:
            issues.append(ValidationIssue(pid, f"deprivation_decile {decile} outside [1, 10]"))
        month = pupil.background.month_of_birth
        if month is not None and not 1 <= month <= 12:
            issues.append(ValidationIssue(pid, f"month_of_birth {month} outside [1, 12]"))
    return issues


def exclusion_reason(pupil: PupilRecord) -> str | None:
    """Why the default inclusion predicate would drop this pupil, if it would."""
    if pupil.mean_fine_grade() is None:
        return "missing_ks2"
    if not pupil.qualifications:
        return "no_qualifications"
    return None


def default_inclusion(pupil: PupilRecord) -> bool:
    """Included pupils have both KS2 fine grades and at least one qualification."""
    return exclusion_reason(pupil) is None


@dataclass(frozen=True)
class SchoolCoverage:
    school_id: str
    pupils_at_end_ks4: int
    pupils_included: int
    coverage_fraction: float | None  # None when the school has no end-KS4 pupils


@dataclass
class CoverageReport:
    schools: list[SchoolCoverage]
    threshold: float
    median_coverage: float | None
    quartiles: tuple[float, float] | None
    below_threshold: int
    exclusion_reasons: dict[str, int]

    def by_school(self) -> dict[str, SchoolCoverage]:
        return {s.school_id: s for s in self.schools}


def coverage_stats(
    cohort: CohortDataset,
    inclusion: Callable[[PupilRecord], bool] = default_inclusion,
    threshold: float = 0.8,
) -> CoverageReport:
    """Per-school and national coverage of the measure's inclusion rule.

    Coverage is the included share of each school's end-of-KS4 roll. Schools
    with no end-KS4 pupils get undefined (None) coverage rather than a
    division error, and do not enter the national distribution.
    """
    totals: dict[str, int] = {}
    included: dict[str, int] = {}
    reasons: dict[str, int] = {}
    for pupil in cohort.pupils:
        school = pupil.final_school()
        totals[school] = totals.get(school, 0) + 1
        if inclusion(pupil):
            included[school] = included.get(school, 0) + 1
        else:
            reason = exclusion_reason(pupil) or "excluded_by_predicate"
            reasons[reason] = reasons.get(reason, 0) + 1
    schools = []
    for school_id in sorted(totals):
        total = totals[school_id]
        inc = included.get(school_id, 0)
        frac = inc / total if total > 0 else None
        schools.append(SchoolCoverage(school_id, total, inc, frac))
    fractions = sorted(s.coverage_fraction for s in schools if s.coverage_fraction is not None)
    if fractions:
        median = statistics.median(fractions)
        q = statistics.quantiles(fractions, n=4) if len(fractions) >= 2 else None
        quartiles = (q[0], q[2]) if q else (fractions[0], fractions[0])
        below = sum(1 for f in fractions if f < threshold)
    else:
        median, quartiles, below = None, None, 0
    return CoverageReport(
        schools=schools,
        threshold=threshold,
        median_coverage=median,
        quartiles=quartiles,
        below_threshold=below,
        exclusion_reasons=dict(sorted(reasons.items())),
    )


def apply_suppression(scores: Iterable, coverage: CoverageReport, threshold: float = 0.5) -> list:
    """Mark school scores below the coverage threshold as suppressed.

    Comparison is strict: coverage exactly at the threshold still publishes.
    Scores are returned as copies with the suppressed flag set; values are
    retained for internal use. Schools absent from the coverage report are
    left unsuppressed.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"suppression threshold must lie in (0, 1], got {threshold}")
    by_school = coverage.by_school()
    out = []
    for score in scores:
        cov = by_school.get(score.school_id)
        suppressed = (
            cov is not None
            and cov.coverage_fraction is not None
            and cov.coverage_fraction < threshold
        )
        out.append(dataclasses.replace(score, suppressed=suppressed))
    return out
