"""End-to-end orchestration: cohort → slot filling → baselines → pupil and
school scores → intervals, bandings, coverage, suppression.

Each stage lives in its own module and stays usable alone; this wiring exists
so the command-line front end and the experiment harnesses agree on exactly
one execution order (capping feeds σ̂ and everything downstream).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .attainment import Attainment8Result, SlotConfig, OFFICIAL, fill_slots, school_attainment8
from .cohort import (
    CohortDataset,
    CoverageReport,
    PupilRecord,
    apply_suppression,
    coverage_stats,
    default_inclusion,
)
from .scoring import (
    CapDiagnostics,
    NationalStats,
    PagIntervals,
    PriorAttainmentTable,
    PupilP8,
    SchoolP8,
    apply_caps,
    compute_pupil_scores,
    estimate_baselines,
    finalize_schools,
    national_stats,
    school_p8,
)

__all__ = ["Conventions", "PipelineResult", "run_pipeline"]


@dataclass(frozen=True)
class Conventions:
    """Every methodological switch in one place, recordable in run metadata."""

    sigma_source: str = "national"
    multiplier: str = "z"
    level: float = 0.95
    cap_multiplier: float | str | None = "auto"
    suppression_threshold: float = 0.5
    reliability_floor: int = 6

    def as_dict(self) -> dict:
        return {
            "sigma_source": self.sigma_source,
            "multiplier": self.multiplier,
            "level": self.level,
            "cap_multiplier": str(self.cap_multiplier),
            "suppression_threshold": self.suppression_threshold,
            "reliability_floor": self.reliability_floor,
        }


@dataclass
class PipelineResult:
    cohort: CohortDataset
    slot_config: SlotConfig
    conventions: Conventions
    a8_results: dict[str, Attainment8Result]
    a8_by_school: list
    intervals: PagIntervals
    baselines: PriorAttainmentTable
    pupil_scores: list[PupilP8]  # capped
    cap_diagnostics: CapDiagnostics
    national: NationalStats
    schools: list[SchoolP8]  # finalized + suppression applied
    coverage: CoverageReport
    roster: dict[str, str]
    warnings: list[str] = field(default_factory=list)

    def school(self, school_id: str) -> SchoolP8:
        for s in self.schools:
            if s.school_id == school_id:
                return s
        raise KeyError(school_id)


def run_pipeline(
    cohort: CohortDataset,
    slot_config: SlotConfig = OFFICIAL,
    intervals: PagIntervals | None = None,
    conventions: Conventions = Conventions(),
    baselines: PriorAttainmentTable | None = None,
    inclusion: Callable[[PupilRecord], bool] = default_inclusion,
) -> PipelineResult:
    """The official computation order, with every convention explicit.

    Baselines default to being estimated from the cohort itself (the national
    sample); pass a table to score a cohort against externally published
    baselines instead.
    """
    intervals = intervals or PagIntervals.equal_width()
    catalog = cohort.subject_catalog
    a8_results = {
        p.pupil_id: fill_slots(p, catalog, slot_config) for p in cohort.pupils
    }
    roster = cohort.final_school_map()
    a8_by_school = school_attainment8(list(a8_results.values()), roster)
    if baselines is None:
        baselines = estimate_baselines(cohort, a8_results, intervals, inclusion)
    raw_scores, warnings = compute_pupil_scores(
        cohort, a8_results, baselines, intervals, inclusion
    )
    capped, cap_diag = apply_caps(raw_scores, conventions.cap_multiplier)
    national = national_stats(capped)
    schools = school_p8(capped, roster)
    finalized = finalize_schools(
        schools,
        national,
        capped,
        roster,
        sigma_source=conventions.sigma_source,
        multiplier=conventions.multiplier,
        level=conventions.level,
    )
    coverage = coverage_stats(cohort, inclusion)
    published = apply_suppression(finalized, coverage, conventions.suppression_threshold)
    return PipelineResult(
        cohort=cohort,
        slot_config=slot_config,
        conventions=conventions,
        a8_results=a8_results,
        a8_by_school=a8_by_school,
        intervals=intervals,
        baselines=baselines,
        pupil_scores=capped,
        cap_diagnostics=cap_diag,
        national=national,
        schools=published,
        coverage=coverage,
        roster=roster,
        warnings=warnings,
    )
