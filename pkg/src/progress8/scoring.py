"""Prior-attainment grouping, national baselines, pupil and school value-added
scores, capping, standard errors, confidence intervals, and bandings.

Conventions are explicit everywhere: the official configuration is a normal
multiplier on a national pupil-level standard deviation, and every variant the
engine supports (within-school or pooled-within sigma, t multipliers at df=n
or df=n-1) is selected by name so published output can record exactly what was
run.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

from .cohort import CohortDataset, PupilRecord, default_inclusion
from .attainment import Attainment8Result
from .distributions import norm_ppf, t_ppf

__all__ = [
    "PagIntervals",
    "PagGroup",
    "PriorAttainmentTable",
    "PupilP8",
    "SchoolP8",
    "NationalStats",
    "CapDiagnostics",
    "BandingIntegrityError",
    "BANDINGS",
    "NUM_GROUPS",
    "assign_pag",
    "estimate_baselines",
    "pupil_p8",
    "compute_pupil_scores",
    "apply_caps",
    "school_p8",
    "national_stats",
    "pooled_within_sd",
    "ci_multiplier",
    "compute_ci",
    "finalize_schools",
    "assign_banding",
    "subgroup_p8",
]

NUM_GROUPS = 34

BANDINGS = (
    "Well above average",
    "Above average",
    "Average",
    "Below average",
    "Well below average",
)


class BandingIntegrityError(ValueError):
    """CI excludes zero on the wrong side of the score; inputs are inconsistent."""


@dataclass(frozen=True)
class PagIntervals:
    """The 34 half-open fine-grade intervals; the top interval is closed.

    Boundaries are configuration, not method: the default partitions the
    configured KS2 range into equal widths, and a published boundary table can
    be loaded in its place without code change.
    """

    bounds: tuple[float, ...]  # 35 ascending edges

    def __post_init__(self):
        if len(self.bounds) != NUM_GROUPS + 1:
            raise ValueError(f"expected {NUM_GROUPS + 1} edges, got {len(self.bounds)}")
        for a, b in zip(self.bounds, self.bounds[1:]):
            if not b > a:
                raise ValueError("interval edges must be strictly increasing")

    @classmethod
    def equal_width(cls, ks2_range: tuple[float, float] = (80.0, 120.0)) -> "PagIntervals":
        low, high = ks2_range
        step = (high - low) / NUM_GROUPS
        return cls(tuple(low + i * step for i in range(NUM_GROUPS)) + (high,))

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[int, float, float]]) -> "PagIntervals":
        ordered = sorted(rows)
        if [r[0] for r in ordered] != list(range(1, NUM_GROUPS + 1)):
            raise ValueError(f"group_index must cover 1..{NUM_GROUPS} exactly")
        edges = [ordered[0][1]]
        for _, low, high in ordered:
            if not math.isclose(low, edges[-1], abs_tol=1e-9):
                raise ValueError("intervals must partition the range without gaps")
            edges.append(high)
        return cls(tuple(edges))

    def rows(self) -> list[tuple[int, float, float]]:
        return [
            (i + 1, self.bounds[i], self.bounds[i + 1]) for i in range(NUM_GROUPS)
        ]

    def assign(self, mean_fine_grade: float) -> int:
        low, high = self.bounds[0], self.bounds[-1]
        if not low <= mean_fine_grade <= high:
            raise ValueError(
                f"mean fine grade {mean_fine_grade} outside configured range [{low}, {high}]"
            )
        if mean_fine_grade == high:  # closed top interval
            return NUM_GROUPS
        return bisect_right(self.bounds, mean_fine_grade)


def assign_pag(mean_fine_grade: float, intervals: PagIntervals) -> int:
    return intervals.assign(mean_fine_grade)


@dataclass
class PagGroup:
    group_index: int
    low: float
    high: float
    mean: float | None  # national mean Attainment 8 for the group; None if empty
    count: int
    cap_threshold: float | None = None


@dataclass
class PriorAttainmentTable:
    groups: list[PagGroup]

    def __post_init__(self):
        self._by_index = {g.group_index: g for g in self.groups}

    def group(self, index: int) -> PagGroup:
        return self._by_index[index]

    def baseline(self, index: int) -> float | None:
        return self._by_index[index].mean


def estimate_baselines(
    cohort: CohortDataset,
    a8_results: dict[str, Attainment8Result],
    intervals: PagIntervals,
    inclusion: Callable[[PupilRecord], bool] = default_inclusion,
) -> PriorAttainmentTable:
    """Mean Attainment 8 per prior-attainment group over included pupils.

    Because the groups enter as exhaustive indicator variables with no
    intercept, these means are identical to the least-squares coefficients of
    the all-dummies regression; the equivalence is enforced by test rather
    than computed twice here.
    """
    sums = [0.0] * (NUM_GROUPS + 1)
    counts = [0] * (NUM_GROUPS + 1)
    for pupil in cohort.pupils:
        if not inclusion(pupil):
            continue
        grade = pupil.mean_fine_grade()
        result = a8_results.get(pupil.pupil_id)
        if grade is None or result is None:
            continue
        k = intervals.assign(grade)
        sums[k] += result.total
        counts[k] += 1
    groups = []
    for index, low, high in intervals.rows():
        n = counts[index]
        mean = sums[index] / n if n else None
        groups.append(PagGroup(index, low, high, mean, n))
    return PriorAttainmentTable(groups)


def pupil_p8(a8: float, baseline: float) -> float:
    """Pupil value-added score in grades-per-subject units."""
    return (a8 - baseline) / 10.0


@dataclass
class PupilP8:
    pupil_id: str
    pag_index: int
    raw_score: float
    capped_score: float
    was_capped: bool = False


def compute_pupil_scores(
    cohort: CohortDataset,
    a8_results: dict[str, Attainment8Result],
    table: PriorAttainmentTable,
    intervals: PagIntervals,
    inclusion: Callable[[PupilRecord], bool] = default_inclusion,
) -> tuple[list[PupilP8], list[str]]:
    """Raw (uncapped) pupil scores for every included pupil.

    Pupils falling in a group with an undefined baseline are excluded with a
    warning rather than scored.
    """
    scores: list[PupilP8] = []
    warnings: list[str] = []
    for pupil in cohort.pupils:
        if not inclusion(pupil):
            continue
        result = a8_results.get(pupil.pupil_id)
        grade = pupil.mean_fine_grade()
        if result is None or grade is None:
            continue
        k = intervals.assign(grade)
        baseline = table.baseline(k)
        if baseline is None:
            warnings.append(
                f"pupil {pupil.pupil_id} excluded: no baseline for prior-attainment group {k}"
            )
            continue
        raw = pupil_p8(result.total, baseline)
        scores.append(PupilP8(pupil.pupil_id, k, raw, raw))
    return scores, warnings


@dataclass
class CapDiagnostics:
    requested: float | str | None
    multiplier: float | None
    capped_count: int
    total_count: int
    floors: dict[int, float | None]

    @property
    def capped_fraction(self) -> float:
        return self.capped_count / self.total_count if self.total_count else 0.0


def _group_moments(scores: Iterable[PupilP8]) -> dict[int, tuple[float, float, int]]:
    by_group: dict[int, list[float]] = {}
    for s in scores:
        by_group.setdefault(s.pag_index, []).append(s.raw_score)
    moments = {}
    for k, values in by_group.items():
        n = len(values)
        mean = sum(values) / n
        sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
        # Summation noise on identical values can leave an SD around 1e-17;
        # treat that as a degenerate (uncappable) group, not a real spread.
        if sd <= 1e-12 * max(1.0, abs(mean)):
            sd = 0.0
        moments[k] = (mean, sd, n)
    return moments


def apply_caps(
    pupil_scores: list[PupilP8],
    multiplier: float | str | None = "auto",
    target_fraction: float = 0.01,
    max_fraction: float = 0.015,
) -> tuple[list[PupilP8], CapDiagnostics]:
    """Floor extreme negative scores at (group mean − c × group SD).

    multiplier: a number of SDs, "auto" (c calibrated by bisection so the
    national capped fraction lands as close to target_fraction as possible
    without exceeding max_fraction), or None/inf for no capping. Groups with
    zero SD are never capped.
    """
    moments = _group_moments(pupil_scores)
    total = len(pupil_scores)

    def floors_for(c: float) -> dict[int, float | None]:
        return {
            k: (mean - c * sd if sd > 0 else None)
            for k, (mean, sd, _) in moments.items()
        }

    def capped_count(c: float) -> int:
        floors = floors_for(c)
        return sum(
            1
            for s in pupil_scores
            if floors[s.pag_index] is not None and s.raw_score < floors[s.pag_index]
        )

    if multiplier is None or (isinstance(multiplier, float) and math.isinf(multiplier)):
        diag = CapDiagnostics(multiplier, None, 0, total, {k: None for k in moments})
        return [replace(s) for s in pupil_scores], diag

    if multiplier == "auto":
        if total == 0:
            c = 0.0
        else:
            lo, hi = 0.0, 12.0
            for _ in range(64):
                mid = 0.5 * (lo + hi)
                if capped_count(mid) / total > target_fraction:
                    lo = mid
                else:
                    hi = mid
            # The fraction is a step function of c; pick the bracket endpoint
            # closest to the target subject to the hard ceiling.
            candidates = [
                c for c in (lo, hi) if capped_count(c) / total <= max_fraction
            ]
            c = min(
                candidates or [hi],
                key=lambda c: abs(capped_count(c) / total - target_fraction),
            )
    else:
        c = float(multiplier)
        if c < 0:
            raise ValueError(f"cap multiplier must be non-negative, got {multiplier}")

    floors = floors_for(c)
    capped: list[PupilP8] = []
    n_capped = 0
    for s in pupil_scores:
        floor = floors[s.pag_index]
        if floor is not None and s.raw_score < floor:
            capped.append(replace(s, capped_score=floor, was_capped=True))
            n_capped += 1
        else:
            capped.append(replace(s, capped_score=s.raw_score, was_capped=False))
    return capped, CapDiagnostics(multiplier, c, n_capped, total, floors)


@dataclass
class SchoolP8:
    school_id: str
    score: float | None
    n: int
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    banding: str | None = None
    suppressed: bool = False
    subgroup_label: str | None = None
    unreliable: bool = False
    # Fractional pupil mass when scores are enrollment-weighted; defaults to n.
    effective_n: float | None = None


def school_p8(
    pupil_scores: list[PupilP8],
    roster: dict[str, str],
    school_ids: list[str] | None = None,
    use_capped: bool = True,
) -> list[SchoolP8]:
    """Mean pupil score per final school; empty schools get a flagged None."""
    values: dict[str, list[float]] = {}
    for s in pupil_scores:
        school = roster[s.pupil_id]
        values.setdefault(school, []).append(s.capped_score if use_capped else s.raw_score)
    ids = sorted(set(values) | set(school_ids or []))
    out = []
    for school_id in ids:
        group = values.get(school_id, [])
        score = sum(group) / len(group) if group else None
        out.append(SchoolP8(school_id, score, len(group)))
    return out


@dataclass(frozen=True)
class NationalStats:
    sigma: float
    mean: float
    N: int


def _sd(values: Sequence[float], mean: float) -> float:
    if len(values) < 2:
        return 0.0
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))


def national_stats(pupil_scores: list[PupilP8], use_capped: bool = True) -> NationalStats:
    """National mean and SD (N−1) of pupil scores, the official σ̂ source."""
    values = [s.capped_score if use_capped else s.raw_score for s in pupil_scores]
    if not values:
        raise ValueError("cannot compute national statistics of an empty score list")
    mean = math.fsum(values) / len(values)
    return NationalStats(sigma=_sd(values, mean), mean=mean, N=len(values))


def pooled_within_sd(pupil_scores: list[PupilP8], roster: dict[str, str]) -> float:
    """√(within-school mean square): the pooled within-school pupil SD."""
    by_school: dict[str, list[float]] = {}
    for s in pupil_scores:
        by_school.setdefault(roster[s.pupil_id], []).append(s.capped_score)
    ssw = 0.0
    n_total = 0
    for values in by_school.values():
        mean = sum(values) / len(values)
        ssw += math.fsum((v - mean) ** 2 for v in values)
        n_total += len(values)
    df = n_total - len(by_school)
    if df <= 0:
        raise ValueError("pooled within-school SD needs more pupils than schools")
    return math.sqrt(ssw / df)


def ci_multiplier(n: int, convention: str = "z", level: float = 0.95) -> float:
    """Interval half-width multiplier under the named convention."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    p = 0.5 * (1.0 + level)
    if convention == "z":
        return norm_ppf(p)
    if convention == "t_df_n":
        if n < 1:
            raise ValueError(f"t_df_n needs n ≥ 1, got {n}")
        return t_ppf(p, n)
    if convention == "t_df_n_minus_1":
        if n < 2:
            raise ValueError(f"t_df_n_minus_1 needs n ≥ 2, got {n}")
        return t_ppf(p, n - 1)
    raise ValueError(f"unknown multiplier convention {convention!r}")


def compute_ci(
    school: SchoolP8,
    national: NationalStats,
    sigma_source: str = "national",
    multiplier: str = "z",
    level: float = 0.95,
    school_pupil_scores: Sequence[float] | None = None,
    pooled_sd: float | None = None,
) -> SchoolP8:
    """Attach se and confidence interval to a school score.

    sigma_source picks the σ in se = σ/√n: "national" (the official method),
    "within_school" (this school's own pupil SD, needs n ≥ 2 and the pupil
    scores), or "pooled_within" (common within-school SD, supplied).
    """
    if school.score is None or school.n < 1:
        return replace(school, se=None, ci_low=None, ci_high=None)
    if sigma_source == "national":
        sigma = national.sigma
    elif sigma_source == "within_school":
        if school.n < 2 or school_pupil_scores is None or len(school_pupil_scores) < 2:
            raise ValueError(
                f"within_school sigma undefined for school {school.school_id} with "
                f"n={school.n}; use the national σ for singleton schools"
            )
        mean = sum(school_pupil_scores) / len(school_pupil_scores)
        sigma = _sd(list(school_pupil_scores), mean)
    elif sigma_source == "pooled_within":
        if pooled_sd is None:
            raise ValueError("pooled_within sigma requested but pooled_sd not supplied")
        sigma = pooled_sd
    else:
        raise ValueError(f"unknown sigma_source {sigma_source!r}")
    n_for_se = school.effective_n if school.effective_n is not None else school.n
    se = sigma / math.sqrt(n_for_se)
    m = ci_multiplier(school.n, multiplier, level)
    return replace(school, se=se, ci_low=school.score - m * se, ci_high=school.score + m * se)


def assign_banding(school: SchoolP8) -> str:
    """Five-level banding from score magnitude and CI position versus zero.

    The ±0.5 magnitude boundaries are inclusive: a score of exactly 0.5 with
    a CI above zero is "Well above average".
    """
    score, lo, hi = school.score, school.ci_low, school.ci_high
    if score is None or lo is None or hi is None:
        raise ValueError(f"school {school.school_id} has no CI; banding undefined")
    if not lo <= score <= hi:
        raise BandingIntegrityError(
            f"school {school.school_id}: CI ({lo}, {hi}) does not contain score {score}"
        )
    if lo > 0:
        return "Well above average" if score >= 0.5 else "Above average"
    if hi < 0:
        return "Well below average" if score <= -0.5 else "Below average"
    return "Average"


def finalize_schools(
    schools: list[SchoolP8],
    national: NationalStats,
    pupil_scores: list[PupilP8] | None = None,
    roster: dict[str, str] | None = None,
    sigma_source: str = "national",
    multiplier: str = "z",
    level: float = 0.95,
) -> list[SchoolP8]:
    """CI + banding over a school list under one named convention set."""
    per_school: dict[str, list[float]] = {}
    pooled = None
    if pupil_scores is not None and roster is not None:
        for s in pupil_scores:
            per_school.setdefault(roster[s.pupil_id], []).append(s.capped_score)
        if sigma_source == "pooled_within":
            pooled = pooled_within_sd(pupil_scores, roster)
    out = []
    for school in schools:
        if school.score is None:
            out.append(school)
            continue
        done = compute_ci(
            school,
            national,
            sigma_source=sigma_source,
            multiplier=multiplier,
            level=level,
            school_pupil_scores=per_school.get(school.school_id),
            pooled_sd=pooled,
        )
        out.append(replace(done, banding=assign_banding(done)))
    return out


def subgroup_p8(
    cohort: CohortDataset,
    pupil_scores: list[PupilP8],
    partition: list[tuple[str, Callable[[PupilRecord], bool]]],
    national: NationalStats,
    roster: dict[str, str] | None = None,
    sigma_source: str = "national",
    multiplier: str = "z",
    level: float = 0.95,
    reliability_floor: int = 6,
) -> list[SchoolP8]:
    """Full score/CI/banding pipeline rerun inside each labeled subgroup.

    Labels must be disjoint per pupil. Subgroup rows with fewer than
    reliability_floor pupils are flagged unreliable, not suppressed; empty
    subgroups in a school produce no row.
    """
    pupil_index = cohort.pupil_index()
    roster = roster or cohort.final_school_map()
    labels: dict[str, str] = {}
    for label, predicate in partition:
        for pupil in cohort.pupils:
            if predicate(pupil):
                if pupil.pupil_id in labels:
                    raise ValueError(
                        f"pupil {pupil.pupil_id} matches both "
                        f"{labels[pupil.pupil_id]!r} and {label!r}; partition not disjoint"
                    )
                labels[pupil.pupil_id] = label
    out: list[SchoolP8] = []
    for label, _ in partition:
        members = [
            s for s in pupil_scores
            if s.pupil_id in pupil_index and labels.get(s.pupil_id) == label
        ]
        if not members:
            continue
        schools = school_p8(members, roster)
        done = finalize_schools(
            schools, national, members, roster,
            sigma_source=sigma_source, multiplier=multiplier, level=level,
        )
        for school in done:
            out.append(
                replace(
                    school,
                    subgroup_label=label,
                    unreliable=school.n < reliability_floor,
                )
            )
    return out
