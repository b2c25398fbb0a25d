"""Shared fixtures.

The central one is a cohort reverse-engineered from a published 2018/19
city performance table (22 schools).  Pupil-level data behind such tables
is never released, so we construct a cohort whose pipeline output lands
exactly on the published (score, n) pairs:

* each school's included pupils sit in their own prior-attainment group,
  and every pupil is mirrored by a "pool" pupil whose score is reflected
  about the group baseline, so estimated baselines equal the intended
  ones exactly and the national mean progress is exactly zero;
* within-school spread is calibrated so the national pupil-level SD
  equals the value obtained by inverting the published confidence
  intervals (sigma_bar below, about 1.29 grades);
* the boundary school published at exactly 0.50 is built from dyadic
  floats (baseline 43.25, offsets +-1.25) so its mean is exactly 0.5
  in IEEE arithmetic and the banding edge case is genuinely exercised;
* schools also carry pupils with missing KS2 (excluded from progress,
  counted in the attainment denominator) so coverage figures match the
  published "pupils at end of KS4" column.
"""

from __future__ import annotations

import math
from collections import namedtuple

import pytest

from progress8.cohort import (
    CohortDataset,
    EnrollmentSpan,
    PupilRecord,
    QualificationResult,
)
from progress8.distributions import norm_ppf
from progress8.pipeline import Conventions, run_pipeline
from progress8.scoring import PagIntervals

TableRow = namedtuple(
    "TableRow",
    ["school_id", "end_ks4", "attainment8", "included", "score", "ci_low", "ci_high", "banding"],
)

# Published city table, 2018/19: (name, pupils at end KS4, A8, pupils in
# P8, P8 score, CI low, CI high, banding).
CITY_TABLE = [
    TableRow("Redland Green School", 197, 60.8, 181, 0.53, 0.35, 0.72, "Well above average"),
    TableRow("Colston's Girls' School", 140, 56.7, 132, 0.51, 0.29, 0.73, "Well above average"),
    TableRow("Bristol Metropolitan Academy", 165, 48.2, 153, 0.50, 0.30, 0.71, "Well above average"),
    TableRow("Bristol Cathedral Choir School", 122, 56.4, 115, 0.36, 0.12, 0.59, "Above average"),
    TableRow("Fairfield High School", 146, 46.7, 131, 0.35, 0.13, 0.57, "Above average"),
    TableRow("St Mary Redcliffe and Temple School", 213, 55.0, 206, 0.28, 0.11, 0.46, "Above average"),
    TableRow("Bristol Free School", 143, 52.6, 139, 0.27, 0.05, 0.48, "Above average"),
    TableRow("Bristol Brunel Academy", 204, 44.8, 190, 0.20, 0.02, 0.38, "Above average"),
    TableRow("St Bede's Catholic College", 180, 57.5, 178, 0.17, -0.02, 0.36, "Average"),
    TableRow("Orchard School Bristol", 123, 40.4, 111, -0.01, -0.25, 0.23, "Average"),
    TableRow("Oasis Academy Brislington", 140, 40.9, 133, -0.04, -0.26, 0.18, "Average"),
    TableRow("Bridge Learning Campus", 98, 38.6, 96, -0.05, -0.31, 0.21, "Average"),
    TableRow("Cotham School", 214, 46.0, 201, -0.07, -0.25, 0.10, "Average"),
    TableRow("Oasis Academy John Williams", 166, 43.9, 162, -0.09, -0.29, 0.11, "Average"),
    TableRow("The City Academy Bristol", 114, 31.4, 81, -0.12, -0.40, 0.16, "Average"),
    TableRow("Steiner Academy Bristol", 19, 49.1, 10, -0.32, -1.12, 0.47, "Average"),
    TableRow("Bedminster Down School", 174, 39.4, 171, -0.39, -0.58, -0.20, "Below average"),
    TableRow("Oasis Academy Brightstowe", 133, 36.1, 120, -0.39, -0.62, -0.16, "Below average"),
    TableRow("St Bernadette Catholic Secondary School", 130, 42.2, 126, -0.45, -0.68, -0.23, "Below average"),
    TableRow("Henbury School", 122, 36.5, 106, -0.55, -0.80, -0.31, "Well below average"),
    TableRow("Ashton Park School", 199, 39.0, 196, -0.60, -0.78, -0.42, "Well below average"),
    TableRow("Merchants' Academy", 147, 33.6, 145, -0.68, -0.89, -0.47, "Well below average"),
]

BOUNDARY_SCHOOL = "Bristol Metropolitan Academy"
POOL_SCHOOL = "ZZ Pool School"
Z95 = norm_ppf(0.975)


def invert_sigma(row: TableRow) -> float:
    """National SD implied by one row's CI width: half-width * sqrt(n) / z."""
    return 0.5 * (row.ci_high - row.ci_low) * math.sqrt(row.included) / Z95


def table_sigma() -> float:
    return sum(invert_sigma(r) for r in CITY_TABLE) / len(CITY_TABLE)


def _span(school: str) -> list[EnrollmentSpan]:
    return [EnrollmentSpan(school_id=school, years_enrolled=5.0, is_final_school=True)]


def build_city_cohort() -> CohortDataset:
    sigma = table_sigma()
    intervals = PagIntervals.equal_width()
    # One PAG per school; the group's intended baseline makes the included
    # pupils' mean A8 equal the published school A8.
    midpoints = [0.5 * (intervals.bounds[k] + intervals.bounds[k + 1]) for k in range(34)]
    baselines = {}
    for k, row in enumerate(CITY_TABLE):
        if row.school_id == BOUNDARY_SCHOOL:
            baselines[row.school_id] = 43.25
        else:
            baselines[row.school_id] = row.attainment8 - 10.0 * row.score

    # Within-school offsets: alternating +a/-a pairs (one zero if odd n).
    # Calibrate a so that total sum of squared pupil scores matches the
    # inverted sigma: sum p^2 = sigma^2 * (N - 1) with N all pupils
    # (city + mirrored pool) and mean exactly zero.
    n_total = 2 * sum(r.included for r in CITY_TABLE)
    target_ss = sigma * sigma * (n_total - 1) / 2.0
    fixed_ss = 0.0
    slots = 0
    for row in CITY_TABLE:
        fixed_ss += row.included * row.score * row.score
        pairs = row.included // 2
        if row.school_id == BOUNDARY_SCHOOL:
            fixed_ss += 2 * pairs * 1.25 * 1.25
        else:
            slots += 2 * pairs
    amp = math.sqrt((target_ss - fixed_ss) / slots)

    pupils = []
    serial = 0

    def add(school, ks2, a8, has_ks2=True):
        nonlocal serial
        serial += 1
        pid = f"P{serial:05d}"
        pupils.append(
            PupilRecord(
                pupil_id=pid,
                ks2_reading_fine=ks2 if has_ks2 else None,
                ks2_maths_fine=ks2 if has_ks2 else None,
                qualifications=[QualificationResult("GEN", a8)],
                enrollments=_span(school),
            )
        )

    for k, row in enumerate(CITY_TABLE):
        ks2 = midpoints[k]
        base = baselines[row.school_id]
        a = 1.25 if row.school_id == BOUNDARY_SCHOOL else amp
        for i in range(row.included):
            if i == row.included - 1 and row.included % 2 == 1:
                offset = 0.0
            else:
                offset = a if i % 2 == 0 else -a
            p = row.score + offset
            add(row.school_id, ks2, base + 10.0 * p)
            add(POOL_SCHOOL, ks2, base - 10.0 * p)
        # Pupils with no KS2: counted at end of KS4, excluded from progress.
        # Their A8 equals the school's published mean so the attainment
        # column is unchanged.
        mean_a8 = base + 10.0 * row.score
        for _ in range(row.end_ks4 - row.included):
            add(row.school_id, 0.0, mean_a8, has_ks2=False)

    return CohortDataset(
        year_label="2019",
        pupils=pupils,
        subject_catalog={"GEN": "open"},
    )


@pytest.fixture(scope="session")
def city_rows():
    return list(CITY_TABLE)


@pytest.fixture(scope="session")
def city_cohort():
    return build_city_cohort()


@pytest.fixture(scope="session")
def city_result(city_cohort):
    return run_pipeline(city_cohort, conventions=Conventions(cap_multiplier=None))


def pytest_terminal_summary(terminalreporter):
    """Print the one-line-per-criterion scorecard after an acceptance run."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        title, status = RESULTS[num]
        terminalreporter.write_line(f"criterion {num:02d}: {status} — {title}")
