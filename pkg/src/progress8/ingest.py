"""CSV ingestion and canonical emission for cohort datasets.

Reading is forgiving at row granularity — every presented row is either
ingested or rejected with a structured (file, line, reason) error — and the
accounting invariant rows_presented = rows_ingested + rows_rejected holds per
file. Writing is canonical: UTF-8, LF endings, RFC-4180 quoting, shortest
round-trip float formatting, deterministic sort order, empty field = absent.
Loading an emitted cohort and re-emitting it reproduces the bytes exactly.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

from .cohort import (
    DEFAULT_KS2_RANGE,
    ELIGIBILITIES,
    MAX_ENROLLMENT_YEARS,
    BackgroundProfile,
    CohortDataset,
    CohortError,
    EnrollmentSpan,
    PupilRecord,
    QualificationResult,
    ValidationIssue,
    validate_cohort,
)

__all__ = [
    "RowError",
    "IngestionReport",
    "load_cohort",
    "write_cohort",
    "COHORT_FILES",
]

PUPIL_COLUMNS = [
    "pupil_id",
    "ks2_reading_fine",
    "ks2_maths_fine",
    "gender",
    "ethnicity_code",
    "eal_flag",
    "sen_flag",
    "fsm_flag",
    "deprivation_decile",
    "ks1_score",
    "month_of_birth",
]
QUALIFICATION_COLUMNS = ["pupil_id", "subject_code", "points"]
ENROLLMENT_COLUMNS = ["pupil_id", "school_id", "years_enrolled", "is_final_school"]
CATALOG_COLUMNS = ["subject_code", "eligibility"]

COHORT_FILES = {
    "pupils": "pupils.csv",
    "qualifications": "qualifications.csv",
    "enrollments": "enrollments.csv",
    "catalog": "subject_catalog.csv",
}

_TRUE_TOKENS = {"1", "true", "yes", "y"}
_FALSE_TOKENS = {"0", "false", "no", "n"}


@dataclass(frozen=True)
class RowError:
    file: str
    line: int
    reason: str


@dataclass
class IngestionReport:
    rows_presented: dict[str, int] = field(default_factory=dict)
    rows_ingested: dict[str, int] = field(default_factory=dict)
    errors: list[RowError] = field(default_factory=list)
    dropped_pupils: list[ValidationIssue] = field(default_factory=list)

    def rejected(self, file: str) -> int:
        return sum(1 for e in self.errors if e.file == file)

    def ok(self) -> bool:
        return not self.errors and not self.dropped_pupils


class _Rejection(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _parse_float(raw: str, label: str) -> float | None:
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise _Rejection(f"{label} {raw!r} is not numeric") from None


def _parse_int(raw: str, label: str) -> int | None:
    if raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise _Rejection(f"{label} {raw!r} is not an integer") from None


def _parse_bool(raw: str, label: str) -> bool | None:
    if raw == "":
        return None
    token = raw.strip().lower()
    if token in _TRUE_TOKENS:
        return True
    if token in _FALSE_TOKENS:
        return False
    raise _Rejection(f"{label} {raw!r} is not a boolean")


def _read_rows(path: str, expected_header: list[str]):
    """Yield (line_number, row_dict); raises CohortError on a bad header."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file, expected header {expected_header}")
        if header != expected_header:
            raise CohortError(
                f"{path}: header {header} does not match expected {expected_header}"
            )
        for line_no, row in enumerate(reader, start=2):
            yield line_no, row


def _load_catalog(path: str, report: IngestionReport) -> dict[str, str]:
    name = os.path.basename(path)
    catalog: dict[str, str] = {}
    n_presented = n_ingested = 0
    for line_no, row in _read_rows(path, CATALOG_COLUMNS):
        n_presented += 1
        if len(row) != len(CATALOG_COLUMNS):
            report.errors.append(RowError(name, line_no, f"expected {len(CATALOG_COLUMNS)} fields, got {len(row)}"))
            continue
        code, eligibility = row
        if not code:
            report.errors.append(RowError(name, line_no, "empty subject_code"))
            continue
        if code in catalog:
            report.errors.append(RowError(name, line_no, f"duplicate subject_code {code}"))
            continue
        if eligibility not in ELIGIBILITIES:
            report.errors.append(RowError(name, line_no, f"unknown eligibility {eligibility!r}"))
            continue
        catalog[code] = eligibility
        n_ingested += 1
    report.rows_presented[name] = n_presented
    report.rows_ingested[name] = n_ingested
    return catalog


def _load_pupils(path: str, ks2_range, report: IngestionReport) -> dict[str, PupilRecord]:
    name = os.path.basename(path)
    low, high = ks2_range
    pupils: dict[str, PupilRecord] = {}
    n_presented = n_ingested = 0
    for line_no, row in _read_rows(path, PUPIL_COLUMNS):
        n_presented += 1
        try:
            if len(row) != len(PUPIL_COLUMNS):
                raise _Rejection(f"expected {len(PUPIL_COLUMNS)} fields, got {len(row)}")
            rec = dict(zip(PUPIL_COLUMNS, row))
            pid = rec["pupil_id"]
            if not pid:
                raise _Rejection("empty pupil_id")
            if pid in pupils:
                raise _Rejection(f"duplicate pupil_id {pid}")
            reading = _parse_float(rec["ks2_reading_fine"], "ks2_reading_fine")
            maths = _parse_float(rec["ks2_maths_fine"], "ks2_maths_fine")
            for grade, label in ((reading, "ks2_reading_fine"), (maths, "ks2_maths_fine")):
                if grade is not None and not low <= grade <= high:
                    raise _Rejection(f"{label} {grade} outside [{low}, {high}]")
            decile = _parse_int(rec["deprivation_decile"], "deprivation_decile")
            if decile is not None and not 1 <= decile <= 10:
                raise _Rejection(f"deprivation_decile {decile} outside [1, 10]")
            month = _parse_int(rec["month_of_birth"], "month_of_birth")
            if month is not None and not 1 <= month <= 12:
                raise _Rejection(f"month_of_birth {month} outside [1, 12]")
            background = BackgroundProfile(
                gender=rec["gender"] or None,
                ethnicity_code=rec["ethnicity_code"] or None,
                eal_flag=_parse_bool(rec["eal_flag"], "eal_flag"),
                sen_flag=_parse_bool(rec["sen_flag"], "sen_flag"),
                fsm_flag=_parse_bool(rec["fsm_flag"], "fsm_flag"),
                deprivation_decile=decile,
                ks1_score=_parse_float(rec["ks1_score"], "ks1_score"),
                month_of_birth=month,
            )
        except _Rejection as exc:
            report.errors.append(RowError(name, line_no, exc.reason))
            continue
        pupils[pid] = PupilRecord(
            pupil_id=pid,
            ks2_reading_fine=reading,
            ks2_maths_fine=maths,
            background=background,
        )
        n_ingested += 1
    report.rows_presented[name] = n_presented
    report.rows_ingested[name] = n_ingested
    return pupils


def _load_qualifications(path, pupils, catalog, report: IngestionReport) -> None:
    name = os.path.basename(path)
    n_presented = n_ingested = 0
    for line_no, row in _read_rows(path, QUALIFICATION_COLUMNS):
        n_presented += 1
        try:
            if len(row) != len(QUALIFICATION_COLUMNS):
                raise _Rejection(f"expected {len(QUALIFICATION_COLUMNS)} fields, got {len(row)}")
            pid, code, raw_points = row
            pupil = pupils.get(pid)
            if pupil is None:
                raise _Rejection(f"unknown pupil_id {pid}")
            if code not in catalog:
                raise _Rejection(f"unresolvable subject_code {code}")
            points = _parse_float(raw_points, "points")
            if points is None:
                raise _Rejection("empty points")
            if points < 0:
                raise _Rejection(f"negative points {points}")
        except _Rejection as exc:
            report.errors.append(RowError(name, line_no, exc.reason))
            continue
        pupil.qualifications.append(QualificationResult(code, points))
        n_ingested += 1
    report.rows_presented[name] = n_presented
    report.rows_ingested[name] = n_ingested


def _load_enrollments(path, pupils, report: IngestionReport) -> None:
    name = os.path.basename(path)
    n_presented = n_ingested = 0
    year_totals: dict[str, float] = {}
    finals_seen: set[str] = set()
    for line_no, row in _read_rows(path, ENROLLMENT_COLUMNS):
        n_presented += 1
        try:
            if len(row) != len(ENROLLMENT_COLUMNS):
                raise _Rejection(f"expected {len(ENROLLMENT_COLUMNS)} fields, got {len(row)}")
            pid, school_id, raw_years, raw_final = row
            pupil = pupils.get(pid)
            if pupil is None:
                raise _Rejection(f"unknown pupil_id {pid}")
            if not school_id:
                raise _Rejection("empty school_id")
            years = _parse_float(raw_years, "years_enrolled")
            if years is None:
                raise _Rejection("empty years_enrolled")
            if years < 0:
                raise _Rejection(f"negative years_enrolled {years}")
            final = _parse_bool(raw_final, "is_final_school")
            if final is None:
                raise _Rejection("empty is_final_school")
            if final and pid in finals_seen:
                raise _Rejection(f"second final school for pupil {pid}")
            total = year_totals.get(pid, 0.0) + years
            if total > MAX_ENROLLMENT_YEARS + 1e-9:
                raise _Rejection(
                    f"enrollment years for pupil {pid} sum to {total}, above {MAX_ENROLLMENT_YEARS}"
                )
        except _Rejection as exc:
            report.errors.append(RowError(name, line_no, exc.reason))
            continue
        year_totals[pid] = total
        if final:
            finals_seen.add(pid)
        pupil.enrollments.append(EnrollmentSpan(school_id, years, final))
        n_ingested += 1
    report.rows_presented[name] = n_presented
    report.rows_ingested[name] = n_ingested


def load_cohort(
    pupils_file: str,
    qualifications_file: str,
    enrollments_file: str,
    catalog_file: str,
    year_label: str = "cohort",
    ks2_range: tuple[float, float] = DEFAULT_KS2_RANGE,
) -> tuple[CohortDataset, IngestionReport]:
    """Load and validate a cohort from its four CSV files.

    Returns the dataset plus an ingestion report. Pupils that survive row
    ingestion but end up structurally incomplete (no final school) are dropped
    and listed in the report rather than failing the load.
    """
    for path in (pupils_file, qualifications_file, enrollments_file, catalog_file):
        if not os.path.exists(path):
            raise CohortError(f"input file not found: {path}")
    report = IngestionReport()
    catalog = _load_catalog(catalog_file, report)
    pupils = _load_pupils(pupils_file, ks2_range, report)
    _load_qualifications(qualifications_file, pupils, catalog, report)
    _load_enrollments(enrollments_file, pupils, report)

    kept: list[PupilRecord] = []
    for pid in sorted(pupils):
        pupil = pupils[pid]
        finals = sum(1 for s in pupil.enrollments if s.is_final_school)
        if finals != 1:
            report.dropped_pupils.append(
                ValidationIssue(pid, f"expected exactly 1 final school, got {finals}")
            )
            continue
        kept.append(pupil)
    cohort = CohortDataset(year_label=year_label, pupils=kept, subject_catalog=catalog)
    remaining = validate_cohort(cohort, ks2_range)
    if remaining:
        first = remaining[0]
        raise CohortError(
            f"cohort failed validation after ingestion ({len(remaining)} issues; "
            f"first: pupil {first.pupil_id}: {first.reason})"
        )
    return cohort, report


# --- canonical emission -----------------------------------------------------


def format_number(value) -> str:
    """Shortest exact decimal form: ints bare, floats via repr round-trip."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _canonical_rows(cohort: CohortDataset):
    pupil_rows = []
    qualification_rows = []
    enrollment_rows = []
    for pupil in sorted(cohort.pupils, key=lambda p: p.pupil_id):
        b = pupil.background
        pupil_rows.append(
            [
                pupil.pupil_id,
                format_number(pupil.ks2_reading_fine),
                format_number(pupil.ks2_maths_fine),
                b.gender or "",
                b.ethnicity_code or "",
                format_number(b.eal_flag),
                format_number(b.sen_flag),
                format_number(b.fsm_flag),
                format_number(b.deprivation_decile),
                format_number(b.ks1_score),
                format_number(b.month_of_birth),
            ]
        )
        for qual in sorted(pupil.qualifications, key=lambda q: (q.subject_code, -q.points)):
            qualification_rows.append(
                [pupil.pupil_id, qual.subject_code, format_number(qual.points)]
            )
        for span in sorted(pupil.enrollments, key=lambda s: (not s.is_final_school, s.school_id)):
            enrollment_rows.append(
                [
                    pupil.pupil_id,
                    span.school_id,
                    format_number(span.years_enrolled),
                    format_number(span.is_final_school),
                ]
            )
    catalog_rows = [[code, cohort.subject_catalog[code]] for code in sorted(cohort.subject_catalog)]
    return pupil_rows, qualification_rows, enrollment_rows, catalog_rows


def write_csv(path: str, header: list[str], rows) -> None:
    """RFC-4180 writer with LF endings; the shared canonical output routine."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(buffer.getvalue())


def write_cohort(cohort: CohortDataset, out_dir: str) -> dict[str, str]:
    """Emit the four cohort CSVs in canonical form; returns name → path."""
    os.makedirs(out_dir, exist_ok=True)
    pupil_rows, qualification_rows, enrollment_rows, catalog_rows = _canonical_rows(cohort)
    spec = [
        ("pupils", PUPIL_COLUMNS, pupil_rows),
        ("qualifications", QUALIFICATION_COLUMNS, qualification_rows),
        ("enrollments", ENROLLMENT_COLUMNS, enrollment_rows),
        ("catalog", CATALOG_COLUMNS, catalog_rows),
    ]
    paths = {}
    for key, header, rows in spec:
        path = os.path.join(out_dir, COHORT_FILES[key])
        write_csv(path, header, rows)
        paths[key] = path
    return paths
