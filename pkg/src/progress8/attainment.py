"""Eight-slot qualification filling and Attainment 8 totals.

The filling rule is greedy and provably optimal for this slot structure: each
dedicated slot (English, maths, EBacc) can only lose value by holding anything
other than the best remaining eligible qualification, and the open slots then
take the best leftovers of any eligibility. Tests confirm optimality against
brute-force enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cohort import PupilRecord

__all__ = [
    "SlotConfig",
    "SlotAssignment",
    "Attainment8Result",
    "SchoolAttainment8",
    "OFFICIAL",
    "EBACC_LITE",
    "SLOT_PRESETS",
    "fill_slots",
    "element_score",
    "school_attainment8",
]


@dataclass(frozen=True)
class SlotConfig:
    """Slot counts and double-weighting rules for the eight-slot measure.

    english_double_requires_both mirrors the published condition that English
    counts double only when at least two English-pool qualifications (language
    and literature) are entered; the best one is doubled and the rest stay
    available for the open slots.
    """

    name: str = "official"
    ebacc_slots: int = 3
    open_slots: int = 3
    english_double: bool = True
    maths_double: bool = True
    english_double_requires_both: bool = True

    def __post_init__(self):
        if self.ebacc_slots < 0 or self.open_slots < 0:
            raise ValueError("slot counts must be non-negative")


OFFICIAL = SlotConfig()
EBACC_LITE = SlotConfig(name="ebacc_lite", ebacc_slots=2, open_slots=4)
SLOT_PRESETS = {"official": OFFICIAL, "ebacc_lite": EBACC_LITE}


@dataclass(frozen=True)
class SlotAssignment:
    kind: str  # english | maths | ebacc | open
    subject_code: str | None
    points_contributed: float


@dataclass
class Attainment8Result:
    pupil_id: str
    slot_assignments: list[SlotAssignment] = field(default_factory=list)
    total: float = 0.0

    def element(self, kind: str) -> float:
        return sum(a.points_contributed for a in self.slot_assignments if a.kind == kind)


def _ranked(entries: list[tuple[int, str, float]]) -> list[tuple[int, str, float]]:
    # Descending points, then lexicographic subject_code for determinism.
    return sorted(entries, key=lambda e: (-e[2], e[1]))


def fill_slots(
    pupil: PupilRecord, catalog: dict[str, str], config: SlotConfig = OFFICIAL
) -> Attainment8Result:
    """Assign the pupil's qualifications to slots, maximizing the total.

    Missing qualifications yield empty zero-contribution slots, never errors.
    No qualification occupies two slots; a doubled English or maths entry is a
    single qualification whose contribution counts twice.
    """
    pools: dict[str, list[tuple[int, str, float]]] = {
        "english": [],
        "maths": [],
        "ebacc": [],
        "open": [],
    }
    for idx, qual in enumerate(pupil.qualifications):
        eligibility = catalog[qual.subject_code]
        pools[eligibility].append((idx, qual.subject_code, qual.points))

    used: set[int] = set()
    assignments: list[SlotAssignment] = []

    def fill_dedicated(kind: str, doubled: bool) -> None:
        ranked = _ranked(pools[kind])
        if ranked:
            idx, code, points = ranked[0]
            used.add(idx)
            weight = 2.0 if doubled else 1.0
            assignments.append(SlotAssignment(kind, code, weight * points))
        else:
            assignments.append(SlotAssignment(kind, None, 0.0))

    english_doubled = config.english_double and (
        not config.english_double_requires_both or len(pools["english"]) >= 2
    )
    fill_dedicated("english", english_doubled)
    fill_dedicated("maths", config.maths_double)

    ebacc_ranked = [e for e in _ranked(pools["ebacc"]) if e[0] not in used]
    for slot in range(config.ebacc_slots):
        if slot < len(ebacc_ranked):
            idx, code, points = ebacc_ranked[slot]
            used.add(idx)
            assignments.append(SlotAssignment("ebacc", code, points))
        else:
            assignments.append(SlotAssignment("ebacc", None, 0.0))

    leftovers = _ranked(
        [e for pool in pools.values() for e in pool if e[0] not in used]
    )
    for slot in range(config.open_slots):
        if slot < len(leftovers):
            idx, code, points = leftovers[slot]
            used.add(idx)
            assignments.append(SlotAssignment("open", code, points))
        else:
            assignments.append(SlotAssignment("open", None, 0.0))

    total = sum(a.points_contributed for a in assignments)
    return Attainment8Result(pupil.pupil_id, assignments, total)


def element_score(
    pupil: PupilRecord,
    element: str,
    catalog: dict[str, str],
    config: SlotConfig = OFFICIAL,
) -> float:
    """The (doubled, per config) English or maths slot contribution alone."""
    if element not in ("english", "maths"):
        raise ValueError(f"element must be 'english' or 'maths', got {element!r}")
    return fill_slots(pupil, catalog, config).element(element)


@dataclass(frozen=True)
class SchoolAttainment8:
    school_id: str
    n: int
    mean: float | None  # None flags an empty school, not a zero score

    def published(self) -> str:
        return "" if self.mean is None else f"{self.mean:.1f}"


def school_attainment8(
    results: list[Attainment8Result],
    roster: dict[str, str],
    school_ids: list[str] | None = None,
) -> list[SchoolAttainment8]:
    """Mean pupil total per school; full precision kept, 1 dp when published.

    `roster` maps pupil_id to final school. Schools listed in `school_ids`
    with no pupils appear with an undefined (None) mean.
    """
    totals: dict[str, list[float]] = {}
    for result in results:
        school = roster[result.pupil_id]
        totals.setdefault(school, []).append(result.total)
    ids = sorted(set(totals) | set(school_ids or []))
    out = []
    for school_id in ids:
        values = totals.get(school_id, [])
        mean = sum(values) / len(values) if values else None
        out.append(SchoolAttainment8(school_id, len(values), mean))
    return out
