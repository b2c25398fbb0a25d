"""Enrollment-time weighting of pupil scores across schools."""

import math

import pytest

from progress8.cohort import CohortDataset, EnrollmentSpan, PupilRecord
from progress8.mobility import mobility_weighted_p8
from progress8.scoring import NationalStats, PupilP8, school_p8

Z95 = 1.959963984540054


def make(pupil_spans):
    """Cohort + scores from {pid: (score, [(school, years, final)])}."""
    pupils = []
    scores = []
    for pid, (value, spans) in pupil_spans.items():
        pupils.append(
            PupilRecord(
                pid, 100.0, 100.0,
                enrollments=[EnrollmentSpan(s, y, f) for s, y, f in spans],
            )
        )
        scores.append(PupilP8(pid, 18, value, value))
    return CohortDataset("2019", pupils, {}), scores


def test_no_movers_matches_final_school_rule():
    cohort, scores = make(
        {
            "P1": (0.4, [("A", 5.0, True)]),
            "P2": (-0.2, [("A", 5.0, True)]),
            "P3": (0.1, [("B", 5.0, True)]),
        }
    )
    weighted, warnings = mobility_weighted_p8(scores, cohort)
    assert warnings == []
    official = {s.school_id: s for s in school_p8(scores, cohort.final_school_map())}
    assert len(weighted) == 2
    for school in weighted:
        assert school.score == pytest.approx(official[school.school_id].score)
        assert school.effective_n == pytest.approx(school.n)


def test_single_mover_hand_worked():
    cohort, scores = make(
        {
            "X": (0.5, [("A", 3.0, False), ("B", 2.0, True)]),
            "Y": (0.1, [("A", 5.0, True)]),
        }
    )
    weighted, warnings = mobility_weighted_p8(scores, cohort)
    assert warnings == []
    by = {s.school_id: s for s in weighted}
    # X splits 0.6/0.4 over A/B; A also holds all of Y
    assert by["A"].effective_n == pytest.approx(1.6, abs=1e-9)
    assert by["A"].score == pytest.approx((0.6 * 0.5 + 1.0 * 0.1) / 1.6, abs=1e-9)
    assert by["A"].n == 2
    assert by["B"].effective_n == pytest.approx(0.4, abs=1e-9)
    assert by["B"].score == pytest.approx(0.5, abs=1e-9)
    assert by["B"].n == 1


def test_pupil_mass_is_conserved():
    cohort, scores = make(
        {
            "P1": (0.3, [("A", 2.0, False), ("B", 2.0, False), ("C", 1.0, True)]),
            "P2": (-0.5, [("B", 4.0, True)]),
            "P3": (0.0, [("A", 2.5, False), ("C", 2.5, True)]),
            "P4": (0.9, [("C", 5.0, True)]),
        }
    )
    weighted, _ = mobility_weighted_p8(scores, cohort)
    assert sum(s.effective_n for s in weighted) == pytest.approx(4.0, abs=1e-12)
    # the final-school rule concentrates the same total mass
    official = school_p8(scores, cohort.final_school_map())
    assert sum(s.n for s in official) == 4


def test_zero_years_and_unknown_pupils_excluded_with_warning():
    cohort, scores = make(
        {
            "P1": (0.3, [("A", 0.0, True)]),
            "P2": (0.1, [("A", 5.0, True)]),
        }
    )
    scores.append(PupilP8("GHOST", 18, 0.2, 0.2))
    weighted, warnings = mobility_weighted_p8(scores, cohort)
    assert len(weighted) == 1
    assert weighted[0].score == pytest.approx(0.1)
    assert weighted[0].effective_n == pytest.approx(1.0)
    assert any("zero enrollment years" in w and "P1" in w for w in warnings)
    assert any("no enrollment record" in w and "GHOST" in w for w in warnings)


def test_fractional_years_split_evenly():
    cohort, scores = make({"P1": (0.8, [("A", 2.5, False), ("B", 2.5, True)])})
    weighted, _ = mobility_weighted_p8(scores, cohort)
    by = {s.school_id: s for s in weighted}
    assert by["A"].effective_n == pytest.approx(0.5)
    assert by["B"].effective_n == pytest.approx(0.5)
    assert by["A"].score == pytest.approx(0.8)


def test_intervals_use_fractional_mass():
    cohort, scores = make(
        {
            "X": (0.5, [("A", 3.0, False), ("B", 2.0, True)]),
            "Y": (0.1, [("A", 5.0, True)]),
        }
    )
    national = NationalStats(sigma=1.29, mean=0.0, N=5000)
    weighted, _ = mobility_weighted_p8(scores, cohort, national=national)
    by = {s.school_id: s for s in weighted}
    # B holds only 0.4 of a pupil: its interval must reflect that tiny mass
    se_b = 1.29 / math.sqrt(0.4)
    assert by["B"].se == pytest.approx(se_b, abs=1e-9)
    assert by["B"].ci_low == pytest.approx(0.5 - Z95 * se_b, abs=1e-6)
    assert by["B"].ci_high == pytest.approx(0.5 + Z95 * se_b, abs=1e-6)
    assert by["B"].banding == "Average"
    se_a = 1.29 / math.sqrt(1.6)
    assert by["A"].se == pytest.approx(se_a, abs=1e-9)
    assert by["A"].banding is not None


def test_mover_redistributes_between_sending_and_final_school():
    # a weak pupil leaving school A late: the official rule credits the move,
    # the weighted rule leaves most of the outcome with A
    cohort, scores = make(
        {
            "W": (-1.0, [("A", 4.0, False), ("B", 1.0, True)]),
            "P1": (0.2, [("A", 5.0, True)]),
            "P2": (0.3, [("B", 5.0, True)]),
        }
    )
    official = {s.school_id: s for s in school_p8(scores, cohort.final_school_map())}
    weighted, _ = mobility_weighted_p8(scores, cohort)
    by = {s.school_id: s for s in weighted}
    # official: A keeps only its stayer, B absorbs the whole -1.0
    assert official["A"].score == pytest.approx(0.2)
    assert official["B"].score == pytest.approx(-0.35)
    # weighted: A owns 0.8 of the mover, B only 0.2
    assert by["A"].score == pytest.approx((0.8 * -1.0 + 0.2) / 1.8)
    assert by["B"].score == pytest.approx((0.2 * -1.0 + 0.3) / 1.2)
    assert by["A"].score < official["A"].score
    assert by["B"].score > official["B"].score
