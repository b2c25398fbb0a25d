"""Effect sizes, months of progress, percentiles, dispersion, national block."""

import math

import pytest

from progress8.interpret import (
    dispersion_report,
    effect_size,
    interpretation_rows,
    months_progress,
    national_summary,
    percentile_rank,
)
from progress8.scoring import PupilP8, SchoolP8


def test_effect_size_is_sd_units():
    assert effect_size(0.54, 2.0) == pytest.approx(0.27)
    assert effect_size(-0.54, 2.0) == pytest.approx(-0.27)
    assert effect_size(0.0, 1.5) == 0.0
    with pytest.raises(ValueError):
        effect_size(0.5, 0.0)
    with pytest.raises(ValueError):
        effect_size(0.5, -1.0)


def test_months_depend_on_annual_gain_assumption():
    brisk = months_progress(0.27, 1.0)
    slow = months_progress(0.27, 0.4)
    assert brisk.months_exact == pytest.approx(3.24)
    assert brisk.months_rounded == 3
    assert slow.months_exact == pytest.approx(8.1)
    assert slow.months_rounded == 8
    assert slow.annual_gain_sd == 0.4


def test_months_rounding_is_half_away_from_zero():
    # 12 × 0.375 = 4.5 exactly (dyadic), so the half-case is genuine
    assert months_progress(0.375, 1.0).months_rounded == 5
    assert months_progress(-0.375, 1.0).months_rounded == -5
    assert months_progress(-0.27, 1.0).months_rounded == -3
    assert months_progress(0.0, 0.4).months_rounded == 0


def test_months_rejects_nonpositive_gain():
    with pytest.raises(ValueError):
        months_progress(0.2, 0.0)
    with pytest.raises(ValueError):
        months_progress(0.2, -0.4)


def test_percentile_mid_rank():
    assert percentile_rank([1.0, 2.0, 3.0, 4.0], 2.0) == pytest.approx(37.5)
    assert percentile_rank([1.0, 2.0, 2.0, 3.0], 2.0) == pytest.approx(50.0)
    assert percentile_rank([1.0, 2.0, 3.0], 2.5) == pytest.approx(200.0 / 3.0)
    assert percentile_rank([5.0], 5.0) == pytest.approx(50.0)
    assert percentile_rank([1.0, 2.0], 9.0) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        percentile_rank([], 1.0)


def test_interpretation_rows_cover_scored_schools():
    schools = [
        SchoolP8("C", 0.54, 100),
        SchoolP8("A", -0.27, 80),
        SchoolP8("B", 0.0, 90),
        SchoolP8("EMPTY", None, 0),
    ]
    rows = interpretation_rows(schools, national_sd_per_subject=2.0)
    assert [r.school_id for r in rows] == ["A", "B", "C"]
    by = {r.school_id: r for r in rows}
    assert by["C"].effect_size == pytest.approx(0.27)
    assert by["C"].months[1.0].months_rounded == 3
    assert by["C"].months[0.4].months_rounded == 8
    assert set(by["C"].months) == {1.0, 0.4}
    # percentiles over the three scored schools only
    assert by["A"].percentile == pytest.approx(100.0 / 6.0)
    assert by["B"].percentile == pytest.approx(50.0)
    assert by["C"].percentile == pytest.approx(500.0 / 6.0)


def test_dispersion_within_sd_and_tails():
    scores = [
        PupilP8("P1", 5, -1.5, -1.5),
        PupilP8("P2", 5, -0.5, -0.5),
        PupilP8("P3", 5, 0.5, 0.5),
        PupilP8("P4", 5, 1.5, 1.5),
        PupilP8("P5", 5, 0.2, 0.2),
    ]
    roster = {"P1": "A", "P2": "A", "P3": "A", "P4": "A", "P5": "B"}
    rows = dispersion_report(scores, roster)
    by = {r.school_id: r for r in rows}
    # school A: mean 0, SD √(5/3) on the four symmetric values
    assert by["A"].within_sd == pytest.approx(math.sqrt(5.0 / 3.0))
    assert by["A"].frac_below_low == pytest.approx(0.25)
    assert by["A"].frac_above_high == pytest.approx(0.25)
    # single pupil: spread undefined, tails still counted
    assert by["B"].within_sd is None
    assert by["B"].n == 1
    assert by["B"].frac_below_low == 0.0


def test_dispersion_cutoffs_are_strict():
    scores = [PupilP8("P1", 5, -1.0, -1.0), PupilP8("P2", 5, 1.0, 1.0)]
    rows = dispersion_report(scores, {"P1": "A", "P2": "A"})
    # values sitting exactly on a cutoff belong to the middle
    assert rows[0].frac_below_low == 0.0
    assert rows[0].frac_above_high == 0.0
    with pytest.raises(ValueError):
        dispersion_report(scores, {"P1": "A", "P2": "A"}, cutoffs=(1.0, 1.0))


def test_national_summary_counterfactual_uplift():
    pupil_scores = [PupilP8(f"P{i}", 5, 0.0, 0.0) for i in range(4)]
    a8_totals = {"P0": 48.0, "P1": 52.0, "P2": 49.0, "P3": 51.0}
    schools = [
        SchoolP8("GOOD", 0.1, 900, banding="Above"),
        SchoolP8("WEAK", -0.5, 100, banding="Below"),
        SchoolP8("EMPTY", None, 0),
    ]
    summary = national_summary(pupil_scores, schools, a8_totals, sigma=1.29, vpc=0.1)
    assert summary.n_pupils == 1000
    assert summary.n_schools == 2
    assert summary.mean_a8 == pytest.approx(50.0)
    # lifting the one negative school to zero moves the nation half a point
    assert summary.counterfactual_uplift == pytest.approx(0.5)
    assert summary.counterfactual_mean_a8 == pytest.approx(50.5)
    assert summary.banding_shares == {"Above": 0.5, "Below": 0.5}
    assert summary.sigma == 1.29
    assert summary.vpc == 0.1
    assert summary.capped_fraction is None


def test_national_summary_no_negative_schools_no_uplift():
    pupil_scores = [PupilP8("P0", 5, 0.0, 0.0)]
    schools = [SchoolP8("A", 0.2, 50, banding="Above")]
    summary = national_summary(pupil_scores, schools, {"P0": 50.0}, sigma=1.3)
    assert summary.counterfactual_uplift == 0.0
    assert summary.counterfactual_mean_a8 == summary.mean_a8
    assert summary.banding_shares == {"Above": 1.0}
