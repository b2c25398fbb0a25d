"""Family-wise correction, pairwise comparison, shared-width intervals, funnels."""

import math

import numpy as np
import pytest

from progress8.inference import (
    bonferroni_level,
    funnel_limits,
    goldstein_healy_intervals,
    pairwise_compare,
)
from progress8.scoring import SchoolP8

Z95 = 1.959963984540054


def school(sid, score, se, n=100):
    return SchoolP8(sid, score, n, se=se)


def test_bonferroni_divides_alpha():
    adj = bonferroni_level(3000, 0.05)
    assert adj.per_test_alpha == pytest.approx(0.05 / 3000)
    assert adj.multiplier == pytest.approx(4.305423384962419, abs=1e-9)
    assert adj.family_size == 3000
    assert adj.base_alpha == 0.05


def test_bonferroni_family_of_one_is_identity():
    adj = bonferroni_level(1, 0.05)
    assert adj.per_test_alpha == pytest.approx(0.05)
    assert adj.multiplier == pytest.approx(Z95, abs=1e-9)


def test_bonferroni_rejects_bad_input():
    with pytest.raises(ValueError):
        bonferroni_level(0)
    with pytest.raises(ValueError):
        bonferroni_level(10, 0.0)
    with pytest.raises(ValueError):
        bonferroni_level(10, 1.0)


def test_pairwise_difference_scale():
    a = school("A", 0.5, 0.1)
    b = school("B", 0.0, 0.1)
    cmp = pairwise_compare(a, b)
    assert cmp.diff == pytest.approx(0.5)
    assert cmp.se_diff == pytest.approx(math.sqrt(0.02))
    assert cmp.z_stat == pytest.approx(3.5355339059327378)
    assert cmp.p_value == pytest.approx(0.00040695201744500586, abs=1e-12)
    assert cmp.prob_a_exceeds_b == pytest.approx(0.9997965239912775, abs=1e-12)
    assert cmp.significant_at_level


def test_pairwise_overlapping_intervals_can_still_differ():
    # individual 95% intervals overlap (0.2±0.196 vs 0.0±0.196) yet the
    # difference is far from significant — and the converse failure mode is
    # why comparisons must run on the difference scale
    a = school("A", 0.2, 0.1)
    b = school("B", 0.0, 0.1)
    cmp = pairwise_compare(a, b)
    assert cmp.z_stat == pytest.approx(math.sqrt(2.0))
    assert cmp.p_value == pytest.approx(0.157299207050285, abs=1e-12)
    assert cmp.prob_a_exceeds_b == pytest.approx(0.9213503964748575, abs=1e-12)
    assert not cmp.significant_at_level


def test_pairwise_family_gate_keeps_p_value_unadjusted():
    a = school("A", 0.5, 0.1)
    b = school("B", 0.0, 0.1)
    alone = pairwise_compare(a, b)
    few = pairwise_compare(a, b, family_size=100)
    many = pairwise_compare(a, b, family_size=1000)
    # p ≈ 4.07e-4 clears 0.05 and 5e-4 but not 5e-5
    assert alone.significant_at_level
    assert few.significant_at_level
    assert not many.significant_at_level
    assert alone.p_value == few.p_value == many.p_value


def test_pairwise_zero_se_conventions():
    tied = pairwise_compare(school("A", 0.3, 0.0), school("B", 0.3, 0.0))
    assert tied.z_stat == 0.0
    assert tied.p_value == pytest.approx(1.0)
    assert tied.prob_a_exceeds_b == pytest.approx(0.5)
    with pytest.raises(ValueError):
        pairwise_compare(school("A", 0.3, 0.0), school("B", 0.2, 0.0))


def test_goldstein_healy_equal_se_shrinks_to_z_over_root2():
    schools = [school(f"S{i}", 0.1 * i, 0.08) for i in range(5)]
    gh = goldstein_healy_intervals(schools)
    assert gh.k == pytest.approx(Z95 / math.sqrt(2.0), abs=1e-9)
    assert gh.k < Z95  # visibly shorter than the familiar per-school interval
    for sid, score, half, low, high in gh.rows:
        assert half == pytest.approx(gh.k * 0.08)
        assert low == pytest.approx(score - half)
        assert high == pytest.approx(score + half)


def test_goldstein_healy_two_school_hand_value():
    gh = goldstein_healy_intervals([school("A", 0.0, 0.1), school("B", 0.5, 0.3)])
    assert gh.k == pytest.approx(Z95 * math.sqrt(0.1) / 0.4, abs=1e-12)


def test_goldstein_healy_matches_bruteforce_pair_mean():
    rng = np.random.default_rng(31)
    ses = rng.uniform(0.05, 0.4, size=600)  # crosses the internal block size
    schools = [school(f"S{i:03d}", 0.0, float(s)) for i, s in enumerate(ses)]
    gh = goldstein_healy_intervals(schools, level=0.9)
    z = 1.6448536269514722
    total = 0.0
    count = 0
    for i in range(len(ses)):
        for j in range(i + 1, len(ses)):
            total += math.sqrt(ses[i] ** 2 + ses[j] ** 2) / (ses[i] + ses[j])
            count += 1
    assert gh.k == pytest.approx(z * total / count, abs=1e-9)


def test_goldstein_healy_needs_two_usable():
    with pytest.raises(ValueError):
        goldstein_healy_intervals([school("A", 0.1, 0.1)])
    with pytest.raises(ValueError):
        goldstein_healy_intervals(
            [school("A", 0.1, 0.1), SchoolP8("B", None, 0)]
        )


def test_funnel_limits_shape_and_formula():
    funnel = funnel_limits(1.29, [25, 100, 400])
    assert funnel.center == 0.0
    assert len(funnel.rows) == 6  # two levels × three sizes
    by_level = {}
    for n, low, high, level in funnel.rows:
        assert low == pytest.approx(-high)
        by_level.setdefault(level, []).append((n, high))
    for level, expect_z in ((0.95, Z95), (0.998, 3.090232306167813)):
        rows = by_level[level]
        assert [n for n, _ in rows] == [25, 100, 400]
        for n, high in rows:
            assert high == pytest.approx(expect_z * 1.29 / math.sqrt(n), abs=1e-9)
        # limits tighten as schools grow
        widths = [h for _, h in rows]
        assert widths == sorted(widths, reverse=True)
    # the outer band is everywhere wider
    inner = dict(by_level[0.95])
    outer = dict(by_level[0.998])
    assert all(outer[n] > inner[n] for n in inner)


def test_funnel_t_convention_wider_than_z():
    z_funnel = funnel_limits(1.0, [50], levels=(0.95,))
    t_funnel = funnel_limits(1.0, [50], levels=(0.95,), convention="t_df_n_minus_1")
    (_, _, z_high, _), = z_funnel.rows
    (_, _, t_high, _), = t_funnel.rows
    assert t_high == pytest.approx(2.0095752371292397 / math.sqrt(50), abs=1e-6)
    assert t_high > z_high


def test_funnel_rejects_bad_input():
    with pytest.raises(ValueError):
        funnel_limits(0.0, [10])
    with pytest.raises(ValueError):
        funnel_limits(1.0, [])


def test_null_schools_flag_at_nominal_rate_until_corrected():
    rng = np.random.default_rng(404)
    J = 5000
    z_scores = rng.normal(0.0, 1.0, size=J)  # true effect zero everywhere
    plain = np.mean(np.abs(z_scores) > Z95)
    adjusted = bonferroni_level(J, 0.05)
    corrected = np.mean(np.abs(z_scores) > adjusted.multiplier)
    assert 0.04 < plain < 0.06
    assert corrected <= 0.001
