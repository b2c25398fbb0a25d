"""Uncertainty corrections beyond the single-school interval: multiplier
conventions, family-wise adjustment, pairwise comparison, and funnel limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import norm_cdf, norm_ppf
from .scoring import ci_multiplier

__all__ = [
    "BonferroniAdjustment",
    "PairwiseComparison",
    "GoldsteinHealyResult",
    "FunnelData",
    "ci_multiplier",
    "bonferroni_level",
    "pairwise_compare",
    "goldstein_healy_intervals",
    "funnel_limits",
]


@dataclass(frozen=True)
class BonferroniAdjustment:
    family_size: int
    base_alpha: float
    per_test_alpha: float
    multiplier: float


def bonferroni_level(family_size: int, base_alpha: float = 0.05) -> BonferroniAdjustment:
    """Per-test level α/J and its two-sided normal multiplier.

    With J tests under a global null, the unadjusted procedure expects α·J
    false flags; dividing the level by J bounds the family-wise error at α.
    """
    if family_size < 1:
        raise ValueError(f"family size must be ≥ 1, got {family_size}")
    if not 0.0 < base_alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {base_alpha}")
    per_test = base_alpha / family_size
    return BonferroniAdjustment(
        family_size=family_size,
        base_alpha=base_alpha,
        per_test_alpha=per_test,
        multiplier=norm_ppf(1.0 - per_test / 2.0),
    )


@dataclass(frozen=True)
class PairwiseComparison:
    school_a: str
    school_b: str
    diff: float
    se_diff: float
    z_stat: float
    p_value: float
    significant_at_level: bool
    prob_a_exceeds_b: float
    level: float
    family_size: int


def pairwise_compare(a, b, level: float = 0.95, family_size: int | None = None) -> PairwiseComparison:
    """Exact two-school comparison on the difference scale.

    Overlapping single-school intervals do not settle this question; the
    difference has its own standard error √(se_a² + se_b²). The probability
    statement Φ(z) reads as "chance school a truly exceeds school b" under a
    flat prior. With family_size set, significance is gated at the
    Bonferroni-divided level while p_value stays unadjusted.
    """
    diff = a.score - b.score
    se_diff = math.sqrt(a.se**2 + b.se**2)
    if se_diff == 0.0:
        if diff != 0.0:
            raise ValueError(
                f"zero combined SE with nonzero difference for {a.school_id} vs {b.school_id}"
            )
        z = 0.0
    else:
        z = diff / se_diff
    p = 2.0 * (1.0 - norm_cdf(abs(z)))
    alpha = 1.0 - level
    J = family_size if family_size is not None else 1
    threshold = bonferroni_level(J, alpha).per_test_alpha if J > 1 else alpha
    return PairwiseComparison(
        school_a=a.school_id,
        school_b=b.school_id,
        diff=diff,
        se_diff=se_diff,
        z_stat=z,
        p_value=p,
        significant_at_level=p < threshold,
        prob_a_exceeds_b=norm_cdf(z),
        level=level,
        family_size=J,
    )


@dataclass(frozen=True)
class GoldsteinHealyResult:
    k: float
    level: float
    rows: list  # (school_id, score, half_width, low, high)


def goldstein_healy_intervals(schools, level: float = 0.95) -> GoldsteinHealyResult:
    """Common interval rescaling for visual pairwise comparison.

    Intervals of half-width k·se are drawn so that, for the average pair, two
    just-touching intervals correspond to a borderline-significant difference:
    k = mean over pairs of z·√(se_a²+se_b²)/(se_a+se_b). With equal SEs this
    is z/√2 ≈ 1.39 at 95% — noticeably shorter than the familiar 1.96
    interval. Exact per-pair statements remain available via pairwise_compare.
    """
    usable = [s for s in schools if s.se is not None and s.score is not None]
    if len(usable) < 2:
        raise ValueError(f"need ≥2 schools with standard errors, got {len(usable)}")
    z = norm_ppf(0.5 * (1.0 + level))
    se = np.array([s.se for s in usable], dtype=float)
    total = 0.0
    count = 0
    chunk = 512
    for start in range(0, len(se), chunk):
        block = se[start : start + chunk]
        pair_se = np.sqrt(block[:, None] ** 2 + se[None, :] ** 2)
        ratio = pair_se / (block[:, None] + se[None, :])
        # Sum strictly-upper-triangle pairs only, without forming the full
        # J×J mask at once.
        for i, row in enumerate(ratio):
            global_i = start + i
            total += float(np.sum(row[global_i + 1 :]))
            count += len(se) - global_i - 1
    k = z * total / count
    rows = [
        (s.school_id, s.score, k * s.se, s.score - k * s.se, s.score + k * s.se)
        for s in usable
    ]
    return GoldsteinHealyResult(k=k, level=level, rows=rows)


@dataclass
class FunnelData:
    center: float
    rows: list  # (n, lower, upper, level)
    sigma: float


def funnel_limits(
    sigma: float,
    n_grid: Sequence[int],
    levels: Sequence[float] = (0.95, 0.998),
    convention: str = "z",
) -> FunnelData:
    """Control limits ±m(level)·σ/√n around zero for a score-vs-size funnel."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not n_grid:
        raise ValueError("empty n grid")
    rows = []
    for level in levels:
        for n in sorted(n_grid):
            m = ci_multiplier(int(n), convention, level)
            half = m * sigma / math.sqrt(n)
            rows.append((int(n), -half, half, level))
    return FunnelData(center=0.0, rows=rows, sigma=sigma)
