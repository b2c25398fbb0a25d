"""Multi-year averaging and between-year stability of school scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import norm_ppf

__all__ = [
    "YearScore",
    "PooledScore",
    "StabilityCell",
    "StabilityMatrix",
    "meta_average",
    "pool_panel",
    "stability_correlations",
]

MIN_COMMON_SCHOOLS = 3


@dataclass(frozen=True)
class YearScore:
    school_id: str
    year_label: str
    score: float
    se: float
    n: int


@dataclass
class PooledScore:
    school_id: str
    pooled: float
    se: float
    ci_low: float
    ci_high: float
    years_included: list[str]
    weights: dict[str, float]  # normalized, sum to 1
    scheme: str


def meta_average(
    series: list[YearScore],
    scheme: str = "inverse_variance",
    decay: float = 1.0,
    level: float = 0.95,
) -> PooledScore:
    """Fixed-effect pooling of one school's scores across years.

    Weights are 1/se² (inverse variance), optionally times decay^age where
    age counts years back from the latest in the series — the gentle way to
    favor recent performance without discarding history. The pooled SE
    √(Σw²se²)/Σw reduces to 1/√(Σ 1/se²) under pure inverse-variance
    weights, so a pooled interval is never wider than the best single year.
    """
    if not series:
        raise ValueError("empty year series")
    ids = {y.school_id for y in series}
    if len(ids) != 1:
        raise ValueError(f"series mixes schools {sorted(ids)}")
    if scheme not in ("inverse_variance", "recency_weighted"):
        raise ValueError(f"unknown pooling scheme {scheme!r}")
    if scheme == "inverse_variance":
        decay = 1.0
    elif not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must lie in (0, 1], got {decay}")
    ordered = sorted(series, key=lambda y: y.year_label)
    weights = []
    for y in ordered:
        if y.se <= 0:
            raise ValueError(f"{y.school_id} {y.year_label}: SE must be positive")
        age = sum(1 for other in ordered if other.year_label > y.year_label)
        weights.append((decay**age) / (y.se**2))
    total = sum(weights)
    pooled = sum(w * y.score for w, y in zip(weights, ordered)) / total
    se = math.sqrt(sum((w * y.se) ** 2 for w, y in zip(weights, ordered))) / total
    z = norm_ppf(0.5 * (1.0 + level))
    return PooledScore(
        school_id=ordered[0].school_id,
        pooled=pooled,
        se=se,
        ci_low=pooled - z * se,
        ci_high=pooled + z * se,
        years_included=[y.year_label for y in ordered],
        weights={y.year_label: w / total for w, y in zip(weights, ordered)},
        scheme=scheme,
    )


def pool_panel(
    panel: list[YearScore],
    scheme: str = "inverse_variance",
    decay: float = 1.0,
    level: float = 0.95,
) -> list[PooledScore]:
    """meta_average per school over a whole panel, sorted by school_id."""
    by_school: dict[str, list[YearScore]] = {}
    for y in panel:
        by_school.setdefault(y.school_id, []).append(y)
    return [
        meta_average(by_school[s], scheme=scheme, decay=decay, level=level)
        for s in sorted(by_school)
    ]


@dataclass(frozen=True)
class StabilityCell:
    year_a: str
    year_b: str
    r: float | None
    n_common: int
    reason: str | None = None  # set when r is omitted


@dataclass
class StabilityMatrix:
    years: list[str]
    cells: list[StabilityCell]

    def lookup(self, a: str, b: str) -> StabilityCell:
        if a == b:
            n = next((c.n_common for c in self.cells if a in (c.year_a, c.year_b)), 0)
            return StabilityCell(a, a, 1.0, n)
        for c in self.cells:
            if {c.year_a, c.year_b} == {a, b}:
                return c
        raise KeyError(f"no cell for {a} vs {b}")


def stability_correlations(panel: list[YearScore]) -> StabilityMatrix:
    """Pairwise-complete Pearson correlations of school scores across years.

    Each year pair correlates over exactly the schools present in both years,
    so per-pair sample sizes differ — the honest treatment when schools open,
    close, or are suppressed in some years. Pairs with fewer than three common
    schools are reported without a coefficient.
    """
    years = sorted({y.year_label for y in panel})
    if len(years) < 2:
        raise ValueError(f"need ≥2 years, got {len(years)}")
    by_year: dict[str, dict[str, float]] = {y: {} for y in years}
    for row in panel:
        by_year[row.year_label][row.school_id] = row.score
    cells = []
    for i, year_a in enumerate(years):
        for year_b in years[i + 1 :]:
            common = sorted(set(by_year[year_a]) & set(by_year[year_b]))
            if len(common) < MIN_COMMON_SCHOOLS:
                cells.append(
                    StabilityCell(
                        year_a, year_b, None, len(common),
                        reason=f"only {len(common)} common schools (< {MIN_COMMON_SCHOOLS})",
                    )
                )
                continue
            x = np.array([by_year[year_a][s] for s in common])
            y = np.array([by_year[year_b][s] for s in common])
            if float(np.std(x)) == 0.0 or float(np.std(y)) == 0.0:
                cells.append(
                    StabilityCell(year_a, year_b, None, len(common), reason="degenerate variance")
                )
                continue
            cells.append(
                StabilityCell(year_a, year_b, float(np.corrcoef(x, y)[0, 1]), len(common))
            )
    return StabilityMatrix(years, cells)
