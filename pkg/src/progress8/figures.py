"""Matplotlib renderings of the standard report artifacts.

These are convenience views of the emitted CSV plot data, not the canonical
interface: any plotting tool can consume the delimited files instead.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_all"]

_DPI = 150


def _save(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_caterpillar(schools, path: str) -> None:
    scored = sorted(
        (s for s in schools if s.score is not None and not s.suppressed),
        key=lambda s: (s.score, s.school_id),
    )
    if not scored:
        return
    x = range(1, len(scored) + 1)
    scores = [s.score for s in scored]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    if all(s.ci_low is not None for s in scored):
        low_err = [s.score - s.ci_low for s in scored]
        high_err = [s.ci_high - s.score for s in scored]
        ax.errorbar(
            x, scores, yerr=[low_err, high_err],
            fmt="o", ms=2.5, lw=0.6, color="#1f5fa8", ecolor="#9bb8d8", capsize=0,
        )
    else:
        ax.plot(x, scores, "o", ms=2.5, color="#1f5fa8")
    ax.axhline(0.0, color="0.3", lw=0.8)
    ax.set_xlabel("rank (lowest to highest)")
    ax.set_ylabel("score (grades per subject)")
    ax.set_title("School scores with 95% intervals")
    _save(fig, path)


def render_funnel(schools, funnel, path: str) -> None:
    scored = [s for s in schools if s.score is not None and not s.suppressed]
    if not scored or funnel is None:
        return
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(
        [s.n for s in scored], [s.score for s in scored],
        "o", ms=3, alpha=0.6, color="#1f5fa8",
    )
    levels = sorted({row[3] for row in funnel.rows})
    styles = ["--", ":"]
    for level, style in zip(levels, styles):
        ns = [r[0] for r in funnel.rows if r[3] == level]
        lows = [r[1] for r in funnel.rows if r[3] == level]
        highs = [r[2] for r in funnel.rows if r[3] == level]
        ax.plot(ns, lows, style, color="0.35", lw=1, label=f"{level:.1%} limits")
        ax.plot(ns, highs, style, color="0.35", lw=1)
    ax.axhline(0.0, color="0.3", lw=0.8)
    ax.set_xlabel("pupils included")
    ax.set_ylabel("score (grades per subject)")
    ax.set_title("Score versus cohort size with control limits")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def render_shrinkage(shrinkage, path: str) -> None:
    if shrinkage is None or not shrinkage.rows:
        return
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(
        [r.n for r in shrinkage.rows],
        [r.delta for r in shrinkage.rows],
        "o", ms=3, alpha=0.6, color="#b04a3a",
    )
    ax.axhline(0.0, color="0.3", lw=0.8)
    ax.set_xlabel("pupils included")
    ax.set_ylabel("shrunken − raw score")
    ax.set_title("Shrinkage pull versus school size")
    _save(fig, path)


def render_months(interpretation, path: str) -> None:
    if not interpretation:
        return
    gains = sorted(interpretation[0].months)
    fig, axes = plt.subplots(1, len(gains), figsize=(4 * len(gains), 3.5), squeeze=False)
    for ax, gain in zip(axes[0], gains):
        values = [r.months[gain].months_rounded for r in interpretation]
        lo, hi = min(values), max(values)
        ax.hist(values, bins=range(lo, hi + 2), color="#4a7c59", edgecolor="white")
        ax.set_xlabel("months of progress")
        ax.set_ylabel("schools")
        ax.set_title(f"annual gain {gain} SD")
    _save(fig, path)


def render_all(bundle, out_dir: str) -> dict[str, str]:
    import os

    out: dict[str, str] = {}

    def emit(name, renderer, *args):
        path = os.path.join(out_dir, name)
        renderer(*args, path)
        if os.path.exists(path):
            out[name] = path

    emit("caterpillar.png", render_caterpillar, bundle.result.schools)
    if bundle.funnel is not None:
        emit("funnel.png", render_funnel, bundle.result.schools, bundle.funnel)
    if bundle.shrinkage is not None:
        emit("shrinkage.png", render_shrinkage, bundle.shrinkage)
    if bundle.interpretation is not None:
        emit("months.png", render_months, bundle.interpretation)
    return out
