"""Deterministic synthetic-cohort generator and experiment harnesses.

Cohorts are drawn from an explicit structural model — true prior attainment,
attenuated observed scores, linear national attainment curve, school effects,
covariate effects, pupil noise — so every downstream estimate has a planted
ground truth to be checked against. The counter-based Philox generator with
per-school spawned streams makes output a pure function of the seed,
independent of generation order or parallelism.

Two representations are produced: full object cohorts for the standard
pipeline, and flat arrays scored by a vectorized mirror of the same
arithmetic for the large experiments (volatility panels, null calibration).
The two paths are held equal by test on shared inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import ndtri

from .cohort import (
    BackgroundProfile,
    CohortDataset,
    EnrollmentSpan,
    PupilRecord,
    QualificationResult,
)
from .distributions import norm_ppf
from .scoring import NUM_GROUPS, PagIntervals
from .trend import YearScore

__all__ = [
    "GeneratorSpec",
    "GeneratedTruth",
    "ArrayCohort",
    "ArrayScores",
    "MeasurementBiasRow",
    "MeasurementBiasTable",
    "VolatilityPanel",
    "NullCalibration",
    "generate_arrays",
    "generate_cohort",
    "score_arrays",
    "measurement_error_experiment",
    "volatility_experiment",
    "null_experiment",
    "SYNTH_SUBJECT",
]

# Generated pupils carry a single open-eligibility qualification whose points
# equal the pupil's full eight-slot total; slot structure is exercised by the
# dedicated unit fixtures, not the simulator.
SYNTH_SUBJECT = "GEN"

ARCHETYPES = ("comprehensive", "selective", "secondary_modern")

ETHNICITY_CODES = ("WBRI", "AIND", "BCRB", "MWBC", "AOTH")


@dataclass(frozen=True)
class GeneratorSpec:
    """Structural parameters of a synthetic cohort.

    Variances are on the grades-per-subject scale: tau2 is the between-school
    variance of true school effects, sigma2_w the within-school pupil noise
    variance, so the planted variance partition is tau2/(tau2+sigma2_w).
    reliability is the test-retest share of observed KS2 variance that is
    true-score variance; 1.0 means observed equals true.
    """

    seed: int = 0
    n_schools: int = 50
    pupils_per_school: int = 150
    school_sizes: tuple[int, ...] | None = None
    tau2: float = 0.2236
    sigma2_w: float = 1.64
    effect_intake_corr: float = 0.0
    ks2_mean: float = 100.0
    ks2_school_sd: float = 0.0
    ks2_within_sd: float = 3.5
    ks2_range: tuple[float, float] = (80.0, 120.0)
    reliability: float = 1.0
    a8_mean: float = 47.75
    a8_slope: float = 2.0
    covariate_effects: tuple[tuple[str, float], ...] = ()
    fsm_rate: float = 0.25
    eal_rate: float = 0.1
    sen_rate: float = 0.1
    full_fsm_schools: int = 0
    selective_share: float = 0.0
    secondary_modern_share: float = 0.0
    selection_quantile: float = 0.75
    mobility_rate: float = 0.0
    rho_effect: float = 1.0
    high_variance_schools: int = 0
    variance_boost: float = 1.0
    year_label: str = "2019"

    def __post_init__(self):
        if not 0.0 < self.reliability <= 1.0:
            raise ValueError(f"reliability must lie in (0, 1], got {self.reliability}")
        if self.tau2 < 0 or self.sigma2_w < 0:
            raise ValueError("variances must be non-negative")
        if self.tau2 == 0 and self.sigma2_w == 0:
            raise ValueError("tau2 and sigma2_w cannot both be zero")
        if self.selective_share + self.secondary_modern_share > 1.0 + 1e-12:
            raise ValueError("archetype shares exceed 1")
        if not -1.0 <= self.effect_intake_corr <= 1.0:
            raise ValueError("effect_intake_corr must lie in [-1, 1]")
        if not 0.0 < self.selection_quantile < 1.0:
            raise ValueError("selection_quantile must lie in (0, 1)")
        if not 0.0 <= self.mobility_rate <= 1.0:
            raise ValueError("mobility_rate must lie in [0, 1]")
        if not -1.0 <= self.rho_effect <= 1.0:
            raise ValueError("rho_effect must lie in [-1, 1]")

    def sizes(self) -> np.ndarray:
        if self.school_sizes is not None:
            if len(self.school_sizes) != self.n_schools:
                raise ValueError("school_sizes length must equal n_schools")
            return np.array(self.school_sizes, dtype=int)
        return np.full(self.n_schools, self.pupils_per_school, dtype=int)

    def archetypes(self) -> list[str]:
        n_sel = round(self.selective_share * self.n_schools)
        n_sm = round(self.secondary_modern_share * self.n_schools)
        labels = ["selective"] * n_sel + ["secondary_modern"] * n_sm
        labels += ["comprehensive"] * (self.n_schools - len(labels))
        return labels

    def national_true_sd(self) -> float:
        return math.sqrt(self.ks2_school_sd**2 + self.ks2_within_sd**2)


@dataclass
class GeneratedTruth:
    spec: GeneratorSpec
    school_ids: list[str]
    school_effects: np.ndarray  # grades-per-subject units
    school_archetypes: list[str]
    school_intake_means: np.ndarray
    pupil_ids: list[str]
    true_ks2: np.ndarray

    def to_json_dict(self) -> dict:
        spec_dict = asdict(self.spec)
        spec_dict["covariate_effects"] = dict(self.spec.covariate_effects)
        return {
            "spec": spec_dict,
            "schools": [
                {
                    "school_id": sid,
                    "true_effect": float(e),
                    "archetype": a,
                    "intake_mean": float(m),
                }
                for sid, e, a, m in zip(
                    self.school_ids,
                    self.school_effects,
                    self.school_archetypes,
                    self.school_intake_means,
                )
            ],
            "pupil_true_ks2": {
                pid: float(v) for pid, v in zip(self.pupil_ids, self.true_ks2)
            },
        }


@dataclass
class ArrayCohort:
    spec: GeneratorSpec
    school_ids: list[str]
    sizes: np.ndarray
    school_idx: np.ndarray  # per pupil
    pupil_ids: list[str]
    true_ks2: np.ndarray
    obs_mean_fine: np.ndarray
    reading: np.ndarray
    maths: np.ndarray
    a8: np.ndarray
    school_effects: np.ndarray
    intake_means: np.ndarray
    archetypes: list[str]
    gender: np.ndarray
    ethnicity: np.ndarray
    eal: np.ndarray
    sen: np.ndarray
    fsm: np.ndarray
    decile: np.ndarray
    month: np.ndarray
    ks1: np.ndarray
    prior_school: np.ndarray  # -1 for non-movers, else school index
    prior_years: np.ndarray

    def truth(self) -> GeneratedTruth:
        return GeneratedTruth(
            spec=self.spec,
            school_ids=self.school_ids,
            school_effects=self.school_effects,
            school_archetypes=self.archetypes,
            school_intake_means=self.intake_means,
            pupil_ids=self.pupil_ids,
            true_ks2=self.true_ks2,
        )


def _truncated_standard_normal(u: np.ndarray, lo_mass: float, hi_mass: float) -> np.ndarray:
    """Inverse-CDF draw of a standard normal conditioned on its quantile band."""
    return ndtri(lo_mass + u * (hi_mass - lo_mass))


def _school_effects(spec: GeneratorSpec, intake_z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Effects with variance tau2 and the requested correlation with intake."""
    tau = math.sqrt(spec.tau2)
    rho = spec.effect_intake_corr
    independent = rng.standard_normal(spec.n_schools)
    if rho != 0.0 and float(np.std(intake_z)) > 0:
        z = (intake_z - intake_z.mean()) / intake_z.std()
        return tau * (rho * z + math.sqrt(1.0 - rho**2) * independent)
    return tau * independent


def generate_arrays(spec: GeneratorSpec) -> ArrayCohort:
    """Draw the full cohort as flat arrays, one spawned stream per school."""
    root = np.random.SeedSequence(spec.seed)
    streams = root.spawn(spec.n_schools + 1)
    school_rng = np.random.Generator(np.random.Philox(streams[0]))

    sizes = spec.sizes()
    J = spec.n_schools
    school_ids = [f"S{j + 1:04d}" for j in range(J)]
    archetypes = spec.archetypes()
    low, high = spec.ks2_range
    q = spec.selection_quantile
    national_sd = spec.national_true_sd()

    intake_z = school_rng.standard_normal(J)
    intake_means = np.where(
        np.array([a == "comprehensive" for a in archetypes]),
        spec.ks2_mean + spec.ks2_school_sd * intake_z,
        spec.ks2_mean,
    )
    effects = _school_effects(spec, intake_z, school_rng)

    per_school = []
    pupil_counter = 0
    for j in range(J):
        rng = np.random.Generator(np.random.Philox(streams[j + 1]))
        n = int(sizes[j])
        if archetypes[j] == "selective":
            u = rng.random(n)
            true = spec.ks2_mean + national_sd * _truncated_standard_normal(u, q, 1.0)
        elif archetypes[j] == "secondary_modern":
            u = rng.random(n)
            true = spec.ks2_mean + national_sd * _truncated_standard_normal(u, 0.0, q)
        else:
            true = intake_means[j] + spec.ks2_within_sd * rng.standard_normal(n)
        true = np.clip(true, low + 0.5, high - 0.5)

        if spec.reliability < 1.0:
            noise_sd = national_sd * math.sqrt((1.0 - spec.reliability) / spec.reliability)
            obs = true + noise_sd * rng.standard_normal(n)
        else:
            obs = true.copy()
        obs = np.clip(obs, low + 0.5, high - 0.5)
        split = np.clip(0.35 * rng.standard_normal(n), -0.5, 0.5)
        reading = obs + split
        maths = obs - split

        gender = np.where(rng.random(n) < 0.5, "F", "M")
        ethnicity = np.array(ETHNICITY_CODES)[rng.integers(0, len(ETHNICITY_CODES), n)]
        fsm_rate = 1.0 if j < spec.full_fsm_schools else spec.fsm_rate
        fsm = rng.random(n) < fsm_rate
        eal = rng.random(n) < spec.eal_rate
        sen = rng.random(n) < spec.sen_rate
        decile = rng.integers(1, 11, n)
        month = rng.integers(1, 13, n)
        ks1 = 15.0 + 0.3 * (true - spec.ks2_mean) + 2.0 * rng.standard_normal(n)

        noise_sd_p8 = math.sqrt(
            spec.sigma2_w * (spec.variance_boost if j < spec.high_variance_schools else 1.0)
        )
        a8 = (
            spec.a8_mean
            + spec.a8_slope * (true - spec.ks2_mean)
            + 10.0 * effects[j]
            + 10.0 * noise_sd_p8 * rng.standard_normal(n)
        )
        for name, effect in spec.covariate_effects:
            if name == "fsm_flag":
                a8 = a8 + effect * fsm
            elif name == "eal_flag":
                a8 = a8 + effect * eal
            elif name == "sen_flag":
                a8 = a8 + effect * sen
            elif name == "deprivation_decile":
                a8 = a8 + effect * decile
            elif name == "month_of_birth":
                a8 = a8 + effect * month
            elif name == "gender":
                a8 = a8 + effect * (gender == "F")
            elif name == "ks1_score":
                a8 = a8 + effect * ks1
            else:
                raise ValueError(f"unsupported covariate effect {name!r}")
        a8 = np.clip(a8, 0.0, None)

        movers = rng.random(n) < spec.mobility_rate
        prior_school = np.full(n, -1, dtype=int)
        prior_years = np.zeros(n)
        if movers.any() and J > 1:
            n_m = int(movers.sum())
            others = rng.integers(0, J - 1, n_m)
            others = np.where(others >= j, others + 1, others)
            prior_school[movers] = others
            prior_years[movers] = rng.integers(1, 5, n_m).astype(float)

        per_school.append(
            (true, obs, reading, maths, a8, gender, ethnicity, eal, sen, fsm,
             decile, month, ks1, prior_school, prior_years)
        )
        pupil_counter += n

    def cat(i):
        return np.concatenate([block[i] for block in per_school])

    school_idx = np.repeat(np.arange(J), sizes)
    pupil_ids = [f"P{i + 1:07d}" for i in range(pupil_counter)]
    return ArrayCohort(
        spec=spec,
        school_ids=school_ids,
        sizes=sizes,
        school_idx=school_idx,
        pupil_ids=pupil_ids,
        true_ks2=cat(0),
        obs_mean_fine=cat(1),
        reading=cat(2),
        maths=cat(3),
        a8=cat(4),
        school_effects=effects,
        intake_means=intake_means,
        archetypes=archetypes,
        gender=cat(5),
        ethnicity=cat(6),
        eal=cat(7),
        sen=cat(8),
        fsm=cat(9),
        decile=cat(10),
        month=cat(11),
        ks1=cat(12),
        prior_school=cat(13),
        prior_years=cat(14),
    )


def generate_cohort(spec: GeneratorSpec) -> tuple[CohortDataset, GeneratedTruth]:
    """Object-form cohort (always valid under core validation) plus truth."""
    arr = generate_arrays(spec)
    pupils = []
    for i, pid in enumerate(arr.pupil_ids):
        j = int(arr.school_idx[i])
        enrollments = []
        if arr.prior_school[i] >= 0:
            prior_years = float(arr.prior_years[i])
            enrollments.append(
                EnrollmentSpan(arr.school_ids[int(arr.prior_school[i])], prior_years, False)
            )
            final_years = 5.0 - prior_years
        else:
            final_years = 5.0
        enrollments.append(EnrollmentSpan(arr.school_ids[j], final_years, True))
        pupils.append(
            PupilRecord(
                pupil_id=pid,
                ks2_reading_fine=float(arr.reading[i]),
                ks2_maths_fine=float(arr.maths[i]),
                qualifications=[QualificationResult(SYNTH_SUBJECT, float(arr.a8[i]))],
                background=BackgroundProfile(
                    gender=str(arr.gender[i]),
                    ethnicity_code=str(arr.ethnicity[i]),
                    eal_flag=bool(arr.eal[i]),
                    sen_flag=bool(arr.sen[i]),
                    fsm_flag=bool(arr.fsm[i]),
                    deprivation_decile=int(arr.decile[i]),
                    ks1_score=float(arr.ks1[i]),
                    month_of_birth=int(arr.month[i]),
                ),
                enrollments=enrollments,
            )
        )
    cohort = CohortDataset(
        year_label=arr.spec.year_label,
        pupils=pupils,
        subject_catalog={SYNTH_SUBJECT: "open"},
    )
    return cohort, arr.truth()


@dataclass
class ArrayScores:
    pag: np.ndarray
    baselines: np.ndarray  # indexed 1..NUM_GROUPS; NaN where empty
    pupil_p8: np.ndarray
    school_scores: np.ndarray
    school_n: np.ndarray
    sigma_hat: float
    national_mean: float


def score_arrays(arr: ArrayCohort, intervals: PagIntervals | None = None) -> ArrayScores:
    """Vectorized uncapped scoring: the array mirror of the object pipeline."""
    intervals = intervals or PagIntervals.equal_width(arr.spec.ks2_range)
    bounds = np.array(intervals.bounds)
    values = arr.obs_mean_fine
    if values.min() < bounds[0] or values.max() > bounds[-1]:
        raise ValueError("observed KS2 outside the configured range")
    pag = np.searchsorted(bounds, values, side="right")
    pag[values == bounds[-1]] = NUM_GROUPS
    counts = np.bincount(pag, minlength=NUM_GROUPS + 1).astype(float)
    sums = np.bincount(pag, weights=arr.a8, minlength=NUM_GROUPS + 1)
    with np.errstate(invalid="ignore"):
        baselines = np.where(counts > 0, sums / np.maximum(counts, 1.0), np.nan)
    p8 = (arr.a8 - baselines[pag]) / 10.0
    school_n = np.bincount(arr.school_idx, minlength=arr.spec.n_schools).astype(float)
    school_sums = np.bincount(arr.school_idx, weights=p8, minlength=arr.spec.n_schools)
    school_scores = school_sums / np.maximum(school_n, 1.0)
    return ArrayScores(
        pag=pag,
        baselines=baselines,
        pupil_p8=p8,
        school_scores=school_scores,
        school_n=school_n,
        sigma_hat=float(np.std(p8, ddof=1)),
        national_mean=float(np.mean(p8)),
    )


@dataclass(frozen=True)
class MeasurementBiasRow:
    archetype: str
    n_schools: int
    mean_bias: float
    mc_se: float


@dataclass
class MeasurementBiasTable:
    reliability: float
    rows: list[MeasurementBiasRow]

    def row(self, archetype: str) -> MeasurementBiasRow:
        for r in self.rows:
            if r.archetype == archetype:
                return r
        raise KeyError(archetype)


def measurement_error_experiment(spec: GeneratorSpec) -> MeasurementBiasTable:
    """Mean score bias per archetype when grouping uses observed KS2.

    Bias is each school's score minus its planted true effect, so under
    perfect measurement every archetype centers on zero. With noisy KS2 a
    selected-intake school's pupils sit systematically above (selective) or
    below (secondary modern) the national truth for their observed group, and
    the per-archetype Monte-Carlo standard error sd/√J calibrates how
    decisively the sign shows.
    """
    arr = generate_arrays(spec)
    scores = score_arrays(arr)
    bias = scores.school_scores - arr.school_effects
    rows = []
    for archetype in ARCHETYPES:
        mask = np.array([a == archetype for a in arr.archetypes])
        if not mask.any():
            continue
        values = bias[mask]
        rows.append(
            MeasurementBiasRow(
                archetype=archetype,
                n_schools=int(mask.sum()),
                mean_bias=float(values.mean()),
                mc_se=float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0,
            )
        )
    return MeasurementBiasTable(reliability=spec.reliability, rows=rows)


@dataclass
class VolatilityPanel:
    panel: list[YearScore]
    years: list[str]
    changes: list[tuple[str, int, str, float]]  # school, n, year, delta vs previous
    effects_by_year: np.ndarray  # (T, J) planted effects

    def change_sd_by_size(self) -> dict[int, float]:
        by_size: dict[int, list[float]] = {}
        for _, n, _, delta in self.changes:
            by_size.setdefault(n, []).append(delta)
        return {
            n: float(np.std(np.array(v), ddof=1)) for n, v in sorted(by_size.items())
        }


def volatility_experiment(spec: GeneratorSpec, n_years: int) -> VolatilityPanel:
    """T linked cohorts: school effects follow an AR(1), pupils are fresh.

    Each year is scored against its own baselines, exactly as annual
    publication works. Year-on-year score changes mix real effect drift with
    fresh-cohort sampling noise, whose share grows as schools shrink.
    """
    if n_years < 2:
        raise ValueError(f"need ≥2 years, got {n_years}")
    rho = spec.rho_effect
    tau = math.sqrt(spec.tau2)
    root = np.random.SeedSequence(spec.seed)
    effect_stream, *year_streams = root.spawn(n_years + 1)
    rng = np.random.Generator(np.random.Philox(effect_stream))

    J = spec.n_schools
    effects = np.empty((n_years, J))
    effects[0] = tau * rng.standard_normal(J)
    for t in range(1, n_years):
        innovation = rng.standard_normal(J)
        effects[t] = rho * effects[t - 1] + math.sqrt(max(0.0, 1.0 - rho**2)) * tau * innovation

    panel: list[YearScore] = []
    changes = []
    years = [f"Y{t + 1}" for t in range(n_years)]
    previous: np.ndarray | None = None
    sizes = spec.sizes()
    for t, year in enumerate(years):
        year_spec = GeneratorSpec(
            **{
                **asdict(spec),
                "seed": int(year_streams[t].generate_state(1)[0]),
                "year_label": year,
            }
        )
        arr = generate_arrays(year_spec)
        # Replace the independently drawn effects with the AR(1) path.
        arr.a8 = arr.a8 + 10.0 * (effects[t][arr.school_idx] - arr.school_effects[arr.school_idx])
        arr.school_effects = effects[t]
        scores = score_arrays(arr)
        se = scores.sigma_hat / np.sqrt(scores.school_n)
        for j, sid in enumerate(arr.school_ids):
            panel.append(
                YearScore(sid, year, float(scores.school_scores[j]), float(se[j]), int(sizes[j]))
            )
            if previous is not None:
                changes.append(
                    (sid, int(sizes[j]), year, float(scores.school_scores[j] - previous[j]))
                )
        previous = scores.school_scores
    return VolatilityPanel(panel=panel, years=years, changes=changes, effects_by_year=effects)


@dataclass(frozen=True)
class NullCalibration:
    n_schools: int
    flagged_fraction: float
    bonferroni_flagged_fraction: float
    level: float


def null_experiment(
    n_schools: int = 3000,
    pupils_per_school: int = 150,
    seed: int = 0,
    level: float = 0.95,
    sigma2_w: float = 1.64,
) -> NullCalibration:
    """Share of schools flagged significant when no school differs from zero.

    Unadjusted intervals flag ≈ (1 − level) of schools by construction; the
    family-wise division leaves almost none.
    """
    spec = GeneratorSpec(
        seed=seed,
        n_schools=n_schools,
        pupils_per_school=pupils_per_school,
        tau2=0.0,
        sigma2_w=sigma2_w,
    )
    arr = generate_arrays(spec)
    scores = score_arrays(arr)
    se = scores.sigma_hat / np.sqrt(scores.school_n)
    z = norm_ppf(0.5 * (1.0 + level))
    flagged = np.abs(scores.school_scores) > z * se
    alpha = 1.0 - level
    z_bonf = norm_ppf(1.0 - (alpha / n_schools) / 2.0)
    flagged_bonf = np.abs(scores.school_scores) > z_bonf * se
    return NullCalibration(
        n_schools=n_schools,
        flagged_fraction=float(flagged.mean()),
        bonferroni_flagged_fraction=float(flagged_bonf.mean()),
        level=level,
    )
