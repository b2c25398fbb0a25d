"""Batch analytics for school value-added measures.

The package computes eight-slot attainment totals and prior-attainment-
adjusted progress scores from pupil-level files, together with the
statistical machinery around them: confidence intervals under several
conventions, covariate adjustment, variance components and shrinkage,
multiple-comparison tools, multi-year pooling, enrollment-weighted
attribution, plain-language interpretation aids, and a seeded synthetic
cohort generator for end-to-end verification.
"""

__version__ = "0.1.0"

from .attainment import OFFICIAL, SLOT_PRESETS, SlotConfig, fill_slots
from .cohort import CohortDataset, CohortError, PupilRecord, validate_cohort
from .ingest import load_cohort, write_cohort
from .pipeline import Conventions, PipelineResult, run_pipeline
from .scoring import PagIntervals, PriorAttainmentTable, SchoolP8, estimate_baselines
from .synth import GeneratorSpec, generate_cohort

__all__ = [
    "__version__",
    "OFFICIAL",
    "SLOT_PRESETS",
    "SlotConfig",
    "fill_slots",
    "CohortDataset",
    "CohortError",
    "PupilRecord",
    "validate_cohort",
    "load_cohort",
    "write_cohort",
    "Conventions",
    "PipelineResult",
    "run_pipeline",
    "PagIntervals",
    "PriorAttainmentTable",
    "SchoolP8",
    "estimate_baselines",
    "GeneratorSpec",
    "generate_cohort",
]
