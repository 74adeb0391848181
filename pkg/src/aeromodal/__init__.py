"""Aeroelastic mode identification from multi-maneuver vibration records.

Robust PCA filtering, delay-embedded exact DMD, sparsity-promoting mode
selection and a compressed-measurement variant, plus a synthetic benchmark
with known modal content.
"""

from .config import PipelineConfig, load_config, parse_config
from .pipeline import compare_reports, emit_report, run_full, run_limited
from .report import ModeEntry, ModeReport
from .signal_ingest import load_channels
from .synth_bench import generate, score, standard_benchmark

__version__ = "0.1.0"

__all__ = [
    "ModeEntry",
    "ModeReport",
    "PipelineConfig",
    "compare_reports",
    "emit_report",
    "generate",
    "load_channels",
    "load_config",
    "parse_config",
    "run_full",
    "run_limited",
    "score",
    "standard_benchmark",
]
