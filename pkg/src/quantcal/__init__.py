"""Calibrated prevalence estimation for community comment corpora, with a
binomial mixed model for reply toxicity."""
from __future__ import annotations

__version__ = "0.1.0"

from . import calibrate, corpus, judgments, partisan, strata, synth, textclf, toxmodel  # noqa: F401
