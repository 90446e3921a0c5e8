"""Worst-risk minimization for multi-environment linear SEMs with a random transfer matrix."""
from .population import (MomentSet, WeightVector, analytic_moments, minimal_risk, minimizer,
                         worst_risk)
from .estimator import GramSummary, SummaryBatch, empirical_risk, gram_summary, plug_in_estimate
from .simulation import ModelConfig, Simulator, reference_config

__version__ = "0.1.0"
