"""Simulation, stability analysis and cost modeling for asynchronous pipeline-parallel training."""

from .pipeline import (CostReport, DelayProfile, Mode, Optimizer, PipelineSpec, activation_memory,
                       amortized_utilization, compute_delay_profile, cost_report,
                       normalized_time, optimal_segment, pipeline_utilization,
                       weight_optimizer_memory)
from .stability import (StabilityError, StabilityProblem, build_char_poly, gamma_for_decay,
                        largest_curvature, lemma1_threshold, lemma2_bound, lemma3_bound,
                        max_stable_alpha, poly_probe, spectral_radius)

__version__ = "0.1.0"

__all__ = [
    "CostReport", "DelayProfile", "Mode", "Optimizer", "PipelineSpec", "activation_memory",
    "amortized_utilization", "compute_delay_profile", "cost_report", "normalized_time",
    "optimal_segment", "pipeline_utilization", "weight_optimizer_memory",
    "StabilityError", "StabilityProblem", "build_char_poly", "gamma_for_decay",
    "largest_curvature", "lemma1_threshold", "lemma2_bound", "lemma3_bound", "max_stable_alpha",
    "poly_probe", "spectral_radius",
]
