"""Approximate Bayesian computation by subset simulation for hysteretic
structural models: posterior sampling, evidence and model class selection."""
from .evidence import (
    EvidenceCurve,
    ModelComparisonReport,
    ball_volume,
    evidence_at,
    log_ball_volume,
    log_prob_at,
    model_posteriors,
    posterior_vs_eps,
    prob_curve,
)
from .estimator import ABCSubSim, ModelSelector, as_dataset
from .model import (
    Composite,
    DataRegion,
    Dataset,
    FixedSigma,
    HierarchicalSample,
    LaplaceMarginalized,
    LogNormalProduct,
    ModelClassSpec,
    NormalProduct,
    SimulationDivergence,
    StateSpaceForward,
    UniformBox,
    discrepancy,
    forward_draw,
    in_region,
)
from .models import (
    bilinear_model,
    example1_models,
    example2_models,
    masing_model,
    toy_log_evidence,
    toy_model,
    toy_posterior,
)
from .sampler import (
    LevelRecord,
    SubSimConfig,
    SubSimRun,
    abc_model_choice_baseline,
    abc_rejection,
    mma_step,
    run_abc_subsim,
)

__version__ = "0.1.0"

__all__ = [
    "ABCSubSim",
    "Composite",
    "DataRegion",
    "Dataset",
    "EvidenceCurve",
    "FixedSigma",
    "HierarchicalSample",
    "LaplaceMarginalized",
    "LevelRecord",
    "LogNormalProduct",
    "ModelClassSpec",
    "ModelComparisonReport",
    "ModelSelector",
    "NormalProduct",
    "SimulationDivergence",
    "StateSpaceForward",
    "SubSimConfig",
    "SubSimRun",
    "UniformBox",
    "abc_model_choice_baseline",
    "abc_rejection",
    "as_dataset",
    "ball_volume",
    "bilinear_model",
    "discrepancy",
    "evidence_at",
    "example1_models",
    "example2_models",
    "forward_draw",
    "in_region",
    "log_ball_volume",
    "log_prob_at",
    "masing_model",
    "mma_step",
    "model_posteriors",
    "posterior_vs_eps",
    "prob_curve",
    "run_abc_subsim",
    "toy_log_evidence",
    "toy_model",
    "toy_posterior",
]
