"""Bayesian mixed-effects models for two-way functional data with a CP fixed effect."""

__version__ = "0.1.0"

from .basis import TensorBasis, build_natural_cubic_basis, build_tensor_basis, project
from .dataset import FunctionalDataset, load_dataset, load_dataset_dir, save_dataset
from .errors import (
    BMEFError,
    InsufficientDrawsError,
    NumericalDivergenceError,
    SamplerDegenerateError,
    ScenarioError,
    ShapeError,
    SpecError,
)
from .posterior import (
    PosteriorChain,
    align_components,
    contrast,
    load_chain,
    posterior_mean_fixed,
    principal_functions,
    reconstruct_fixed_effect,
    save_chain,
    waic,
    weight_summary,
)
from .sampler import CPFixedEffect, FitConfig, GibbsSampler, RandomEffectState, fit, load_fit_config
from .simulate import GroundTruth, SimulationConfig, cmse, generate, mse_fixed, mse_random, rank_accuracy

__all__ = [
    "BMEFError", "CPFixedEffect", "FitConfig", "FunctionalDataset", "GibbsSampler", "GroundTruth",
    "InsufficientDrawsError", "NumericalDivergenceError", "PosteriorChain", "RandomEffectState",
    "SamplerDegenerateError", "ScenarioError", "ShapeError", "SimulationConfig", "SpecError", "TensorBasis",
    "align_components", "build_natural_cubic_basis", "build_tensor_basis", "cmse", "contrast", "fit", "generate",
    "load_chain", "load_dataset", "load_dataset_dir", "load_fit_config", "mse_fixed", "mse_random",
    "posterior_mean_fixed", "principal_functions", "project", "rank_accuracy", "reconstruct_fixed_effect",
    "save_chain", "save_dataset", "waic", "weight_summary",
]
