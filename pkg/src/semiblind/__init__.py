"""Semi-blind multi-user channel estimation with Gaussian, GMM and VAE priors."""

from .channels import ChannelDataset, SpatialModelParams, generate_dataset, load_dataset, save_dataset
from .estimators import GaussianPrior, lmmse_plain, lmmse_projected, lmmse_subspace
from .subspace import estimate_subspace, perfect_subspace
from .txrx import ConfigError, ScenarioConfig, decorrelate_pilots, transmit

__version__ = "0.1.0"

__all__ = [
    "ChannelDataset",
    "ConfigError",
    "GaussianPrior",
    "ScenarioConfig",
    "SpatialModelParams",
    "decorrelate_pilots",
    "estimate_subspace",
    "generate_dataset",
    "lmmse_plain",
    "lmmse_projected",
    "lmmse_subspace",
    "load_dataset",
    "perfect_subspace",
    "save_dataset",
    "transmit",
]
