"""promptfuse: prompt-conditioned infrared/visible image fusion.

The public surface re-exports the pieces most callers need; submodules
stay importable for the rest.
"""

from .core import (
    ConfigError,
    FusionSample,
    GuidanceParams,
    LossWeights,
    NetworkConfig,
    PromptEmbedding,
    derive_seed,
    image_tensor,
    validate_config,
)
from .degrade import DegradeSpec, make_sample
from .losses import LossReport, fusion_loss, total_loss
from .metrics import MetricReport, compute_metrics
from .network import FusionNet, ablation_variant, count_parameters
from .prompts import PromptTemplate, get_encoder, render_prompt
from .train import TrainConfig, TrainState, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegradeSpec",
    "FusionNet",
    "FusionSample",
    "GuidanceParams",
    "LossReport",
    "LossWeights",
    "MetricReport",
    "NetworkConfig",
    "PromptEmbedding",
    "PromptTemplate",
    "TrainConfig",
    "TrainState",
    "__version__",
    "ablation_variant",
    "compute_metrics",
    "count_parameters",
    "derive_seed",
    "fit",
    "fusion_loss",
    "get_encoder",
    "image_tensor",
    "load_checkpoint",
    "make_sample",
    "render_prompt",
    "save_checkpoint",
    "total_loss",
    "validate_config",
]
