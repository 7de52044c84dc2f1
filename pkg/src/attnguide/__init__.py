"""Contrastive attention guidance inside a deterministic sampling sandbox.

The package pairs a small tape-based autodiff with a cross-attention
denoiser so the full guided backward process runs end to end at desk scale:
token maps are grouped, contrasted with an InfoNCE objective across
consecutive timesteps, and the latent is nudged along the gradient before
every deterministic sampler step.
"""

from .attention import AttentionMaps, ProjectionWeights, TextEmbedding, cross_attention, token_map
from .errors import (
    AttnGuideError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    MetricError,
    NumericError,
    PairingError,
)
from .loss import LossConfig, contrastive_loss, cosine_sim, info_nce
from .metrics import (
    RunReport,
    binding_score,
    build_report,
    finite_diff_grad,
    gradient_gap,
    run_gradcheck,
    scatter_score,
    separation_score,
)
from .numerics import Node, Tape, Tensor, backward, seeded_rng, standard_normal
from .pairing import (
    LabeledFeature,
    PairEntry,
    PairSet,
    TokenGroup,
    TokenGroups,
    build_features,
    enumerate_pairs,
)
from .sampler import (
    GuidanceConfig,
    LatentState,
    ModelConfig,
    StepRecord,
    ToyDenoiser,
    backtracked_update,
    denoise_step,
    guided_sample,
    latent_update,
    predict,
)

__version__ = "0.1.0"
