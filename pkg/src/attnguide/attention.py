"""Cross-attention between a spatial latent and synthetic text tokens.

Queries come from latent pixels, keys from token embeddings, and the
softmax runs over the token axis, so every pixel holds a probability
distribution over tokens. The whole computation goes through the numerics
ops and is differentiable with respect to the latent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import ConfigError, DimensionError
from .numerics import Node, Tensor


@dataclass(frozen=True)
class TextEmbedding:
    """Token embedding rows, each normalised to unit Euclidean length."""

    tokens: Tensor  # token_count x dim

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ConfigError(f"text embedding must be rank 2, got shape {self.tokens.shape}")
        norms = np.linalg.norm(self.tokens.data, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-12):
            raise ConfigError("text embedding rows must have unit norm")

    @property
    def token_count(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @classmethod
    def draw(cls, rng: np.random.Generator, token_count: int, dim: int) -> "TextEmbedding":
        rows = rng.standard_normal((token_count, dim))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        return cls(Tensor(rows))


@dataclass(frozen=True)
class ProjectionWeights:
    """Projections of latent channels and text dims into the attention space."""

    w_query: Tensor  # channels x attn_dim
    w_key: Tensor    # text_dim x attn_dim

    def __post_init__(self):
        if self.w_query.ndim != 2 or self.w_key.ndim != 2:
            raise ConfigError("projection weights must be rank 2")
        if self.w_query.shape[1] != self.w_key.shape[1]:
            raise DimensionError(
                f"query and key projections disagree on attention dim: "
                f"{self.w_query.shape} vs {self.w_key.shape}"
            )

    @property
    def attn_dim(self) -> int:
        return self.w_query.shape[1]


@dataclass(frozen=True)
class AttentionMaps:
    """Per-token spatial attention for one timestep.

    ``maps`` has shape h x w x l; at every pixel the entries over the token
    axis are nonnegative and sum to one. The field holds a plain tensor or,
    on the differentiable path, a tape node.
    """

    maps: Tensor | Node
    timestep: int

    @property
    def h(self) -> int:
        return self.maps.shape[0]

    @property
    def w(self) -> int:
        return self.maps.shape[1]

    @property
    def l(self) -> int:
        return self.maps.shape[2]

    def values(self) -> Tensor:
        """The map contents as a plain tensor, detached from any tape."""
        return self.maps.value if isinstance(self.maps, Node) else self.maps


def cross_attention(z, embedding: TextEmbedding, weights: ProjectionWeights,
                    timestep: int = 0) -> AttentionMaps:
    """Attend every latent pixel over the text tokens.

    ``z`` is an h x w x c latent (tensor or tape node). Scores are scaled
    dot products between pixel queries and token keys; the softmax over the
    token axis yields the h x w x l maps.
    """
    shape = z.shape
    if len(shape) != 3:
        raise DimensionError(f"latent must be rank 3, got shape {shape}")
    h, w, c = shape
    if c != weights.w_query.shape[0]:
        raise DimensionError(
            f"latent channels {c} do not match query projection rows {weights.w_query.shape[0]}"
        )
    if embedding.dim != weights.w_key.shape[0]:
        raise DimensionError(
            f"text dim {embedding.dim} does not match key projection rows {weights.w_key.shape[0]}"
        )
    keys_t = Tensor(weights.w_key.data.T @ embedding.tokens.data.T)  # attn_dim x l
    queries = numerics.matmul(numerics.reshape(z, (h * w, c)), weights.w_query)
    scores = numerics.scale(numerics.matmul(queries, keys_t), 1.0 / math.sqrt(weights.attn_dim))
    maps = numerics.reshape(numerics.softmax_rows(scores), (h, w, embedding.token_count))
    return AttentionMaps(maps=maps, timestep=timestep)


def token_map(a: AttentionMaps, token: int):
    """The h x w attention map of one token; values are untouched."""
    if not 0 <= int(token) < a.l:
        raise IndexError(f"token index {token} out of range for {a.l} tokens")
    return numerics.index_last(a.maps, int(token))
