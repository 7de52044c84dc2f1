"""Deterministic backward diffusion with contrastive attention guidance.

One denoising step runs the model once to get attention maps, takes a
gradient step on the latent against the contrastive objective (several
times at designated refinement steps, never past the cutoff), then advances
with a deterministic update rule using a fresh prediction from the final
latent. The previous step's maps are cached so the objective can pair
features across consecutive timesteps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .attention import AttentionMaps, ProjectionWeights, TextEmbedding, cross_attention
from .errors import AttnGuideError, ConfigError, ContractError, DimensionError, NumericError
from .loss import LossConfig, contrastive_loss
from .numerics import Tape, Tensor, backward, seeded_rng, standard_normal
from .pairing import TokenGroups, pairable


@dataclass(frozen=True)
class GuidanceConfig:
    """Knobs of the guided sampling loop."""

    tau: float = 0.5
    alpha: float = 20.0
    total_steps: int = 50
    refine_at: frozenset[int] = frozenset({0, 10, 20})
    refine_iters: int = 5
    cutoff_step: int = 25
    seed: int = 0
    cross_timestep: bool = True

    def __post_init__(self):
        object.__setattr__(self, "refine_at", frozenset(int(i) for i in self.refine_at))
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be at least 1, got {self.total_steps}")
        if self.refine_iters < 1:
            raise ConfigError(f"refine_iters must be at least 1, got {self.refine_iters}")
        if not 0 <= self.cutoff_step <= self.total_steps:
            raise ConfigError(
                f"cutoff_step must lie in [0, {self.total_steps}], got {self.cutoff_step}"
            )
        for i in self.refine_at:
            if not 0 <= i < self.total_steps:
                raise ConfigError(f"refine_at entry {i} outside [0, {self.total_steps})")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and weight seed of the sandbox denoiser."""

    h: int = 16
    w: int = 16
    c: int = 4
    d: int = 8
    l: int = 8
    d_text: int = 16
    seed: int = 7

    def __post_init__(self):
        for name in ("h", "w", "c", "d", "l", "d_text"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class LatentState:
    """Latent plus the attention maps cached from the previous step."""

    z: Tensor
    step_index: int
    prev_maps: AttentionMaps | None = None


@dataclass(frozen=True)
class StepRecord:
    """What one denoising step produced: new state, final maps, loss trace."""

    state: LatentState
    maps: AttentionMaps
    losses: tuple[float, ...]

    @property
    def loss(self) -> float | None:
        return self.losses[-1] if self.losses else None


@dataclass(frozen=True)
class ToyDenoiser:
    """Single-head cross-attention denoiser, fully determined by its seed.

    The noise estimate is a linear read-out of projected token values under
    the latent's attention, so it is differentiable with respect to the
    latent through the maps. Weights are drawn in a fixed order (query, key,
    value, output, embedding) from one seeded stream.
    """

    config: ModelConfig
    total_steps: int
    weights: ProjectionWeights
    w_value: Tensor   # d_text x d
    w_out: Tensor     # d x c
    embedding: TextEmbedding
    alpha_bar: Tensor  # cumulative products of 1 - beta, length total_steps

    @classmethod
    def from_config(cls, config: ModelConfig, total_steps: int = 50) -> "ToyDenoiser":
        if total_steps < 1:
            raise ConfigError(f"total_steps must be at least 1, got {total_steps}")
        rng = seeded_rng(config.seed)
        w_query = standard_normal(rng, (config.c, config.d))
        w_query = numerics.scale(w_query, 1.0 / math.sqrt(config.c))
        w_key = standard_normal(rng, (config.d_text, config.d))
        w_value = standard_normal(rng, (config.d_text, config.d))
        w_out = numerics.scale(standard_normal(rng, (config.d, config.c)), 1.0 / math.sqrt(config.d))
        embedding = TextEmbedding.draw(rng, config.l, config.d_text)
        betas = np.linspace(1e-4, 0.02, total_steps)
        alpha_bar = Tensor(np.cumprod(1.0 - betas))
        return cls(
            config=config,
            total_steps=total_steps,
            weights=ProjectionWeights(w_query=w_query, w_key=w_key),
            w_value=w_value,
            w_out=w_out,
            embedding=embedding,
            alpha_bar=alpha_bar,
        )

    def projected_values(self) -> Tensor:
        """Token values in the attention space (l x d)."""
        return Tensor(self.embedding.tokens.data @ self.w_value.data)


def predict(model: ToyDenoiser, z, t: int):
    """Noise estimate and attention maps for a latent at schedule index ``t``."""
    maps = cross_attention(z, model.embedding, model.weights, timestep=t)
    h, w, c = model.config.h, model.config.w, model.config.c
    flat = numerics.reshape(maps.maps, (h * w, model.config.l))
    readout = numerics.matmul(numerics.matmul(flat, model.projected_values()), model.w_out)
    eps_hat = numerics.reshape(readout, (h, w, c))
    return eps_hat, maps


def latent_update(z: Tensor, grad: Tensor, alpha: float) -> Tensor:
    """Move the latent against the gradient, scaled by ``alpha``."""
    if z.shape != grad.shape:
        raise DimensionError(f"latent_update: shapes {z.shape} and {grad.shape} differ")
    return numerics.sub(z, numerics.scale(grad, alpha))


def ddim_step(model: ToyDenoiser, z: Tensor, eps_hat: Tensor, t: int) -> Tensor:
    """One deterministic backward step from schedule index ``t`` to ``t - 1``."""
    abar = model.alpha_bar.data
    abar_t = float(abar[t])
    abar_prev = float(abar[t - 1]) if t > 0 else 1.0
    z0_hat = numerics.scale(
        numerics.sub(z, numerics.scale(eps_hat, math.sqrt(1.0 - abar_t))),
        1.0 / math.sqrt(abar_t),
    )
    return numerics.add(
        numerics.scale(z0_hat, math.sqrt(abar_prev)),
        numerics.scale(eps_hat, math.sqrt(1.0 - abar_prev)),
    )


def _optimize_latent(model, z, t, prev_maps, groups, cfg, iters):
    """Run ``iters`` gradient updates of the latent against the objective."""
    losses = []
    loss_cfg = LossConfig(tau=cfg.tau)
    for _ in range(iters):
        tape = Tape()
        z_node = tape.variable(z)
        _, maps = predict(model, z_node, t)
        loss_node = contrastive_loss(maps, prev_maps, groups, loss_cfg)
        (grad,) = backward(tape, loss_node)
        z = latent_update(z, grad, cfg.alpha)
        losses.append(float(loss_node.value.item()))
    return z, losses


def denoise_step(model: ToyDenoiser, state: LatentState, groups: TokenGroups,
                 cfg: GuidanceConfig, guided: bool = True) -> tuple[LatentState, StepRecord]:
    """One full denoising step, optionally guided.

    Before the cutoff the latent is optimised once per step (``refine_iters``
    times at refinement steps); the backward update always uses a fresh
    prediction from the final latent, whose maps become the next step's
    previous maps.
    """
    i = state.step_index
    if i >= cfg.total_steps:
        raise ContractError(f"step index {i} is past the last step {cfg.total_steps - 1}")
    if model.total_steps != cfg.total_steps:
        raise ConfigError(
            f"model schedule has {model.total_steps} steps but config asks for {cfg.total_steps}"
        )
    t = cfg.total_steps - 1 - i
    z = state.z
    losses: list[float] = []
    if guided and i < cfg.cutoff_step:
        prev_maps = state.prev_maps if cfg.cross_timestep else None
        if pairable(groups, with_prev=prev_maps is not None):
            iters = cfg.refine_iters if i in cfg.refine_at else 1
            try:
                z, losses = _optimize_latent(model, z, t, prev_maps, groups, cfg, iters)
            except AttnGuideError as err:
                raise type(err)(f"step {i}: {err}") from err
    eps_hat, maps = predict(model, z, t)
    z_next = ddim_step(model, z, eps_hat, t)
    new_state = LatentState(z=z_next, step_index=i + 1, prev_maps=maps)
    return new_state, StepRecord(state=new_state, maps=maps, losses=tuple(losses))


def guided_sample(model: ToyDenoiser, groups: TokenGroups, cfg: GuidanceConfig,
                  guided: bool = True) -> list[StepRecord]:
    """Run the full backward process from seeded noise; returns per-step records."""
    if model.total_steps != cfg.total_steps:
        raise ConfigError(
            f"model schedule has {model.total_steps} steps but config asks for {cfg.total_steps}"
        )
    groups.validate_token_range(model.config.l)
    if guided and len(groups) < 2:
        raise ConfigError("guided sampling needs at least two token groups")
    rng = seeded_rng(cfg.seed)
    z = standard_normal(rng, (model.config.h, model.config.w, model.config.c))
    state = LatentState(z=z, step_index=0, prev_maps=None)
    trajectory: list[StepRecord] = []
    for _ in range(cfg.total_steps):
        state, record = denoise_step(model, state, groups, cfg, guided=guided)
        trajectory.append(record)
    return trajectory


def backtracked_update(model: ToyDenoiser, z: Tensor, t: int,
                       prev_maps: AttentionMaps | None, groups: TokenGroups,
                       cfg: GuidanceConfig, max_halvings: int = 30):
    """Test-mode update: halve the step size until the loss strictly decreases.

    Returns ``(z_new, alpha_used, loss_before, loss_after)``. Raises if the
    gradient is exactly zero or no decrease is found within the budget.
    """
    loss_cfg = LossConfig(tau=cfg.tau)

    def loss_at(latent: Tensor) -> float:
        _, maps = predict(model, latent, t)
        return float(contrastive_loss(maps, prev_maps, groups, loss_cfg))

    tape = Tape()
    z_node = tape.variable(z)
    _, maps = predict(model, z_node, t)
    loss_node = contrastive_loss(maps, prev_maps, groups, loss_cfg)
    (grad,) = backward(tape, loss_node)
    before = float(loss_node.value.item())
    if not np.any(grad.data):
        raise ContractError("gradient is exactly zero; nothing to backtrack")
    alpha = cfg.alpha if cfg.alpha > 0 else 1.0
    for _ in range(max_halvings + 1):
        candidate = latent_update(z, grad, alpha)
        after = loss_at(candidate)
        if after < before:
            return candidate, alpha, before, after
        alpha *= 0.5
    raise NumericError(f"no descent within {max_halvings} halvings of alpha")
