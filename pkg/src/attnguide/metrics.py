"""Proxy scores for attention quality, plus the finite-difference oracle.

The scores quantify what guided sampling is supposed to do to the maps:
``binding_score`` is the mean cosine similarity inside groups (higher is
better), ``separation_score`` the mean across groups (lower is better) and
``scatter_score`` measures how much a token's map drifts between two
consecutive timesteps (lower is more stable). They stand in for the
external-model metrics a full pipeline would use and are deliberately named
so they cannot be confused with those.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .attention import AttentionMaps
from .errors import DimensionError, MetricError, NumericError
from .numerics import Tensor
from .pairing import TokenGroups


def _flat_token(a: AttentionMaps, token: int) -> np.ndarray:
    return a.values().data[:, :, token].reshape(-1)


def _cos(u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def binding_score(a: AttentionMaps, groups: TokenGroups) -> float:
    """Mean cosine similarity over all within-group ordered token pairs."""
    sims = []
    for group in groups:
        toks = group.tokens()
        for ti, tj in itertools.permutations(toks, 2):
            sims.append(_cos(_flat_token(a, ti), _flat_token(a, tj)))
    if not sims:
        raise MetricError("binding score undefined: every group has a single token")
    return float(np.mean(sims))


def separation_score(a: AttentionMaps, groups: TokenGroups) -> float:
    """Mean cosine similarity over all cross-group token pairs."""
    if len(groups) < 2:
        raise MetricError("separation score undefined: fewer than two groups")
    sims = []
    for ga, gb in itertools.combinations(groups.groups, 2):
        for ti in ga.tokens():
            for tj in gb.tokens():
                sims.append(_cos(_flat_token(a, ti), _flat_token(a, tj)))
    return float(np.mean(sims))


def scatter_score(a_t: AttentionMaps, a_prev: AttentionMaps, groups: TokenGroups) -> float:
    """One minus the mean self-similarity of grouped token maps across steps."""
    if (a_t.h, a_t.w, a_t.l) != (a_prev.h, a_prev.w, a_prev.l):
        raise DimensionError(
            f"attention maps disagree on shape: "
            f"{(a_t.h, a_t.w, a_t.l)} vs {(a_prev.h, a_prev.w, a_prev.l)}"
        )
    sims = [
        _cos(_flat_token(a_t, tok), _flat_token(a_prev, tok))
        for tok in groups.all_tokens()
    ]
    return float(1.0 - np.mean(sims))


def finite_diff_grad(f, z: Tensor, h: float = 1e-5) -> Tensor:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    flat = z.data.reshape(-1)
    grad = np.empty_like(flat)
    for k in range(flat.size):
        bumped = flat.copy()
        bumped[k] = flat[k] + h
        f_plus = float(f(Tensor(bumped.reshape(z.shape))))
        bumped[k] = flat[k] - h
        f_minus = float(f(Tensor(bumped.reshape(z.shape))))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"oracle evaluation is non-finite at coordinate {k}")
        grad[k] = (f_plus - f_minus) / (2.0 * h)
    return Tensor(grad.reshape(z.shape))


def gradient_gap(autodiff: Tensor, fd: Tensor) -> float:
    """Largest coordinate deviation, scaled by the gradient's magnitude.

    This is the pass metric of the gradient check: the max absolute
    difference between the two gradients divided by the finite-difference
    gradient's max magnitude plus 1e-8.
    """
    diff = np.abs(autodiff.data - fd.data)
    return float(diff.max() / (np.abs(fd.data).max() + 1e-8))


@dataclass(frozen=True)
class GradCheckPoint:
    index: int
    gap: float
    worst_coord: int


@dataclass(frozen=True)
class GradCheckResult:
    points: tuple[GradCheckPoint, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(p.gap < self.tolerance for p in self.points)

    @property
    def worst(self) -> "GradCheckPoint":
        return max(self.points, key=lambda p: p.gap)


def run_gradcheck(model, groups: TokenGroups, cfg, n_points: int = 10,
                  h: float = 1e-5, tolerance: float = 1e-6,
                  grad_perturb: float = 0.0) -> GradCheckResult:
    """Compare the taped gradient of the contrastive objective against
    central finite differences at seeded random latents.

    ``grad_perturb`` shifts the autodiff gradient and exists so tests can
    prove the check actually detects a broken gradient.
    """
    from .loss import LossConfig, contrastive_loss
    from .numerics import Tape, backward, seeded_rng, standard_normal
    from .attention import cross_attention

    rng = seeded_rng(cfg.seed)
    loss_cfg = LossConfig(tau=cfg.tau)
    t = cfg.total_steps - 1
    shape = (model.config.h, model.config.w, model.config.c)
    points = []
    for index in range(n_points):
        z = standard_normal(rng, shape)
        z_other = standard_normal(rng, shape)
        prev_maps = cross_attention(z_other, model.embedding, model.weights, timestep=t + 1)

        def objective(latent):
            maps = cross_attention(latent, model.embedding, model.weights, timestep=t)
            return contrastive_loss(maps, prev_maps, groups, loss_cfg)

        tape = Tape()
        z_node = tape.variable(z)
        (auto,) = backward(tape, objective(z_node))
        if grad_perturb:
            auto = Tensor(auto.data + grad_perturb)
        fd = finite_diff_grad(objective, z, h=h)
        diff = np.abs(auto.data - fd.data)
        gap = float(diff.max() / (np.abs(fd.data).max() + 1e-8))
        points.append(GradCheckPoint(index=index, gap=gap, worst_coord=int(diff.argmax())))
    return GradCheckResult(points=tuple(points), tolerance=tolerance)


@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss: float | None
    binding: float | None
    separation: float | None
    scatter: float | None


@dataclass(frozen=True)
class RunReport:
    """Per-step scores of one run, with the configuration that produced it."""

    seed: int
    guided: bool
    config: dict
    records: tuple[StepMetrics, ...]
    final_maps: Tensor


def build_report(trajectory, groups: TokenGroups, config: dict, seed: int,
                 guided: bool) -> RunReport:
    """Score every step of a trajectory; undefined scores become ``None``."""
    records = []
    previous_maps = None
    for record in trajectory:
        maps = record.maps
        try:
            binding = binding_score(maps, groups)
        except MetricError:
            binding = None
        try:
            separation = separation_score(maps, groups)
        except MetricError:
            separation = None
        scatter = scatter_score(maps, previous_maps, groups) if previous_maps is not None else None
        records.append(StepMetrics(
            step=record.state.step_index - 1,
            loss=record.loss,
            binding=binding,
            separation=separation,
            scatter=scatter,
        ))
        previous_maps = maps
    return RunReport(
        seed=seed,
        guided=guided,
        config=config,
        records=tuple(records),
        final_maps=trajectory[-1].maps.values() if trajectory else Tensor(np.zeros((0, 0, 0))),
    )
