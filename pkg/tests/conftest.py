import math

import numpy as np
import pytest

from attnguide.attention import AttentionMaps
from attnguide.numerics import Tensor
from attnguide.pairing import TokenGroup, TokenGroups
from attnguide.sampler import GuidanceConfig, ModelConfig, ToyDenoiser


@pytest.fixture
def two_pair_groups():
    return TokenGroups((TokenGroup(1, (2,)), TokenGroup(4, (5,))))


@pytest.fixture
def small_model():
    # tiny sandbox for fast gradient and sampler tests
    return ToyDenoiser.from_config(ModelConfig(h=4, w=4, c=2, d=4, l=6, d_text=8, seed=3),
                                   total_steps=8)


@pytest.fixture
def small_guidance():
    return GuidanceConfig(total_steps=8, refine_at=frozenset({0, 2}), refine_iters=2,
                          cutoff_step=5, seed=11)


def maps_from_array(values, timestep=0) -> AttentionMaps:
    return AttentionMaps(maps=Tensor(np.asarray(values, dtype=float)), timestep=timestep)


def naive_pair_loss(features, tau):
    """Independent loss oracle: a direct double loop over the softmax form."""
    def cos(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

    values = [np.asarray(f.map.data, dtype=float) for f in features]
    labels = [f.label for f in features]
    losses = []
    for i, (vi, li) in enumerate(zip(values, labels)):
        for j, (vj, lj) in enumerate(zip(values, labels)):
            if i == j or li != lj:
                continue
            numerator = math.exp(cos(vi, vj) / tau)
            denominator = numerator
            for vk, lk in zip(values, labels):
                if lk != li:
                    denominator += math.exp(cos(vi, vk) / tau)
            losses.append(-math.log(numerator / denominator))
    return sum(losses) / len(losses)


def random_loss_instance(rng):
    """Random small maps + group structure with at most ten features."""
    n_groups = int(rng.integers(2, 4))
    sizes = [int(rng.integers(1, 3)) for _ in range(n_groups)]
    with_prev = bool(rng.integers(0, 2))
    while sum(sizes) * (2 if with_prev else 1) > 10 or (not with_prev and min(sizes) < 2):
        sizes = [int(rng.integers(1, 3)) for _ in range(n_groups)]
        with_prev = bool(rng.integers(0, 2))
    tokens = iter(range(sum(sizes)))
    groups = TokenGroups(tuple(
        TokenGroup(next(tokens), tuple(next(tokens) for _ in range(size - 1)))
        for size in sizes
    ))
    l = sum(sizes)
    h, w = int(rng.integers(2, 4)), int(rng.integers(2, 4))

    def draw(timestep):
        raw = rng.random((h, w, l)) + 0.05
        return AttentionMaps(Tensor(raw / raw.sum(axis=2, keepdims=True)), timestep)

    return draw(0), draw(1) if with_prev else None, groups
