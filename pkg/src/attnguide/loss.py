"""Cosine-similarity InfoNCE over labelled attention-map features.

The per-pair objective is the log loss of a softmax classifier that must
pick the positive among the positive plus all negatives, with similarities
divided by a temperature. The run-level objective averages it over every
ordered positive pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from . import numerics
from .attention import AttentionMaps
from .errors import ConfigError, ContractError, DegenerateInputError
from .numerics import Node, cosine_sim
from .pairing import TokenGroups, build_features, enumerate_pairs

__all__ = ["LossConfig", "cosine_sim", "info_nce", "nce_from_sims", "contrastive_loss"]


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


def _scalar(x) -> float:
    return float(x.value.item()) if isinstance(x, Node) else float(numerics.as_tensor(x).item())


def nce_from_sims(positive_sim, negative_sims, cfg: LossConfig):
    """The softmax-log form on precomputed similarities.

    Stabilised as a log-sum-exp with the max logit subtracted; the shift is
    a detached constant and cancels exactly, so gradients are unaffected.
    """
    if not negative_sims:
        raise ContractError("at least one negative similarity is required")
    logits = [numerics.scale(s, 1.0 / cfg.tau) for s in (positive_sim, *negative_sims)]
    shift = max(_scalar(lg) for lg in logits)
    total = reduce(numerics.add, [numerics.exp(numerics.sub(lg, shift)) for lg in logits])
    out = numerics.sub(numerics.add(numerics.log(total), shift), logits[0])
    return out if isinstance(out, Node) else float(out.item())


def info_nce(anchor, positive, negatives, cfg: LossConfig):
    """InfoNCE of one anchor against its positive and all its negatives."""
    if not negatives:
        raise ContractError("at least one negative is required")
    s_pos = cosine_sim(anchor, positive)
    s_negs = [cosine_sim(anchor, n) for n in negatives]
    return nce_from_sims(s_pos, s_negs, cfg)


def _mean_pair_loss_values(features, pairs, cfg: LossConfig) -> float:
    # Fast plain-value evaluation over the already-enumerated pair set. One
    # cosine matrix plus per-anchor cached negative sums; mathematically the
    # same stabilised expression as nce_from_sims.
    rows = np.stack([f.map.data for f in features])
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    unit = rows / norms[:, None]
    logits = (unit @ unit.T) / cfg.tau
    index = {id(f): i for i, f in enumerate(features)}
    labels = np.array([f.label for f in features])

    shift: dict[int, float] = {}
    neg_sum: dict[int, float] = {}
    for i in range(len(features)):
        others = np.arange(len(features)) != i
        shift[i] = float(logits[i, others].max())
        neg = labels != labels[i]
        neg_sum[i] = float(np.exp(logits[i, neg] - shift[i]).sum())

    total = 0.0
    for entry in pairs.entries:
        a = index[id(entry.anchor)]
        p = index[id(entry.positive)]
        pos_term = float(np.exp(logits[a, p] - shift[a]))
        total += float(np.log(pos_term + neg_sum[a]) + shift[a] - logits[a, p])
    return total / len(pairs.entries)


def contrastive_loss(a_t: AttentionMaps, a_prev: AttentionMaps | None,
                     groups: TokenGroups, cfg: LossConfig):
    """Mean InfoNCE over all ordered positive pairs of grouped token maps.

    Differentiable with respect to the latent whenever ``a_t`` carries a
    tape node; with plain maps it returns a float (computed by a vectorised
    evaluator that agrees with the taped path to rounding error).
    """
    features = build_features(a_t, a_prev, groups)
    pairs = enumerate_pairs(features)
    if not isinstance(a_t.maps, Node):
        return _mean_pair_loss_values(features, pairs, cfg)
    terms = [
        info_nce(e.anchor.map, e.positive.map, [n.map for n in e.negatives], cfg)
        for e in pairs.entries
    ]
    return numerics.scale(reduce(numerics.add, terms), 1.0 / len(terms))
