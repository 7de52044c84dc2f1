"""Pseudo-labelled attention-map features and their contrastive pairs.

Each subject token and its attribute tokens share one group label. For a
denoising step the current maps contribute differentiable features and the
previous step's maps contribute detached ones, so the feature pool spans
two consecutive timesteps. Pairs are directed: every ordered pair of
distinct same-label features is an (anchor, positive) entry, and all
features with a different label act as that entry's negatives.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from . import numerics
from .attention import AttentionMaps, token_map
from .errors import ConfigError, DimensionError, PairingError
from .numerics import Node, Tensor


@dataclass(frozen=True)
class TokenGroup:
    """A subject token index together with its attribute token indices."""

    subject: int
    attributes: tuple[int, ...] = ()

    def tokens(self) -> tuple[int, ...]:
        return (self.subject,) + tuple(self.attributes)


@dataclass(frozen=True)
class TokenGroups:
    """Ordered groups; token indices are distinct across the whole structure."""

    groups: tuple[TokenGroup, ...]

    def __post_init__(self):
        seen: set[int] = set()
        for group in self.groups:
            for tok in group.tokens():
                if not isinstance(tok, int) or tok < 0:
                    raise ConfigError(f"token index {tok!r} must be a nonnegative integer")
                if tok in seen:
                    raise ConfigError(f"token index {tok} appears in more than one group")
                seen.add(tok)

    def __iter__(self):
        return iter(self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    def all_tokens(self) -> tuple[int, ...]:
        return tuple(tok for group in self.groups for tok in group.tokens())

    def validate_token_range(self, token_count: int) -> None:
        for tok in self.all_tokens():
            if tok >= token_count:
                raise ConfigError(f"token index {tok} out of range for {token_count} tokens")


@dataclass(frozen=True, eq=False)
class LabeledFeature:
    """One flattened token map with its group label.

    ``detached`` marks previous-timestep features, which enter the loss as
    constants and carry no gradient.
    """

    label: int
    map: Tensor | Node  # flattened to length h*w
    source_timestep: int
    token: int
    detached: bool


@dataclass(frozen=True)
class PairEntry:
    anchor: LabeledFeature
    positive: LabeledFeature
    negatives: tuple[LabeledFeature, ...]


@dataclass(frozen=True)
class PairSet:
    entries: tuple[PairEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def pairable(groups: TokenGroups, with_prev: bool) -> bool:
    """Whether the group structure can form at least one contrastive pair."""
    if len(groups) < 2:
        return False
    per_group = 2 if with_prev else 1
    return all(len(g.tokens()) * per_group >= 2 for g in groups)


def build_features(a_t: AttentionMaps, a_prev: AttentionMaps | None,
                   groups: TokenGroups) -> list[LabeledFeature]:
    """Label every grouped token's map at the current (and previous) timestep.

    Current-step features keep whatever differentiability ``a_t`` carries;
    previous-step features are always detached values.
    """
    if a_prev is not None and (a_t.h, a_t.w, a_t.l) != (a_prev.h, a_prev.w, a_prev.l):
        raise DimensionError(
            f"attention maps disagree on shape: "
            f"{(a_t.h, a_t.w, a_t.l)} vs {(a_prev.h, a_prev.w, a_prev.l)}"
        )
    groups.validate_token_range(a_t.l)
    size = a_t.h * a_t.w
    prev_values = a_prev.values() if a_prev is not None else None
    features: list[LabeledFeature] = []
    for label, group in enumerate(groups):
        for tok in group.tokens():
            current = numerics.reshape(token_map(a_t, tok), (size,))
            features.append(LabeledFeature(label, current, a_t.timestep, tok, detached=False))
            if a_prev is not None:
                prev = numerics.reshape(numerics.index_last(prev_values, tok), (size,))
                features.append(LabeledFeature(label, prev, a_prev.timestep, tok, detached=True))
    return features


def enumerate_pairs(features: list[LabeledFeature]) -> PairSet:
    """Every ordered same-label pair, each carrying all other-label negatives."""
    counts = Counter(f.label for f in features)
    if len(counts) < 2:
        raise PairingError("no negatives: every feature carries the same label")
    for label, count in counts.items():
        if count < 2:
            raise PairingError(f"label {label} has no positive partner")
    entries: list[PairEntry] = []
    for anchor in features:
        negatives = tuple(f for f in features if f.label != anchor.label)
        for positive in features:
            if positive is anchor or positive.label != anchor.label:
                continue
            entries.append(PairEntry(anchor, positive, negatives))
    return PairSet(tuple(entries))
