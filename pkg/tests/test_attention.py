import numpy as np
import pytest

from attnguide import numerics
from attnguide.attention import (
    AttentionMaps,
    ProjectionWeights,
    TextEmbedding,
    cross_attention,
    token_map,
)
from attnguide.errors import ConfigError, DimensionError
from attnguide.metrics import finite_diff_grad, gradient_gap
from attnguide.numerics import Tape, Tensor, backward, seeded_rng


def _embedding_identity(l, d_text):
    rows = np.zeros((l, d_text))
    rows[np.arange(l), np.arange(l)] = 1.0
    return TextEmbedding(Tensor(rows))


def _random_setup(h=3, w=3, c=2, d=4, l=5, d_text=6, seed=0):
    rng = seeded_rng(seed)
    weights = ProjectionWeights(
        w_query=Tensor(rng.standard_normal((c, d))),
        w_key=Tensor(rng.standard_normal((d_text, d))),
    )
    embedding = TextEmbedding.draw(rng, l, d_text)
    z = Tensor(rng.standard_normal((h, w, c)))
    return z, embedding, weights


def test_embedding_rows_are_unit_norm():
    emb = TextEmbedding.draw(seeded_rng(1), 7, 12)
    np.testing.assert_allclose(np.linalg.norm(emb.tokens.data, axis=1), 1.0, atol=1e-12)


def test_embedding_rejects_unnormalised_rows():
    with pytest.raises(ConfigError):
        TextEmbedding(Tensor(np.ones((2, 3))))


def test_zero_query_projection_gives_uniform_maps():
    z, embedding, weights = _random_setup(l=5)
    zeroed = ProjectionWeights(w_query=numerics.zeros(weights.w_query.shape),
                               w_key=weights.w_key)
    maps = cross_attention(z, embedding, zeroed)
    np.testing.assert_allclose(maps.values().data, 1.0 / 5, atol=1e-15)


def test_hand_set_scores_give_quarter_three_quarter():
    # d=1, c=1: scores at a pixel are q * [0, ln 3], so its maps are [1/4, 3/4]
    embedding = _embedding_identity(2, 2)
    weights = ProjectionWeights(w_query=Tensor([[1.0]]),
                                w_key=Tensor([[0.0], [np.log(3.0)]]))
    z = Tensor(np.ones((2, 2, 1)))
    maps = cross_attention(z, embedding, weights)
    np.testing.assert_allclose(maps.values().data[0, 0], [0.25, 0.75], rtol=1e-14)


def test_output_shape_and_normalisation():
    z, embedding, weights = _random_setup(h=16, w=16, c=4, d=8, l=8, d_text=16, seed=2)
    maps = cross_attention(z, embedding, weights)
    assert maps.values().shape == (16, 16, 8)
    sums = maps.values().data.sum(axis=2)
    assert np.abs(sums - 1.0).max() < 1e-10
    assert maps.values().data.min() >= 0.0


def test_channel_mismatch_raises_dimension_error():
    z, embedding, weights = _random_setup(c=2)
    bad = Tensor(np.zeros((3, 3, 4)))
    with pytest.raises(DimensionError):
        cross_attention(bad, embedding, weights)


def test_score_shift_invariance():
    # with unit first embedding coordinate for every token, biasing the first
    # query column adds a per-pixel constant to all scores: maps unchanged
    l, d_text, c, d = 4, 4, 2, 3
    embedding = _embedding_identity(l, d_text)
    rng = seeded_rng(3)
    w_key = rng.standard_normal((d_text, d))
    w_key[:, 0] = 1.0  # every key gets first coordinate 1
    w_query = rng.standard_normal((c, d))
    z = Tensor(rng.standard_normal((3, 3, c)))
    base = cross_attention(z, embedding,
                           ProjectionWeights(Tensor(w_query), Tensor(w_key)))
    biased = w_query.copy()
    biased[:, 0] += 2.5
    shifted = cross_attention(z, embedding,
                              ProjectionWeights(Tensor(biased), Tensor(w_key)))
    assert np.abs(base.values().data - shifted.values().data).max() < 1e-10


def test_maps_depend_on_latent():
    z, embedding, weights = _random_setup(seed=4)
    other = Tensor(seeded_rng(5).standard_normal(z.shape))
    a = cross_attention(z, embedding, weights).values().data
    b = cross_attention(other, embedding, weights).values().data
    assert np.abs(a - b).max() > 0.0


def test_maps_gradient_matches_finite_differences():
    z, embedding, weights = _random_setup(h=3, w=2, c=2, d=3, l=4, d_text=5, seed=6)
    probe = Tensor(seeded_rng(7).standard_normal((3, 2, 4)))

    def f(latent):
        maps = cross_attention(latent, embedding, weights)
        flat = numerics.reshape(maps.maps, (24,))
        return numerics.cosine_sim(flat, probe)

    tape = Tape()
    (auto,) = backward(tape, f(tape.variable(z)))
    fd = finite_diff_grad(lambda x: float(f(x).item()), z, h=1e-5)
    assert gradient_gap(auto, fd) < 1e-6


def test_token_map_uniform_and_bounds():
    uniform = AttentionMaps(Tensor(np.full((2, 3, 4), 0.25)), timestep=0)
    for j in range(4):
        np.testing.assert_array_equal(token_map(uniform, j).data, np.full((2, 3), 0.25))
    with pytest.raises(IndexError):
        token_map(uniform, 4)


def test_token_map_restacking_reproduces_maps():
    z, embedding, weights = _random_setup(seed=8)
    maps = cross_attention(z, embedding, weights)
    stacked = np.stack([token_map(maps, j).data for j in range(maps.l)], axis=-1)
    np.testing.assert_array_equal(stacked, maps.values().data)


def test_timestep_tag_is_carried():
    z, embedding, weights = _random_setup(seed=9)
    assert cross_attention(z, embedding, weights, timestep=31).timestep == 31
