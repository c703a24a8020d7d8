"""
Tests for token features: casing, layout distances, static embeddings and contextual layers
"""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from messyseg.corpus import Document, RawToken
from messyseg.errors import DataError, UsageError
from messyseg.features import (
    CasingCategory,
    DegenerateContextualProvider,
    FileContextualProvider,
    StaticEmbeddingTable,
    WindowContextualProvider,
    casing_category,
    casing_feature,
    casing_matrix,
    distance_vectors,
    load_static_embeddings,
    lowercase_normalize,
    scalar_mix,
    scalar_mix_backward,
)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("", CasingCategory.PADDING),
        ("1923", CasingCategory.NUMERIC),
        ("12a", CasingCategory.MAINLY_NUMERIC),
        ("mary", CasingCategory.ALL_LOWER),
        ("MARRIED", CasingCategory.ALL_UPPER),
        ("Smith", CasingCategory.INITIAL_UPPER),
        ("McD1x", CasingCategory.CONTAINS_DIGIT),
        ("O'Brien", CasingCategory.OTHER),
        (",", CasingCategory.OTHER),
    ],
)
def test_casing_category(text, expected):
    assert casing_category(text) == expected


@given(st.text(max_size=20))
def test_casing_feature_is_one_hot(text):
    feature = casing_feature(text)
    assert feature.shape == (8,)
    assert feature.sum() == 1.0
    assert feature[casing_category(text)] == 1.0


def test_casing_matrix_uses_original_text():
    matrix = casing_matrix([RawToken("Smith", 0, 0), RawToken("smith", 0, 0)])
    assert matrix[0, CasingCategory.INITIAL_UPPER] == 1.0
    assert matrix[1, CasingCategory.ALL_LOWER] == 1.0


def test_lowercase_normalize():
    assert lowercase_normalize("MARRIED") == "married"
    assert lowercase_normalize("Ölz") == "ölz"


def test_distance_vectors():
    tokens = [RawToken("a", 40, 14), RawToken("b", 100, 14), RawToken("c", 40, 28)]
    assert_allclose(distance_vectors(tokens), [[0, 0], [60, 0], [-60, 14]])
    assert_allclose(distance_vectors(tokens, divisor=2.0), [[0, 0], [30, 0], [-30, 7]])


def test_distance_vectors_single_token_and_bad_divisor():
    assert_allclose(distance_vectors([RawToken("a", 5, 5)]), [[0, 0]])
    with pytest.raises(UsageError):
        distance_vectors([RawToken("a", 5, 5)], divisor=0.0)


def test_static_lookup_is_case_insensitive():
    table = StaticEmbeddingTable(3, {"smith": np.array([1.0, 2.0, 3.0])})
    embedded = table.embed([RawToken("Smith", 0, 0), RawToken("SMITH", 0, 0)])
    assert_allclose(embedded, [[1, 2, 3], [1, 2, 3]])


def test_hashed_oov_is_deterministic_across_tables():
    first = StaticEmbeddingTable(8).lookup("kowalski")
    second = StaticEmbeddingTable(8).lookup("kowalski")
    assert np.array_equal(first, second)
    assert not np.array_equal(first, StaticEmbeddingTable(8).lookup("novak"))


def test_zero_oov_policy():
    assert_allclose(StaticEmbeddingTable(4, oov_policy="zeros").lookup("unseen"), np.zeros(4))


def test_load_static_embeddings(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("smith 0.1 0.2\nmary 0.3 0.4\nsmith 9 9\n", encoding="utf-8")
    table = load_static_embeddings(str(path))
    assert table.dimension == 2
    assert len(table) == 2
    assert_allclose(table.lookup("smith"), [0.1, 0.2])


def test_load_static_embeddings_inconsistent_dimension(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("smith 0.1 0.2\nmary 0.3\n", encoding="utf-8")
    with pytest.raises(DataError, match="line 2"):
        load_static_embeddings(str(path))


def test_load_static_embeddings_empty_file(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataError):
        load_static_embeddings(str(path))


def _doc(texts):
    return Document("ctx", [RawToken(t, 10 * i, 0) for i, t in enumerate(texts)])


def test_degenerate_provider_repeats_static_vectors():
    table = StaticEmbeddingTable(4)
    layers = DegenerateContextualProvider(table, num_layers=3).layers(_doc(["a", "b"]))
    assert layers.shape == (2, 3, 4)
    assert_allclose(layers[:, 0], layers[:, 2])


def test_window_provider_layers_average_neighbours():
    table = StaticEmbeddingTable(2, {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]), "c": np.array([1.0, 1.0])})
    layers = WindowContextualProvider(table, num_layers=2).layers(_doc(["a", "b", "c"]))
    assert_allclose(layers[:, 0], [[1, 0], [0, 1], [1, 1]])
    assert_allclose(layers[1, 1], [2 / 3, 2 / 3])
    assert_allclose(layers[0, 1], [0.5, 0.5])


def test_file_provider(tmp_path):
    path = tmp_path / "ctx.jsonl"
    path.write_text(json.dumps({"doc_id": "ctx", "layers": [[[1, 2]], [[3, 4]]]}) + "\n", encoding="utf-8")
    provider = FileContextualProvider(str(path))
    assert (provider.num_layers, provider.dimension) == (1, 2)
    assert_allclose(provider.layers(_doc(["a", "b"])), [[[1, 2]], [[3, 4]]])
    with pytest.raises(DataError, match="no entry"):
        provider.layers(Document("other", [RawToken("a", 0, 0)]))
    with pytest.raises(DataError, match="covers 2 tokens"):
        provider.layers(_doc(["a"]))


def test_scalar_mix_uniform_weights_average_layers():
    layers = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert_allclose(scalar_mix(layers, np.zeros(2), 2.0), [4.0, 6.0])


def test_scalar_mix_rejects_layer_count_mismatch():
    with pytest.raises(UsageError):
        scalar_mix(np.ones((3, 2)), np.zeros(2), 1.0)


def test_scalar_mix_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    layers = rng.normal(size=(4, 3, 5))
    weights = rng.normal(size=3)
    grad_out = rng.normal(size=(4, 5))
    d_mix, d_gamma = scalar_mix_backward(layers, weights, 1.7, grad_out)

    def objective(w, g):
        return float(np.sum(scalar_mix(layers, w, g) * grad_out))

    eps = 1e-6
    numeric = np.array([
        (objective(weights + eps * e, 1.7) - objective(weights - eps * e, 1.7)) / (2 * eps)
        for e in np.eye(3)
    ])
    assert_allclose(d_mix, numeric, rtol=1e-6, atol=1e-8)
    assert d_gamma == pytest.approx((objective(weights, 1.7 + eps) - objective(weights, 1.7 - eps)) / (2 * eps), rel=1e-6)


@pytest.mark.parametrize("separator, ending", [(" ", " \n"), ("\t", "\n"), ("  ", "\t\n")])
def test_load_static_embeddings_accepts_any_whitespace(tmp_path, separator, ending):
    path = tmp_path / "vectors.txt"
    lines = [separator.join(["the", "0.1", "0.2", "0.3"]), separator.join(["of", "0.4", "0.5", "0.6"])]
    path.write_text(ending.join(lines) + ending, encoding="utf-8")
    table = load_static_embeddings(str(path))
    assert table.dimension == 3
    assert_allclose(table.lookup("of"), [0.4, 0.5, 0.6])


@given(st.floats(min_value=-100, max_value=100, allow_nan=False))
def test_scalar_mix_ignores_constant_weight_shift(shift):
    rng = np.random.default_rng(4)
    layers = rng.normal(size=(3, 5))
    weights = rng.normal(size=3)
    assert_allclose(scalar_mix(layers, weights + shift, 1.3), scalar_mix(layers, weights, 1.3), atol=1e-12)


def test_scalar_mix_zero_gamma_gives_zero_vector():
    layers = np.random.default_rng(5).normal(size=(4, 3, 6))
    assert_allclose(scalar_mix(layers, np.array([0.2, -1.0, 3.0]), 0.0), np.zeros((4, 6)))


@pytest.mark.parametrize("layer", [0, 1, 2])
def test_scalar_mix_dominant_weight_selects_layer(layer):
    layers = np.random.default_rng(6).normal(size=(3, 4))
    weights = np.zeros(3)
    weights[layer] = 50.0
    assert_allclose(scalar_mix(layers, weights, 1.0), layers[layer], atol=1e-6)


@given(
    st.integers(min_value=-500, max_value=500),
    st.integers(min_value=-500, max_value=500),
    st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 2000)), min_size=1, max_size=12),
)
def test_distance_vectors_ignore_page_shift(dx, dy, coords):
    tokens = [RawToken("a", x, y) for x, y in coords]
    shifted = [RawToken("a", x + dx, y + dy) for x, y in coords]
    assert_allclose(distance_vectors(shifted), distance_vectors(tokens))
