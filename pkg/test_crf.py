"""
Tests for the linear-chain CRF, decoding and segment extraction
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose
from scipy.special import logsumexp as scipy_logsumexp

from messyseg.crf import (
    CrfParams,
    Segment,
    TagSet,
    extract_segments,
    log_partition,
    nll_loss,
    segments_to_labels,
    sequence_score,
    viterbi,
)
from messyseg.errors import UsageError
from messyseg.numerics import Parameter, gradient_check, seeded_rng

B, I, O = "B-Marriage", "I-Marriage", "O"


def random_crf(num_labels: int, seed: int) -> CrfParams:
    rng = seeded_rng(seed)
    crf = CrfParams(num_labels)
    crf.transitions.value[...] = rng.normal(size=(num_labels, num_labels))
    crf.start.value[...] = rng.normal(size=num_labels)
    crf.stop.value[...] = rng.normal(size=num_labels)
    return crf


def all_scores(emissions, crf):
    n, num_labels = emissions.shape
    paths = list(itertools.product(range(num_labels), repeat=n))
    return paths, np.array([sequence_score(emissions, crf, path) for path in paths])


def test_tagset_orders():
    assert TagSet("bio").labels == (B, I, O)
    assert TagSet("bi").labels == (B, I)
    assert TagSet("bio", "Death").begin == "B-Death"
    with pytest.raises(UsageError):
        TagSet("bilou")
    with pytest.raises(UsageError):
        TagSet("bi").index(O)


def test_tagset_round_trips_through_dict():
    tagset = TagSet("bi", "Birth")
    assert TagSet.from_dict(tagset.to_dict()) == tagset


def test_sequence_score_by_hand():
    crf = CrfParams(2)
    crf.transitions.value[...] = [[0.5, -1.0], [2.0, 0.0]]
    crf.start.value[...] = [0.1, 0.2]
    crf.stop.value[...] = [0.3, 0.4]
    emissions = np.array([[1.0, 0.0], [0.0, 3.0]])
    # start[0] + e[0,0] + t[0,1] + e[1,1] + stop[1]
    assert sequence_score(emissions, crf, [0, 1]) == pytest.approx(0.1 + 1.0 - 1.0 + 3.0 + 0.4)


@pytest.mark.parametrize("n, num_labels, seed", [(1, 3, 0), (2, 2, 1), (4, 3, 2), (6, 2, 3)])
def test_log_partition_matches_brute_force(n, num_labels, seed):
    crf = random_crf(num_labels, seed)
    emissions = seeded_rng(seed + 100).normal(size=(n, num_labels))
    _, scores = all_scores(emissions, crf)
    assert log_partition(emissions, crf) == pytest.approx(scipy_logsumexp(scores), abs=1e-9)


def test_single_token_partition():
    crf = CrfParams(3)
    emissions = np.array([[0.0, 1.0, 2.0]])
    assert log_partition(emissions, crf) == pytest.approx(np.log(1 + np.e + np.e ** 2))


@pytest.mark.parametrize("seed", range(5))
def test_viterbi_matches_brute_force(seed):
    crf = random_crf(3, seed)
    emissions = seeded_rng(seed).normal(size=(5, 3))
    paths, scores = all_scores(emissions, crf)
    path, score = viterbi(emissions, crf)
    assert score == pytest.approx(scores.max(), abs=1e-9)
    assert tuple(path) == paths[int(np.argmax(scores))]


def test_viterbi_breaks_ties_towards_lowest_index():
    path, score = viterbi(np.zeros((4, 3)), CrfParams(3))
    assert path == [0, 0, 0, 0]
    assert score == 0.0


def test_nll_is_non_negative_and_matches_definition():
    crf = random_crf(3, 7)
    emissions = seeded_rng(8).normal(size=(4, 3))
    gold = [0, 1, 2, 2]
    loss, _ = nll_loss(emissions, crf, gold)
    assert loss >= 0.0
    assert loss == pytest.approx(log_partition(emissions, crf) - sequence_score(emissions, crf, gold))


def test_nll_gradients():
    crf = random_crf(3, 9)
    emissions = Parameter("emissions", seeded_rng(10).normal(size=(5, 3)))
    gold = [0, 1, 1, 2, 0]

    def loss_fn(_params):
        loss, d_emissions = nll_loss(emissions.value, crf, gold)
        emissions.grad += d_emissions
        return loss

    assert gradient_check(loss_fn, [emissions] + crf.parameters()) < 1e-5


def test_emission_gradient_rows_sum_to_zero():
    crf = random_crf(2, 11)
    _, d_emissions = nll_loss(seeded_rng(12).normal(size=(6, 2)), crf, [0, 1, 1, 0, 1, 1])
    assert_allclose(d_emissions.sum(axis=1), np.zeros(6), atol=1e-12)


def test_emission_shape_errors():
    with pytest.raises(UsageError):
        log_partition(np.zeros((0, 3)), CrfParams(3))
    with pytest.raises(UsageError):
        viterbi(np.zeros((2, 2)), CrfParams(3))
    with pytest.raises(UsageError):
        sequence_score(np.zeros((2, 3)), CrfParams(3), [0])


def test_extract_segments_bio():
    labels = [O, B, I, I, O, B, B, I]
    assert extract_segments(labels) == [Segment(1, 3), Segment(5, 5), Segment(6, 7)]


def test_extract_segments_repairs_dangling_inside():
    assert extract_segments([I, I, O, I, B]) == [Segment(0, 1), Segment(3, 3), Segment(4, 4)]


def test_extract_segments_class_change_starts_new_segment():
    labels = ["B-Marriage", "I-Marriage", "I-Death"]
    assert extract_segments(labels) == [Segment(0, 1), Segment(2, 2, "Death")]


def test_extract_segments_edge_cases():
    assert extract_segments([]) == []
    assert extract_segments([O, O]) == []
    with pytest.raises(UsageError):
        extract_segments(["X-Marriage"])


def test_segments_to_labels():
    tagset = TagSet("bio")
    assert segments_to_labels([Segment(1, 2)], 4, tagset) == [O, B, I, O]
    with pytest.raises(UsageError):
        segments_to_labels([Segment(1, 2)], 4, TagSet("bi"))


@given(st.lists(st.sampled_from([B, I, O]), max_size=25))
def test_segments_round_trip_normalises_labels(labels):
    segments = extract_segments(labels)
    canonical = segments_to_labels(segments, len(labels), TagSet("bio"))
    assert extract_segments(canonical) == segments
    assert [label == O for label in canonical] == [label == O for label in labels]


@pytest.mark.parametrize("seed", range(20))
def test_log_partition_bounds_every_path_score(seed):
    rng = seeded_rng(200 + seed)
    n, num_labels = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    crf = random_crf(num_labels, seed)
    emissions = rng.normal(scale=2.0, size=(n, num_labels))
    _, scores = all_scores(emissions, crf)
    assert np.all(log_partition(emissions, crf) >= scores - 1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_viterbi_ignores_a_constant_added_at_one_position(seed):
    rng = seeded_rng(300 + seed)
    crf = random_crf(3, seed)
    emissions = rng.normal(size=(6, 3))
    shifted = emissions.copy()
    shifted[int(rng.integers(6))] += rng.normal(scale=10.0)
    assert viterbi(shifted, crf)[0] == viterbi(emissions, crf)[0]


@pytest.mark.parametrize("seed", range(10))
def test_viterbi_path_is_most_likely_among_sampled_paths(seed):
    rng = seeded_rng(400 + seed)
    crf = random_crf(3, seed)
    emissions = rng.normal(size=(8, 3))
    best, _ = viterbi(emissions, crf)
    best_nll, _ = nll_loss(emissions, crf, best)
    assert best_nll >= -1e-9
    for _ in range(200):
        sampled = [int(v) for v in rng.integers(3, size=8)]
        sampled_nll, _ = nll_loss(emissions, crf, sampled)
        assert np.exp(-best_nll) >= np.exp(-sampled_nll) - 1e-12


def test_single_label_chain_has_zero_loss():
    crf = random_crf(1, 13)
    loss, d_emissions = nll_loss(seeded_rng(14).normal(size=(5, 1)), crf, [0] * 5)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert_allclose(d_emissions, np.zeros((5, 1)), atol=1e-12)


@pytest.mark.parametrize("n, num_labels", [(1, 3), (2, 3), (5, 2), (4, 4)])
def test_uniform_chain_partition(n, num_labels):
    assert log_partition(np.zeros((n, num_labels)), CrfParams(num_labels)) == pytest.approx(n * np.log(num_labels))


def test_uniform_chain_loss_for_two_tokens():
    loss, _ = nll_loss(np.zeros((2, 3)), CrfParams(3), [0, 2])
    assert loss == pytest.approx(2 * np.log(3))
