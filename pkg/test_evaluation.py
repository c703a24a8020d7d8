"""
Tests for P_k, task-based evaluation, report writing and run comparison
"""

import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from conftest import B, I, O, build_document
from messyseg.corpus import Entity, EntityType
from messyseg.crf import Segment
from messyseg.errors import DataError, UsageError
from messyseg.evaluation import (
    Counts,
    bio_to_bi,
    compare_runs,
    convert_scheme,
    corpus_pk,
    default_window,
    entity_homes,
    evaluate_corpus,
    pk,
    segment_masses,
    task_eval,
)


def announcement_doc():
    doc = build_document(
        ["John", "and", "Mary", ".", "Adam", "and", "Eve", "."],
        [B, I, I, I, B, I, I, I],
        doc_id="two-couples",
    )
    tokens = doc.tokens

    def entity(entity_type, index):
        return Entity(entity_type, tokens[index].char_start, tokens[index].char_end)

    doc.entities = [
        entity(EntityType.GROOM, 0),
        entity(EntityType.BRIDE, 2),
        entity(EntityType.GROOM, 4),
        entity(EntityType.BRIDE, 6),
    ]
    return doc


def test_bio_to_bi_examples():
    assert bio_to_bi([O, O, B, I, O]) == [B, I, B, I, B]
    assert bio_to_bi([B, O, B]) == [B, B, B]
    assert bio_to_bi([]) == []
    assert bio_to_bi([O], "Death") == ["B-Death"]


@given(st.lists(st.sampled_from([B, I, O]), max_size=30))
def test_bio_to_bi_keeps_segments_and_removes_outside(labels):
    converted = bio_to_bi(labels)
    assert len(converted) == len(labels)
    assert O not in converted
    assert all(c == l for c, l in zip(converted, labels) if l != O)


def test_convert_scheme_leaves_bio_alone():
    doc = build_document(["MARRIED", "John"], [O, B])
    assert convert_scheme([doc], "bio")[0] is doc
    assert convert_scheme([doc], "bi")[0].labels == [B, B]
    assert doc.labels == [O, B]
    with pytest.raises(UsageError):
        convert_scheme([doc], "bioes")


def test_segment_masses():
    assert segment_masses([B, I, I, B, B, I]) == [3, 1, 2]
    with pytest.raises(UsageError):
        segment_masses([B, O])


def test_pk_identical_is_zero():
    labels = [B, I, I, B, I, B, I, I, I]
    assert pk(labels, labels) == 0.0


def test_pk_missed_boundary():
    ref = [B, I, I, I, I, B, I, I, I, I]
    hyp = [B] + [I] * 9
    assert default_window(ref) == 3
    # windows starting at 2, 3 and 4 straddle the missed boundary: 3 of 7
    assert pk(ref, hyp) == pytest.approx(3 / 7)


def test_pk_every_window_wrong():
    assert pk([B, B, B, B], [B, I, I, I]) == 1.0


def test_pk_explicit_window():
    ref = [B, I, B, I]
    hyp = [B, I, I, I]
    assert pk(ref, hyp, k=1) == pytest.approx(1 / 3)


def test_pk_errors():
    with pytest.raises(UsageError, match="too short"):
        pk([B, I], [B, I], k=2)
    with pytest.raises(UsageError):
        pk([B, O, B], [B, I, B])
    with pytest.raises(UsageError):
        pk([B, I], [B])
    with pytest.raises(UsageError):
        pk([B, I, I], [B, I, I], k=0)


def test_corpus_pk_skips_short_documents():
    gold = [[B, I, I, I, I, B, I, I, I, I], [B]]
    predicted = [[B] + [I] * 9, [B]]
    assert corpus_pk(gold, predicted) == pytest.approx(3 / 7)
    assert corpus_pk([[B]], [[B]]) is None


def test_corpus_pk_converts_outside_runs():
    gold = [[O, O, B, I, I, B, I, I]]
    assert corpus_pk(gold, gold) == 0.0


def test_counts_scores():
    counts = Counts(tp=4, fp=4, fn=0)
    assert counts.precision == 0.5
    assert counts.recall == 1.0
    assert counts.f1 == pytest.approx(2 / 3)
    assert Counts().f1 == 0.0
    assert counts + Counts(1, 2, 3) == Counts(5, 6, 3)


def test_entity_homes_majority_rule():
    groom = Entity(EntityType.GROOM, 0, 10)
    assert entity_homes([groom], [(0, 5), (5, 10)]) == {groom: 0}
    assert entity_homes([groom], [(0, 3), (3, 6), (6, 10)]) == {}


def test_task_eval_perfect():
    doc = announcement_doc()
    counts = task_eval([doc], [[Segment(0, 3), Segment(4, 7)]])
    assert counts[EntityType.GROOM] == Counts(tp=2)
    assert counts[EntityType.BRIDE] == Counts(tp=2)
    assert counts[EntityType.WEDDING_DATE] == Counts()


def test_task_eval_merged_segments():
    doc = announcement_doc()
    counts = task_eval([doc], [[Segment(0, 7)]])
    total = sum(counts.values(), Counts())
    assert total == Counts(tp=4, fp=4, fn=0)
    assert total.precision == 0.5
    assert total.recall == 1.0


def test_task_eval_missed_segment():
    doc = announcement_doc()
    counts = task_eval([doc], [[Segment(0, 3)]])
    total = sum(counts.values(), Counts())
    assert total == Counts(tp=2, fp=0, fn=2)


def test_task_eval_overlapping_predictions():
    doc = announcement_doc()
    with pytest.raises(DataError, match="overlap"):
        task_eval([doc], [[Segment(0, 4), Segment(3, 7)]])


def test_task_eval_with_explicit_gold_segments():
    doc = announcement_doc()
    counts = task_eval([doc], [[Segment(0, 3), Segment(4, 7)]], gold_segments=[[Segment(0, 7)]])
    total = sum(counts.values(), Counts())
    # the single gold segment matches the first predicted one only
    assert total == Counts(tp=2, fp=0, fn=2)


def test_evaluate_corpus_and_write(tmp_path):
    doc = announcement_doc()
    report = evaluate_corpus([doc], [[B] + [I] * 7], metadata={"model": "merged"})
    assert report.pk_documents == 1
    assert report.aggregate == Counts(tp=4, fp=4, fn=0)
    assert math.isnan(report.to_frame().loc[0, "pk_mean"])

    tsv_path, json_path = report.write(str(tmp_path / "out" / "report.tsv"))
    frame = pd.read_csv(tsv_path, sep="\t")
    assert list(frame["entity_type"]) == [t.value for t in EntityType] + ["All"]
    assert frame.iloc[-1]["precision"] == pytest.approx(0.5)
    assert frame.iloc[-1]["pk_mean"] == pytest.approx(report.pk_mean)
    data = json.loads(json_path.read_text(encoding="utf-8"))
    assert data["metadata"] == {"model": "merged"}
    assert data["aggregate"]["tp"] == 4


def test_evaluate_corpus_errors():
    doc = announcement_doc()
    with pytest.raises(UsageError):
        evaluate_corpus([], [])
    with pytest.raises(UsageError):
        evaluate_corpus([doc], [[B, I]])


def test_compare_runs_identical_groups():
    assert compare_runs([0.2, 0.3, 0.4], [0.2, 0.3, 0.4]) == (0.0, 1.0)


def test_compare_runs_constant_groups():
    t, p = compare_runs([1, 1, 1], [0, 0, 0])
    assert t == math.inf
    assert p < 0.01


def test_compare_runs_known_values():
    t, p = compare_runs([1, 2, 3], [2, 3, 4])
    assert t == pytest.approx(-1.224744871, abs=1e-6)
    assert p == pytest.approx(0.287864, abs=1e-5)


def test_compare_runs_needs_two_runs_per_side():
    with pytest.raises(UsageError):
        compare_runs([0.1], [0.2, 0.3])


@pytest.mark.parametrize(
    "ref, hyp, expected",
    [
        ([B, I, B, I, I], [B, I, I, I, I], 0.25),
        ([B, I, I, I], [B, I, B, I], 1.0),
    ],
)
def test_pk_hand_enumerated_windows(ref, hyp, expected):
    assert pk(ref, hyp) == pytest.approx(expected)


bi_labels = st.lists(st.sampled_from([B, I]), min_size=1, max_size=29).map(lambda rest: [B] + rest)


@given(bi_labels)
def test_pk_of_identical_segmentations_is_zero(labels):
    assert pk(labels, labels) == 0.0


@given(st.data())
def test_pk_lies_in_unit_interval(data):
    ref = data.draw(bi_labels)
    hyp = data.draw(st.lists(st.sampled_from([B, I]), min_size=len(ref), max_size=len(ref)))
    assert 0.0 <= pk(ref, hyp) <= 1.0


def test_bio_to_bi_on_many_random_sequences():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        labels = [str(label) for label in rng.choice([B, I, O], size=int(rng.integers(0, 25)))]
        converted = bio_to_bi(labels)
        assert O not in converted
        assert len(converted) == len(labels)
        for original, new in zip(labels, converted):
            if original == B:
                assert new == B


def couples_doc(couples):
    texts, labels = [], []
    for index in range(couples):
        texts += [f"Groom{index}", "and", f"Bride{index}", "."]
        labels += [B, I, I, I]
    doc = build_document(texts, labels, doc_id=f"couples-{couples}")
    doc.entities = []
    for index in range(couples):
        groom, bride = doc.tokens[4 * index], doc.tokens[4 * index + 2]
        doc.entities.append(Entity(EntityType.GROOM, groom.char_start, groom.char_end))
        doc.entities.append(Entity(EntityType.BRIDE, bride.char_start, bride.char_end))
    return doc


@pytest.mark.parametrize("couples", [3, 5, 8])
def test_merging_more_segments_lowers_precision(couples):
    doc = couples_doc(couples)
    precisions = []
    for merged in range(1, couples + 1):
        predicted = [Segment(0, 4 * merged - 1)] + [Segment(4 * i, 4 * i + 3) for i in range(merged, couples)]
        total = sum(task_eval([doc], [predicted]).values(), Counts())
        assert total.recall == 1.0
        precisions.append(total.precision)
    assert precisions[0] == 1.0
    assert all(later < earlier for earlier, later in zip(precisions, precisions[1:]))
