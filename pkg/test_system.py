#!/usr/bin/env python3
"""
End-to-End Test for messyseg
Generates a noisy synthetic corpus, trains a tagger, and checks segmentation and task-based scores
"""

import logging
import sys

import pytest

from messyseg.ablation import GridCell, run_ablation
from messyseg.config import ModelConfig, NoiseConfig
from messyseg.corpus import corpus_stats, split_corpus
from messyseg.evaluation import evaluate_corpus
from messyseg.model import train
from messyseg.synth import synth_generate

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

# Desk-scale network: smaller dimensions than the defaults, so it trains with a larger
# learning rate (0.005 instead of 0.001) and pixel distances scaled down by 100.
SYSTEM_CONFIG = ModelConfig(
    char_dim=16,
    char_filters=20,
    static_dim=32,
    contextual_dim=32,
    contextual_layers=3,
    contextual_provider="window",
    hidden_size=32,
    learning_rate=0.005,
    dropout=0.25,
    distance_divisor=100.0,
    max_epochs=15,
    patience=3,
    seed=0,
)


def build_corpus():
    """Noisy synthetic corpus split 300 / 50 / 50"""
    print("🧪 Generating synthetic corpus...")
    docs = synth_generate(400, seed=2024, noise=NoiseConfig.uniform(0.03, seed=2024))
    stats = corpus_stats(docs)
    print(f"   📊 Documents: {stats.documents}, segments: {stats.segments}")
    print(f"   📏 Median segments/doc: {stats.median_segments_per_doc:g}")
    split = split_corpus(docs, (0.75, 0.125, 0.125), seed=0)
    assert split.sizes() == (300, 50, 50)
    return split


def run_end_to_end():
    split = build_corpus()

    print("\n🤖 Training tagger...")
    result = train(split.train, split.dev, SYSTEM_CONFIG)
    print(f"   ✅ Best epoch {result.best_epoch} ({result.stop_reason})")

    print("\n📋 Evaluating on test split...")
    predictions = [result.model.predict(doc).labels for doc in split.test]
    report = evaluate_corpus(split.test, predictions)
    aggregate = report.aggregate
    print(f"   P_k: {report.pk_mean:.4f} ± {report.pk_sd:.4f}")
    print(f"   Precision: {aggregate.precision:.4f}  Recall: {aggregate.recall:.4f}  F1: {aggregate.f1:.4f}")
    return report


@pytest.mark.slow
def test_end_to_end_segmentation():
    report = run_end_to_end()
    assert report.pk_mean <= 0.15
    assert report.aggregate.f1 >= 0.85


@pytest.mark.slow
def test_removing_contextual_layers_does_not_improve_f1():
    split = build_corpus()
    full = GridCell(use_contextual=True, use_static=True, use_distance=True, scheme="bio")
    no_contextual = GridCell(use_contextual=False, use_static=True, use_distance=True, scheme="bio")
    report = run_ablation(split, SYSTEM_CONFIG, grid=[full, no_contextual], seeds=(0, 1, 2))
    summary = report.summary.set_index("cell")
    print(f"   F1 all: {summary.loc[full.name, 'f1_mean']:.4f}  no contextual: {summary.loc[no_contextual.name, 'f1_mean']:.4f}")
    assert (summary["failed"] == 0).all()
    assert summary.loc[full.name, "f1_mean"] >= summary.loc[no_contextual.name, "f1_mean"]


def main():
    """Run the end-to-end check as a script"""
    print("🚀 messyseg End-to-End Test")
    print("=" * 50)
    try:
        run_end_to_end()
        print("\n🎉 End-to-end run complete!")
        return 0
    except Exception as e:
        logger.error(f"End-to-end run failed: {str(e)}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
