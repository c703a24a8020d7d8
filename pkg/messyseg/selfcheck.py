"""
Numeric Self-Checks
Finite-difference certification of the full model and brute-force oracles for the CRF and P_k
"""

import itertools
import logging
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from messyseg.config import ModelConfig
from messyseg.corpus import Document, RawToken
from messyseg.crf import CrfParams, log_partition, sequence_score, viterbi
from messyseg.evaluation import pk
from messyseg.layers import CharVocab
from messyseg.model import SegmentationModel
from messyseg.numerics import derived_rng, gradient_check, logsumexp

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
PARTITION_TOLERANCE = 1e-6
WORDS = ["MARRIED", "Smith", "mary", "of", "Oak", "Park", ",", ".", "24", "J.", "and", ""]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def tiny_config(seed: int, scheme: str = "bio") -> ModelConfig:
    """Small dimensions that keep finite differences fast"""
    return ModelConfig(
        scheme=scheme,
        char_dim=3,
        char_filters=4,
        char_kernel=3,
        static_dim=4,
        contextual_dim=4,
        contextual_layers=2,
        contextual_provider="window",
        hidden_size=3,
        init_scale=0.5,
        dropout=0.0,
        seed=seed,
    )


def _random_document(rng: np.random.Generator, length: int, labels: List[str]) -> Document:
    tokens = [
        RawToken(str(rng.choice(WORDS)), int(rng.integers(0, 500)), int(rng.integers(0, 100)))
        for _ in range(length)
    ]
    gold = [str(rng.choice(labels)) for _ in range(length)]
    return Document(f"check-{length}", tokens, gold)


def check_model_gradients(instances: int = 20, coords_per_param: int = 25) -> CheckResult:
    """Full-model NLL gradient against central differences on 3-token documents"""
    start = time.perf_counter()
    worst = 0.0
    for seed in range(instances):
        rng = derived_rng(seed, "gradient-check")
        config = tiny_config(seed)
        doc = _random_document(rng, 3, ["B-Marriage", "I-Marriage", "O"])
        model = SegmentationModel(config, CharVocab.build(t.text for t in doc.tokens))
        features = model.featurize(doc)

        def loss_fn(_params) -> float:
            return model.loss_and_grad(features, "infer")

        error = gradient_check(loss_fn, model.parameters(), eps=1e-5, coords_per_param=coords_per_param, rng=rng)
        worst = max(worst, error)
    return CheckResult(
        "model gradients",
        worst < GRADIENT_TOLERANCE,
        f"max relative error {worst:.2e} over {instances} instances",
        time.perf_counter() - start,
    )


def _random_crf(rng: np.random.Generator, num_labels: int) -> CrfParams:
    crf = CrfParams(num_labels)
    crf.transitions.value[...] = rng.normal(size=(num_labels, num_labels))
    crf.start.value[...] = rng.normal(size=num_labels)
    crf.stop.value[...] = rng.normal(size=num_labels)
    return crf


def check_crf_oracle(instances: int = 50, max_length: int = 8, num_labels: int = 3) -> CheckResult:
    """Forward algorithm and Viterbi against exhaustive enumeration of all label paths"""
    start = time.perf_counter()
    rng = derived_rng(0, "crf-oracle")
    failures = []
    for instance in range(instances):
        length = int(rng.integers(1, max_length + 1))
        emissions = rng.normal(size=(length, num_labels))
        crf = _random_crf(rng, num_labels)
        scores = np.array(
            [sequence_score(emissions, crf, path) for path in itertools.product(range(num_labels), repeat=length)]
        )
        if abs(log_partition(emissions, crf) - float(logsumexp(scores))) > PARTITION_TOLERANCE:
            failures.append(f"instance {instance}: log partition")
        path, best = viterbi(emissions, crf)
        if not np.isclose(best, scores.max(), rtol=0.0, atol=1e-9) or not np.isclose(
            sequence_score(emissions, crf, path), scores.max(), rtol=0.0, atol=1e-9
        ):
            failures.append(f"instance {instance}: viterbi")
    detail = "; ".join(failures) if failures else f"{instances} instances agree"
    return CheckResult("crf oracle", not failures, detail, time.perf_counter() - start)


def brute_force_pk(ref: List[str], hyp: List[str], k: int) -> float:
    """Window scan that compares 'a segment starts inside (i, i+k]' on both sides"""
    disagreements = 0
    for i in range(len(ref) - k):
        ref_split = any(label.startswith("B") for label in ref[i + 1:i + k + 1])
        hyp_split = any(label.startswith("B") for label in hyp[i + 1:i + k + 1])
        disagreements += ref_split != hyp_split
    return disagreements / (len(ref) - k)


def check_pk_oracle(instances: int = 200) -> CheckResult:
    """Worked P_k examples plus agreement with the brute-force scanner"""
    start = time.perf_counter()
    b, i = "B-Marriage", "I-Marriage"
    failures = []
    worked = [
        ([b, i, b, i, i], [b, i, b, i, i], 0.0),
        ([b, i, b, i, i], [b, i, i, i, i], 0.25),
        ([b, i, i, i], [b, i, b, i], 1.0),
    ]
    for ref, hyp, expected in worked:
        if pk(ref, hyp) != expected:
            failures.append(f"worked example {ref} / {hyp}")

    rng = derived_rng(0, "pk-oracle")
    for instance in range(instances):
        length = int(rng.integers(2, 30))
        ref = [b] + [str(rng.choice([b, i], p=[0.3, 0.7])) for _ in range(length - 1)]
        hyp = [str(rng.choice([b, i], p=[0.3, 0.7])) for _ in range(length)]
        k = int(rng.integers(1, length))
        if pk(ref, hyp, k) != brute_force_pk(ref, hyp, k):
            failures.append(f"random instance {instance}")
    detail = "; ".join(failures) if failures else f"3 worked examples and {instances} random instances agree"
    return CheckResult("pk oracle", not failures, detail, time.perf_counter() - start)


CHECKS: List[Callable[[], CheckResult]] = [check_model_gradients, check_crf_oracle, check_pk_oracle]


def run_selfcheck() -> List[CheckResult]:
    """Run every numeric check; failures are reported, not raised"""
    results = []
    for check in CHECKS:
        try:
            result = check()
        except Exception as e:
            logger.error(f"Error running {check.__name__}: {str(e)}")
            result = CheckResult(check.__name__, False, f"raised {type(e).__name__}: {str(e)}", 0.0)
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"{result.name}: {'ok' if result.passed else 'FAILED'} ({result.detail}, {result.seconds:.1f}s)")
        results.append(result)
    return results
