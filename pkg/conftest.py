"""
Shared pytest fixtures for the messyseg test suite
"""

from typing import List, Optional, Sequence

import pytest

from messyseg.config import ModelConfig
from messyseg.corpus import Document, Entity, RawToken
from messyseg.synth import synth_generate

B, I, O = "B-Marriage", "I-Marriage", "O"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models end to end")


def build_document(
    texts: Sequence[str],
    labels: Optional[Sequence[str]] = None,
    doc_id: str = "doc-0",
    entities: Sequence[Entity] = (),
) -> Document:
    """Tokens laid out on one line, a new line at every B label"""
    tokens: List[RawToken] = []
    x, y = 40, 14
    for i, text in enumerate(texts):
        if labels is not None and i > 0 and labels[i] == B:
            x, y = 40, y + 14
        tokens.append(RawToken(text, x, y))
        x += 10 * len(text) + 10
    return Document(doc_id, tokens, list(labels) if labels is not None else None, list(entities))


@pytest.fixture
def make_doc():
    return build_document


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Small model with window contextual layers and no dropout"""
    return ModelConfig(
        char_dim=4,
        char_filters=5,
        static_dim=6,
        contextual_dim=6,
        contextual_layers=2,
        contextual_provider="window",
        hidden_size=5,
        dropout=0.0,
        init_scale=0.3,
        seed=3,
    )


@pytest.fixture(scope="session")
def synthetic_corpus() -> List[Document]:
    return synth_generate(40, seed=11)
