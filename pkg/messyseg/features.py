"""
Token Feature Extraction
Casing one-hots, layout distance vectors, static word embeddings and scalar-mixed contextual layers
"""

import hashlib
import json
import logging
from enum import IntEnum
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from messyseg.corpus import Document, RawToken
from messyseg.errors import DataError, UsageError
from messyseg.numerics import DTYPE, Tensor

logger = logging.getLogger(__name__)


class CasingCategory(IntEnum):
    """Capitalisation classes; the one-hot index is the ordinal"""

    PADDING = 0
    NUMERIC = 1
    MAINLY_NUMERIC = 2
    ALL_LOWER = 3
    ALL_UPPER = 4
    INITIAL_UPPER = 5
    CONTAINS_DIGIT = 6
    OTHER = 7


CASING_DIM = len(CasingCategory)


def casing_category(text: str) -> CasingCategory:
    """
    Classify the capitalisation of a token's original text

    Tests run in a fixed order and the first match wins, so every string maps to
    exactly one category.
    """
    if not text:
        return CasingCategory.PADDING
    digits = sum(1 for ch in text if ch.isdigit())
    letters = [ch for ch in text if ch.isalpha()]
    if digits == len(text):
        return CasingCategory.NUMERIC
    if digits / len(text) > 0.5:
        return CasingCategory.MAINLY_NUMERIC
    if letters and not any(ch.isupper() for ch in letters):
        return CasingCategory.ALL_LOWER
    if letters and all(ch.isupper() for ch in letters):
        return CasingCategory.ALL_UPPER
    if text[0].isalpha() and text[0].isupper() and all(ch.islower() for ch in letters[1:]):
        return CasingCategory.INITIAL_UPPER
    if digits > 0:
        return CasingCategory.CONTAINS_DIGIT
    return CasingCategory.OTHER


def casing_feature(text: str) -> Tensor:
    """8-dimensional one-hot vector of the casing category"""
    one_hot = np.zeros(CASING_DIM, dtype=DTYPE)
    one_hot[casing_category(text)] = 1.0
    return one_hot


def lowercase_normalize(text: str) -> str:
    """Unicode-aware lowercasing applied before every embedding lookup"""
    return text.lower()


def distance_vectors(tokens: Sequence[RawToken], divisor: float = 1.0) -> Tensor:
    """
    Offsets between consecutive bounding-box corners

    Args:
        tokens: Tokens in document order
        divisor: Optional scale applied to every delta

    Returns:
        Array of shape (n, 2); row 0 is (0, 0), row i is (x_i - x_{i-1}, y_i - y_{i-1})
    """
    if divisor <= 0:
        raise UsageError(f"distance divisor must be positive, got {divisor}")
    coords = np.array([[t.x, t.y] for t in tokens], dtype=DTYPE).reshape(-1, 2)
    deltas = np.zeros_like(coords)
    if len(tokens) > 1:
        deltas[1:] = np.diff(coords, axis=0)
    return deltas / divisor


class StaticEmbeddingTable:
    """Fixed word vectors with a deterministic out-of-vocabulary policy"""

    def __init__(
        self,
        dimension: int,
        vectors: Optional[Dict[str, Tensor]] = None,
        oov_policy: str = "hashed",
    ):
        """
        Initialize the table

        Args:
            dimension: Vector dimension shared by every entry
            vectors: Token -> vector mapping (lowercased tokens)
            oov_policy: "hashed" (Gaussian vector seeded by token bytes) or "zeros"
        """
        if oov_policy not in ("hashed", "zeros"):
            raise UsageError(f"unknown OOV policy: {oov_policy}")
        self.dimension = dimension
        self.vectors: Dict[str, Tensor] = vectors or {}
        self.oov_policy = oov_policy
        for token, vector in self.vectors.items():
            if vector.shape != (dimension,):
                raise UsageError(f"vector for {token!r} has shape {vector.shape}, expected ({dimension},)")

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def _hashed_vector(self, token: str) -> Tensor:
        seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
        rng = np.random.Generator(np.random.PCG64(seed))
        return rng.normal(0.0, 1.0 / np.sqrt(self.dimension), size=self.dimension)

    def lookup(self, token: str) -> Tensor:
        """Vector for an already-normalised token (OOV resolved by policy)"""
        vector = self.vectors.get(token)
        if vector is not None:
            return vector
        if self.oov_policy == "zeros":
            return np.zeros(self.dimension, dtype=DTYPE)
        return self._hashed_vector(token)

    def embed(self, tokens: Sequence[RawToken]) -> Tensor:
        """Stack lookups of lowercased token texts into an (n, dimension) array"""
        if not tokens:
            return np.zeros((0, self.dimension), dtype=DTYPE)
        return np.stack([self.lookup(lowercase_normalize(t.text)) for t in tokens])


def load_static_embeddings(path: str, oov_policy: str = "hashed") -> StaticEmbeddingTable:
    """
    Read a whitespace-separated embedding file (token followed by D floats per line)

    Args:
        path: Path to the UTF-8 text file
        oov_policy: Policy for tokens missing from the file

    Returns:
        StaticEmbeddingTable whose dimension is inferred from the first line
    """
    file_path = Path(path)
    if not file_path.exists():
        raise UsageError(f"Embedding file not found: {path}")

    vectors: Dict[str, Tensor] = {}
    dimension = None
    with file_path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            parts = line.split()
            if not line.strip():
                continue
            token, values = parts[0], parts[1:]
            if dimension is None:
                dimension = len(values)
                if dimension == 0:
                    raise DataError("embedding line carries no values", line_number=line_number)
            if len(values) != dimension:
                raise DataError(
                    f"expected {dimension} values for {token!r}, found {len(values)}",
                    line_number=line_number,
                )
            if token in vectors:
                continue
            try:
                vectors[token] = np.array([float(v) for v in values], dtype=DTYPE)
            except ValueError as e:
                raise DataError(f"non-numeric embedding value: {str(e)}", line_number=line_number)

    if dimension is None:
        raise DataError(f"embedding file {path} is empty")
    logger.info(f"Loaded {len(vectors)} static embeddings of dimension {dimension} from {path}")
    return StaticEmbeddingTable(dimension, vectors, oov_policy=oov_policy)


class ContextualProvider:
    """Source of per-token contextual layers, shape (n, L, D)"""

    num_layers: int
    dimension: int

    def layers(self, doc: Document) -> Tensor:
        raise NotImplementedError


class DegenerateContextualProvider(ContextualProvider):
    """L identical copies of the static embedding of each token"""

    def __init__(self, table: StaticEmbeddingTable, num_layers: int = 3):
        self.table = table
        self.num_layers = num_layers
        self.dimension = table.dimension

    def layers(self, doc: Document) -> Tensor:
        static = self.table.embed(doc.tokens)
        return np.repeat(static[:, None, :], self.num_layers, axis=1)


class WindowContextualProvider(ContextualProvider):
    """Layer l averages static vectors over a window of radius l around the token"""

    def __init__(self, table: StaticEmbeddingTable, num_layers: int = 3):
        self.table = table
        self.num_layers = num_layers
        self.dimension = table.dimension

    def layers(self, doc: Document) -> Tensor:
        static = self.table.embed(doc.tokens)
        n = static.shape[0]
        prefix = np.vstack([np.zeros((1, self.dimension), dtype=DTYPE), np.cumsum(static, axis=0)])
        result = np.empty((n, self.num_layers, self.dimension), dtype=DTYPE)
        positions = np.arange(n)
        for radius in range(self.num_layers):
            lo = np.maximum(positions - radius, 0)
            hi = np.minimum(positions + radius + 1, n)
            result[:, radius, :] = (prefix[hi] - prefix[lo]) / (hi - lo)[:, None]
        return result


class FileContextualProvider(ContextualProvider):
    """Precomputed layers from a JSON Lines sidecar: {"doc_id", "layers": [token][L][D]}"""

    def __init__(self, path: str):
        """
        Load the sidecar into memory

        Args:
            path: Path to the JSON Lines sidecar file
        """
        sidecar = Path(path)
        if not sidecar.exists():
            raise DataError(f"contextual sidecar not found: {path}")
        self.path = path
        self.entries: Dict[str, Tensor] = {}
        self.num_layers = 0
        self.dimension = 0
        with sidecar.open(encoding="utf-8") as handle:
            for line_number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    doc_id = str(record["doc_id"])
                    layers = np.array(record["layers"], dtype=DTYPE)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise DataError(f"malformed sidecar record: {str(e)}", line_number=line_number)
                if layers.ndim != 3:
                    raise DataError(
                        f"layers for {doc_id} must be [token][L][D], got {layers.ndim} dims",
                        line_number=line_number,
                    )
                if self.entries and layers.shape[1:] != (self.num_layers, self.dimension):
                    raise DataError(
                        f"layers for {doc_id} have shape {layers.shape[1:]}, "
                        f"expected {(self.num_layers, self.dimension)}",
                        line_number=line_number,
                    )
                self.num_layers, self.dimension = layers.shape[1], layers.shape[2]
                self.entries[doc_id] = layers
        logger.info(f"Loaded contextual layers for {len(self.entries)} documents from {path}")

    def layers(self, doc: Document) -> Tensor:
        layers = self.entries.get(doc.doc_id)
        if layers is None:
            raise DataError(f"contextual sidecar {self.path} has no entry for document {doc.doc_id}")
        if layers.shape[0] != len(doc.tokens):
            raise DataError(
                f"sidecar entry for {doc.doc_id} covers {layers.shape[0]} tokens, "
                f"document has {len(doc.tokens)}"
            )
        return layers


def scalar_mix(layers: Tensor, mix_weights: Tensor, gamma: float) -> Tensor:
    """
    gamma * sum_l softmax(mix_weights)_l * layer_l

    Args:
        layers: (L, D) for one token or (n, L, D) for a sequence
        mix_weights: L unnormalised weights
        gamma: Global scale

    Returns:
        (D,) or (n, D) mixed representation
    """
    layers = np.asarray(layers, dtype=DTYPE)
    mix_weights = np.asarray(mix_weights, dtype=DTYPE).reshape(-1)
    if layers.ndim not in (2, 3) or layers.shape[-2] != mix_weights.shape[0]:
        raise UsageError(
            f"scalar_mix expects (..., {mix_weights.shape[0]}, D) layers, got shape {layers.shape}"
        )
    weights = special.softmax(mix_weights)
    return float(gamma) * np.einsum("l,...ld->...d", weights, layers)


def scalar_mix_backward(
    layers: Tensor, mix_weights: Tensor, gamma: float, grad_out: Tensor
) -> Tuple[Tensor, float]:
    """
    Gradients of scalar_mix with respect to mix_weights and gamma

    Returns:
        (d_mix_weights, d_gamma)
    """
    weights = special.softmax(np.asarray(mix_weights, dtype=DTYPE).reshape(-1))
    mixed = np.einsum("l,...ld->...d", weights, layers)
    d_gamma = float(np.sum(grad_out * mixed))
    d_weights = float(gamma) * np.einsum("...d,...ld->...l", grad_out, layers).reshape(-1, len(weights)).sum(axis=0)
    d_mix = weights * (d_weights - np.dot(weights, d_weights))
    return d_mix, d_gamma


def build_contextual_provider(
    kind: str, table: StaticEmbeddingTable, num_layers: int, sidecar: Optional[str] = None
) -> ContextualProvider:
    """Construct the configured contextual provider"""
    if kind == "degenerate":
        return DegenerateContextualProvider(table, num_layers)
    if kind == "window":
        return WindowContextualProvider(table, num_layers)
    if kind == "file":
        if not sidecar:
            raise UsageError("file contextual provider requires a sidecar path")
        return FileContextualProvider(sidecar)
    raise UsageError(f"unknown contextual provider: {kind}")


def casing_matrix(tokens: Sequence[RawToken]) -> Tensor:
    """Stack casing one-hots of the original token texts, shape (n, 8)"""
    matrix = np.zeros((len(tokens), CASING_DIM), dtype=DTYPE)
    for i, token in enumerate(tokens):
        matrix[i, casing_category(token.text)] = 1.0
    return matrix
