"""
Linear-Chain CRF
Sequence scoring, forward-algorithm partition, negative log-likelihood, Viterbi decoding and segment extraction
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from messyseg.errors import UsageError
from messyseg.numerics import DTYPE, Parameter, Tensor, logsumexp

logger = logging.getLogger(__name__)

OUTSIDE = "O"


class TagSet:
    """Ordered segment labels; indices are stable and stored in checkpoints"""

    def __init__(self, scheme: str = "bio", segment_class: str = "Marriage"):
        """
        Initialize the tag set

        Args:
            scheme: "bio" (B, I, O) or "bi" (B, I)
            segment_class: Segment type name carried by B-/I- labels
        """
        if scheme not in ("bio", "bi"):
            raise UsageError(f"unknown tag scheme: {scheme}")
        self.scheme = scheme
        self.segment_class = segment_class
        self.labels: Tuple[str, ...] = (f"B-{segment_class}", f"I-{segment_class}")
        if scheme == "bio":
            self.labels = self.labels + (OUTSIDE,)
        self._index: Dict[str, int] = {label: i for i, label in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, TagSet) and self.labels == other.labels

    def __repr__(self) -> str:
        return f"TagSet({self.scheme!r}, {self.segment_class!r})"

    @property
    def begin(self) -> str:
        return self.labels[0]

    @property
    def inside(self) -> str:
        return self.labels[1]

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UsageError(f"label {label!r} is not in tag set {self.labels}")

    def encode(self, labels: Sequence[str]) -> np.ndarray:
        return np.array([self.index(label) for label in labels], dtype=np.int64)

    def decode(self, indices: Sequence[int]) -> List[str]:
        return [self.labels[int(i)] for i in indices]

    def to_dict(self) -> Dict[str, str]:
        return {"scheme": self.scheme, "segment_class": self.segment_class}

    @classmethod
    def from_dict(cls, data: Dict[str, str]) -> "TagSet":
        return cls(data["scheme"], data["segment_class"])


class CrfParams:
    """Transition, start and stop scores of an L-label chain"""

    def __init__(self, num_labels: int, prefix: str = "crf"):
        self.num_labels = num_labels
        self.transitions = Parameter(f"{prefix}.transitions", np.zeros((num_labels, num_labels), dtype=DTYPE))
        self.start = Parameter(f"{prefix}.start", np.zeros(num_labels, dtype=DTYPE))
        self.stop = Parameter(f"{prefix}.stop", np.zeros(num_labels, dtype=DTYPE))

    def parameters(self) -> List[Parameter]:
        return [self.transitions, self.start, self.stop]


def _check_emissions(emissions: Tensor, crf: CrfParams):
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise UsageError(f"emissions must be a nonempty (n, L) matrix, got shape {emissions.shape}")
    if emissions.shape[1] != crf.num_labels:
        raise UsageError(f"emissions have {emissions.shape[1]} labels, CRF has {crf.num_labels}")


def sequence_score(emissions: Tensor, crf: CrfParams, labels: Sequence[int]) -> float:
    """
    Unnormalised score of one labelling

    start[y_1] + sum_i emissions[i, y_i] + sum_i transitions[y_i, y_i+1] + stop[y_n]
    """
    _check_emissions(emissions, crf)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != emissions.shape[0]:
        raise UsageError(f"{labels.shape[0]} labels for {emissions.shape[0]} emission rows")
    score = crf.start.value[labels[0]] + crf.stop.value[labels[-1]]
    score += emissions[np.arange(len(labels)), labels].sum()
    score += crf.transitions.value[labels[:-1], labels[1:]].sum()
    return float(score)


def forward_scores(emissions: Tensor, crf: CrfParams) -> Tensor:
    """Forward log-potentials alpha, shape (n, L)"""
    transitions = crf.transitions.value
    alpha = np.empty_like(emissions)
    alpha[0] = crf.start.value + emissions[0]
    for i in range(1, emissions.shape[0]):
        alpha[i] = logsumexp(alpha[i - 1][:, None] + transitions, axis=0) + emissions[i]
    return alpha


def backward_scores(emissions: Tensor, crf: CrfParams) -> Tensor:
    """Backward log-potentials beta, shape (n, L); beta[n-1] = stop"""
    transitions = crf.transitions.value
    n = emissions.shape[0]
    beta = np.empty_like(emissions)
    beta[n - 1] = crf.stop.value
    for i in range(n - 2, -1, -1):
        beta[i] = logsumexp(transitions + (emissions[i + 1] + beta[i + 1])[None, :], axis=1)
    return beta


def log_partition(emissions: Tensor, crf: CrfParams) -> float:
    """Log of the summed exponentiated scores of all L^n labellings"""
    _check_emissions(emissions, crf)
    alpha = forward_scores(emissions, crf)
    return float(logsumexp(alpha[-1] + crf.stop.value))


def nll_loss(
    emissions: Tensor, crf: CrfParams, gold_labels: Sequence[int]
) -> Tuple[float, Tensor]:
    """
    Negative log-likelihood of the gold labelling, with gradients

    Gradients with respect to the CRF parameters are accumulated into their
    Parameter.grad; the emission gradient is returned.

    Args:
        emissions: (n, L) label scores
        crf: CRF parameters
        gold_labels: Gold label indices

    Returns:
        (loss, d_emissions)
    """
    _check_emissions(emissions, crf)
    gold = np.asarray(gold_labels, dtype=np.int64)
    n, num_labels = emissions.shape
    transitions = crf.transitions.value

    alpha = forward_scores(emissions, crf)
    beta = backward_scores(emissions, crf)
    log_z = float(logsumexp(alpha[-1] + crf.stop.value))
    loss = log_z - sequence_score(emissions, crf, gold)

    unary = np.exp(alpha + beta - log_z)
    d_emissions = unary.copy()
    d_emissions[np.arange(n), gold] -= 1.0

    d_transitions = np.zeros_like(transitions)
    for i in range(n - 1):
        pairwise = alpha[i][:, None] + transitions + (emissions[i + 1] + beta[i + 1])[None, :]
        d_transitions += np.exp(pairwise - log_z)
    np.add.at(d_transitions, (gold[:-1], gold[1:]), -1.0)

    d_start = unary[0].copy()
    d_start[gold[0]] -= 1.0
    d_stop = unary[-1].copy()
    d_stop[gold[-1]] -= 1.0

    crf.transitions.grad += d_transitions
    crf.start.grad += d_start
    crf.stop.grad += d_stop
    return float(loss), d_emissions


def viterbi(emissions: Tensor, crf: CrfParams) -> Tuple[List[int], float]:
    """
    Highest-scoring labelling

    Ties are broken towards the lowest label index at every backtracking step.

    Returns:
        (label indices, best score)
    """
    _check_emissions(emissions, crf)
    n = emissions.shape[0]
    transitions = crf.transitions.value
    delta = crf.start.value + emissions[0]
    backpointers = np.zeros((n, crf.num_labels), dtype=np.int64)
    for i in range(1, n):
        candidates = delta[:, None] + transitions
        backpointers[i] = np.argmax(candidates, axis=0)
        delta = candidates[backpointers[i], np.arange(crf.num_labels)] + emissions[i]
    final = delta + crf.stop.value
    best = int(np.argmax(final))
    path = [best]
    for i in range(n - 1, 0, -1):
        best = int(backpointers[i, best])
        path.append(best)
    path.reverse()
    return path, float(final[path[-1]])


@dataclass(frozen=True)
class Segment:
    """Inclusive token span [first, last] of one announcement"""

    first: int
    last: int
    segment_class: str = "Marriage"

    def __post_init__(self):
        if self.first > self.last:
            raise UsageError(f"segment [{self.first}, {self.last}] is reversed")

    @property
    def size(self) -> int:
        return self.last - self.first + 1

    def char_span(self, tokens: Sequence) -> Tuple[int, int]:
        """Character span [start, end) covered by the segment's tokens"""
        return tokens[self.first].char_start, tokens[self.last].char_end


def _split_label(label: str) -> Tuple[str, Optional[str]]:
    if label == OUTSIDE:
        return OUTSIDE, None
    prefix, _, segment_class = label.partition("-")
    if prefix not in ("B", "I") or not segment_class:
        raise UsageError(f"invalid segment label: {label!r}")
    return prefix, segment_class


def extract_segments(labels: Sequence[str]) -> List[Segment]:
    """
    Read segments off a label sequence

    B starts a segment, I extends the open one, O closes it. An I at the document
    start, after an O, or after a segment of another class starts a new segment.
    """
    segments: List[Segment] = []
    open_start: Optional[int] = None
    open_class: Optional[str] = None
    for i, label in enumerate(labels):
        prefix, segment_class = _split_label(label)
        if prefix == OUTSIDE:
            if open_start is not None:
                segments.append(Segment(open_start, i - 1, open_class))
            open_start, open_class = None, None
            continue
        if prefix == "B" or open_start is None or segment_class != open_class:
            if open_start is not None:
                segments.append(Segment(open_start, i - 1, open_class))
            open_start, open_class = i, segment_class
    if open_start is not None:
        segments.append(Segment(open_start, len(labels) - 1, open_class))
    return segments


def segments_to_labels(segments: Sequence[Segment], length: int, tagset: TagSet) -> List[str]:
    """Inverse of extract_segments for disjoint, ordered segments"""
    if tagset.scheme == "bi" and length and sum(s.size for s in segments) != length:
        raise UsageError("BI labelling needs segments covering every token")
    labels = [OUTSIDE] * length
    for segment in segments:
        labels[segment.first] = f"B-{segment.segment_class}"
        for i in range(segment.first + 1, segment.last + 1):
            labels[i] = f"I-{segment.segment_class}"
    return labels
