"""
Corpus Handling for Announcement Lists
Document types, JSON Lines reading and writing, dataset splitting and corpus statistics
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from messyseg.crf import extract_segments
from messyseg.errors import DataError, UsageError
from messyseg.numerics import seeded_rng

logger = logging.getLogger(__name__)


class EntityType(str, Enum):
    """Hand-labelled marriage entities used by the task-based evaluation"""

    BRIDE = "Bride"
    GROOM = "Groom"
    BRIDE_RESIDENCE = "BrideResidence"
    GROOM_RESIDENCE = "GroomResidence"
    WEDDING_DATE = "WeddingDate"


@dataclass(frozen=True)
class Entity:
    """A typed character span [start, end) of the reconstructed document text"""

    type: EntityType
    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise DataError(f"entity {self.type.value} has empty span [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class RawToken:
    """One OCR token: text, top-left pixel corner and offsets into the document text"""

    text: str
    x: int
    y: int
    char_start: int = 0
    char_end: int = 0


@dataclass
class Document:
    """An article: ordered tokens, optional gold labels and gold entities"""

    doc_id: str
    tokens: List[RawToken]
    labels: Optional[List[str]] = None
    entities: List[Entity] = field(default_factory=list)

    def __post_init__(self):
        assign_offsets(self.tokens)

    @property
    def text(self) -> str:
        """Reconstructed text: token texts joined by single spaces"""
        return " ".join(token.text for token in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self):
        """Check the document invariants, raising DataError on the first violation"""
        if self.labels is not None and len(self.labels) != len(self.tokens):
            raise DataError(
                f"document {self.doc_id}: {len(self.labels)} labels for {len(self.tokens)} tokens"
            )
        if self.labels is not None:
            for label in self.labels:
                if label != "O" and not (label.startswith("B-") or label.startswith("I-")):
                    raise DataError(f"document {self.doc_id}: invalid label {label!r}")
        previous_end = -1
        for token in self.tokens:
            if token.x < 0 or token.y < 0:
                raise DataError(f"document {self.doc_id}: negative coordinates on {token.text!r}")
            if token.char_start <= previous_end or token.char_end - token.char_start != len(token.text):
                raise DataError(f"document {self.doc_id}: inconsistent offsets on {token.text!r}")
            previous_end = token.char_end
        text_length = len(self.text)
        for entity in self.entities:
            if entity.start < 0 or entity.end > text_length:
                raise DataError(
                    f"document {self.doc_id}: entity {entity.type.value} [{entity.start}, {entity.end}) "
                    f"outside text of length {text_length}"
                )


def assign_offsets(tokens: Sequence[RawToken]):
    """Recompute char offsets for single-space joined token texts"""
    position = 0
    for token in tokens:
        token.char_start = position
        token.char_end = position + len(token.text)
        position = token.char_end + 1


# JSON Lines schema

class TokenRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str
    x: int = Field(ge=0)
    y: int = Field(ge=0)


class EntityRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: EntityType
    start: int = Field(ge=0)
    end: int = Field(ge=0)


class DocumentRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    doc_id: str
    tokens: List[TokenRecord]
    labels: Optional[List[str]] = None
    entities: List[EntityRecord] = Field(default_factory=list)


def document_from_record(record: Dict[str, Any], line_number: Optional[int] = None) -> Document:
    """
    Validate one JSON object and build a Document

    Args:
        record: Decoded JSON object
        line_number: Source line, reported in errors

    Returns:
        Validated Document with offsets assigned
    """
    try:
        parsed = DocumentRecord.model_validate(record)
    except ValidationError as e:
        raise DataError(f"schema violation: {str(e)}", line_number=line_number)
    try:
        doc = Document(
            doc_id=parsed.doc_id,
            tokens=[RawToken(t.text, t.x, t.y) for t in parsed.tokens],
            labels=list(parsed.labels) if parsed.labels is not None else None,
            entities=[Entity(e.type, e.start, e.end) for e in parsed.entities],
        )
        doc.validate()
    except DataError as e:
        raise DataError(e.detail, line_number=line_number)
    return doc


def document_to_record(doc: Document) -> Dict[str, Any]:
    """Canonical JSON object for a Document (offsets are derived, not stored)"""
    record: Dict[str, Any] = {
        "doc_id": doc.doc_id,
        "tokens": [{"text": t.text, "x": t.x, "y": t.y} for t in doc.tokens],
    }
    if doc.labels is not None:
        record["labels"] = list(doc.labels)
    record["entities"] = [
        {"type": e.type.value, "start": e.start, "end": e.end} for e in doc.entities
    ]
    return record


def parse_corpus(path: str) -> List[Document]:
    """
    Read a JSON Lines corpus, one document per line

    Args:
        path: Path to the UTF-8 corpus file

    Returns:
        Documents in file order
    """
    corpus_path = Path(path)
    if not corpus_path.exists():
        raise UsageError(f"Corpus file not found: {path}")

    docs: List[Document] = []
    with corpus_path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"malformed JSON: {str(e)}", line_number=line_number)
            if not isinstance(record, dict):
                raise DataError("each line must hold a JSON object", line_number=line_number)
            docs.append(document_from_record(record, line_number))

    logger.info(f"Parsed {len(docs)} documents from {path}")
    return docs


def write_corpus(docs: Sequence[Document], path: str):
    """
    Write documents as canonical JSON Lines

    Args:
        docs: Documents to write
        path: Destination file (parent directories are created)
    """
    corpus_path = Path(path)
    try:
        corpus_path.parent.mkdir(parents=True, exist_ok=True)
        with corpus_path.open("w", encoding="utf-8", newline="\n") as handle:
            for doc in docs:
                handle.write(json.dumps(document_to_record(doc), ensure_ascii=False))
                handle.write("\n")
    except OSError as e:
        raise UsageError(f"Cannot write corpus {path}: {str(e)}")
    logger.info(f"Wrote {len(docs)} documents to {path}")


@dataclass
class CorpusSplit:
    train: List[Document]
    dev: List[Document]
    test: List[Document]

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.dev), len(self.test)


def split_corpus(docs: Sequence[Document], ratios: Sequence[float], seed: int) -> CorpusSplit:
    """
    Seeded shuffle followed by a contiguous train/dev/test split

    Args:
        docs: Documents to split
        ratios: Three fractions summing to 1
        seed: Shuffle seed

    Returns:
        Disjoint, exhaustive CorpusSplit
    """
    ratios = list(ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise UsageError(f"split ratios must be three non-negative fractions summing to 1, got {ratios}")
    order = seeded_rng(seed).permutation(len(docs))
    n = len(docs)
    n_train = min(n, int(round(ratios[0] * n)))
    n_dev = min(n - n_train, int(round(ratios[1] * n)))
    shuffled = [docs[i] for i in order]
    return CorpusSplit(
        train=shuffled[:n_train],
        dev=shuffled[n_train:n_train + n_dev],
        test=shuffled[n_train + n_dev:],
    )


@dataclass
class CorpusStats:
    documents: int
    segments: int
    median_segments_per_doc: float
    median_doc_chars: float
    median_segment_chars: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "documents": self.documents,
            "segments": self.segments,
            "median_segments_per_doc": self.median_segments_per_doc,
            "median_doc_chars": self.median_doc_chars,
            "median_segment_chars": self.median_segment_chars,
        }


def corpus_stats(docs: Sequence[Document]) -> CorpusStats:
    """Segment and length statistics of a labelled corpus"""
    per_doc: List[int] = []
    segment_chars: List[int] = []
    for doc in docs:
        segments = extract_segments(doc.labels) if doc.labels is not None else []
        per_doc.append(len(segments))
        for segment in segments:
            start, end = segment.char_span(doc.tokens)
            segment_chars.append(end - start)
    return CorpusStats(
        documents=len(docs),
        segments=int(sum(per_doc)),
        median_segments_per_doc=float(np.median(per_doc)) if per_doc else 0.0,
        median_doc_chars=float(np.median([len(d.text) for d in docs])) if docs else 0.0,
        median_segment_chars=float(np.median(segment_chars)) if segment_chars else 0.0,
    )
