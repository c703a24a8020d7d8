"""
Synthetic Announcement Lists
Generates labelled marriage-announcement documents with simulated layout, and injects OCR noise
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from messyseg.config import NoiseConfig, SynthStyle
from messyseg.corpus import Document, Entity, EntityType, RawToken, assign_offsets
from messyseg.errors import UsageError
from messyseg.numerics import derived_rng

logger = logging.getLogger(__name__)

SEGMENT_CLASS = "Marriage"
PUNCTUATION_SWAPS = {".": ",", ",": ".", ";": ":", ":": ";"}
FALLBACK_CHARS = "aceilmnorstu0158"

GROOM_NAMES = [
    "John", "William", "James", "George", "Charles", "Frank", "Joseph", "Henry", "Robert", "Edward",
    "Harry", "Thomas", "Walter", "Arthur", "Fred", "Albert", "Louis", "Paul", "Carl", "Raymond",
]
BRIDE_NAMES = [
    "Mary", "Anna", "Margaret", "Helen", "Elizabeth", "Ruth", "Florence", "Ethel", "Emma", "Marie",
    "Clara", "Bertha", "Alice", "Edna", "Minnie", "Frances", "Grace", "Lillian", "Rose", "Mildred",
]
SURNAMES = [
    "Smith", "Johnson", "Brown", "Miller", "Wilson", "Moore", "Taylor", "Anderson", "Thomas", "Jackson",
    "White", "Harris", "Martin", "Thompson", "Schmidt", "Nelson", "Carlson", "Kowalski", "O'Brien", "Murphy",
    "Becker", "Hoffman", "Larson", "Novak", "Fischer", "Walsh", "Peterson", "Kelly", "Weber", "Lindgren",
]
TOWNS = [
    "Chicago", "Evanston", "Oak Park", "Joliet", "Aurora", "Elgin", "Waukegan", "Cicero", "Berwyn",
    "Des Plaines", "Park Ridge", "Maywood", "Blue Island", "Harvey", "Wilmette", "Skokie", "La Grange",
    "Downers Grove", "Wheaton", "Naperville",
]
MONTHS = [
    "Jan.", "Feb.", "March", "April", "May", "June", "July", "Aug.", "Sept.", "Oct.", "Nov.", "Dec.",
]
HEADERS = [["MARRIED"], ["MARRIAGE", "LICENSES"], ["Marriage", "Licenses"], ["WEDDINGS"]]
TRAILERS = [["Continued", "on", "Page", "7"], ["(Adv.)"], ["More", "licenses", "tomorrow"]]


@dataclass
class _Piece:
    """A token under construction with its gold label"""

    text: str
    label: str
    line_break: bool = False


@dataclass
class _Builder:
    pieces: List[_Piece] = field(default_factory=list)
    # (type, first token, last token)
    entity_tokens: List[Tuple[EntityType, int, int]] = field(default_factory=list)

    def add(self, words: Sequence[str], label: str, entity: Optional[EntityType] = None, line_break: bool = False):
        first = len(self.pieces)
        for i, word in enumerate(words):
            self.pieces.append(_Piece(word, label, line_break and i == 0))
        if entity is not None and words:
            self.entity_tokens.append((entity, first, len(self.pieces) - 1))
        return first


def _person(rng: np.random.Generator, first_names: Sequence[str], style: SynthStyle) -> List[str]:
    words = [str(rng.choice(first_names))]
    if rng.random() < style.middle_initial_prob:
        words += [chr(ord("A") + int(rng.integers(26))), "."]
    words.append(str(rng.choice(SURNAMES)))
    return words


def _town(rng: np.random.Generator) -> List[str]:
    return str(rng.choice(TOWNS)).split()


def _date(rng: np.random.Generator) -> List[str]:
    return [str(rng.choice(MONTHS)), str(int(rng.integers(1, 29)))]


def _age(rng: np.random.Generator) -> List[str]:
    return [str(int(rng.integers(18, 46)))]


def _segment(builder: _Builder, rng: np.random.Generator, style: SynthStyle, line_break: bool, final: str):
    """Append one announcement; the first token is labelled B, the rest I"""
    inside = f"I-{SEGMENT_CLASS}"
    start = len(builder.pieces)
    groom = _person(rng, GROOM_NAMES, style)
    bride = _person(rng, BRIDE_NAMES, style)
    groom_town = _town(rng)
    bride_town = _town(rng)
    template = int(rng.integers(5))

    builder.add(groom, inside, EntityType.GROOM, line_break=line_break)
    if template == 0:
        if rng.random() < style.age_prob:
            builder.add([","] + _age(rng), inside)
        builder.add([","], inside)
        builder.add(groom_town, inside, EntityType.GROOM_RESIDENCE)
        builder.add([",", "and"], inside)
        builder.add(bride, inside, EntityType.BRIDE)
        if rng.random() < style.age_prob:
            builder.add([","] + _age(rng), inside)
        builder.add([","], inside)
        builder.add(bride_town, inside, EntityType.BRIDE_RESIDENCE)
    elif template == 1:
        builder.add(["of"], inside)
        builder.add(groom_town, inside, EntityType.GROOM_RESIDENCE)
        builder.add(["and"], inside)
        builder.add(bride, inside, EntityType.BRIDE)
        builder.add(["of"], inside)
        builder.add(bride_town, inside, EntityType.BRIDE_RESIDENCE)
    elif template == 2:
        builder.add([","], inside)
        builder.add(groom_town, inside, EntityType.GROOM_RESIDENCE)
        builder.add([";"], inside)
        builder.add(bride, inside, EntityType.BRIDE)
        builder.add([","], inside)
        builder.add(bride_town, inside, EntityType.BRIDE_RESIDENCE)
    elif template == 3:
        builder.add(["and"], inside)
        builder.add(bride, inside, EntityType.BRIDE)
        builder.add([",", "both", "of"], inside)
        first = len(builder.pieces)
        builder.add(groom_town, inside)
        last = len(builder.pieces) - 1
        builder.entity_tokens.append((EntityType.GROOM_RESIDENCE, first, last))
        builder.entity_tokens.append((EntityType.BRIDE_RESIDENCE, first, last))
    else:
        builder.add(["of"], inside)
        builder.add(groom_town, inside, EntityType.GROOM_RESIDENCE)
        builder.add(["and"], inside)
        builder.add(bride, inside, EntityType.BRIDE)
        builder.add(["of"], inside)
        builder.add(bride_town, inside, EntityType.BRIDE_RESIDENCE)
        builder.add([",", "married"], inside)
        builder.add(_date(rng), inside, EntityType.WEDDING_DATE)
    builder.add([final], inside)

    builder.pieces[start].label = f"B-{SEGMENT_CLASS}"
    if rng.random() < style.lowercase_start_prob:
        builder.pieces[start].text = builder.pieces[start].text.lower()


def _layout(pieces: Sequence[_Piece], style: SynthStyle) -> List[RawToken]:
    """Place tokens left to right, wrapping at line_width; forced breaks start a new line"""
    tokens: List[RawToken] = []
    x, y = style.left_margin, style.line_height
    for piece in pieces:
        width = len(piece.text) * style.char_width
        at_line_start = x == style.left_margin
        if not at_line_start and (piece.line_break or x + width > style.line_width):
            x, y = style.left_margin, y + style.line_height
        tokens.append(RawToken(piece.text, x, y))
        x += width + style.char_width
    return tokens


def generate_document(doc_id: str, rng: np.random.Generator, style: SynthStyle) -> Document:
    """One synthetic announcement list with BIO labels and entities"""
    builder = _Builder()
    if rng.random() < style.header_prob:
        builder.add(HEADERS[int(rng.integers(len(HEADERS)))], "O", line_break=True)

    count = style.min_segments + int(rng.negative_binomial(style.segment_shape, style.segment_p))
    count = min(count, style.max_segments)
    for index in range(count):
        subheading_prob = style.subheading_prob if index == 0 else style.subheading_prob / count
        if rng.random() < subheading_prob:
            builder.add(_date(rng), "O", EntityType.WEDDING_DATE, line_break=True)
            builder.add([":"], "O")
        line_break = bool(builder.pieces and builder.pieces[-1].label == "O") or (
            rng.random() < style.segment_newline_prob
        )
        last = index == count - 1
        final = "," if not last and rng.random() < style.comma_for_period_prob else "."
        _segment(builder, rng, style, line_break, final)

    if rng.random() < style.trailer_prob:
        builder.add(TRAILERS[int(rng.integers(len(TRAILERS)))], "O", line_break=True)

    tokens = _layout(builder.pieces, style)
    assign_offsets(tokens)
    entities = [
        Entity(entity_type, tokens[first].char_start, tokens[last].char_end)
        for entity_type, first, last in builder.entity_tokens
    ]
    doc = Document(doc_id, tokens, [p.label for p in builder.pieces], entities)
    doc.validate()
    return doc


def synth_generate(
    n_docs: int,
    seed: int,
    style: Optional[SynthStyle] = None,
    noise: Optional[NoiseConfig] = None,
) -> List[Document]:
    """
    Generate a labelled synthetic corpus

    Each document draws from its own stream derived from (seed, doc_id), so documents
    do not depend on how many others are generated.

    Args:
        n_docs: Number of documents, at least 1
        seed: Corpus seed
        style: Generator knobs
        noise: Optional OCR noise applied after generation

    Returns:
        Documents with gold labels and entities
    """
    if n_docs < 1:
        raise UsageError(f"n_docs must be at least 1, got {n_docs}")
    style = style or SynthStyle()
    docs = []
    for i in range(n_docs):
        doc_id = f"synth-{seed}-{i:05d}"
        doc = generate_document(doc_id, derived_rng(seed, doc_id), style)
        if noise is not None and not noise.is_identity:
            doc = inject_ocr_noise(doc, noise)
        docs.append(doc)
    logger.info(f"Generated {n_docs} synthetic documents (seed {seed})")
    return docs


def _substitute(text: str, rng: np.random.Generator, confusions: Sequence[Tuple[str, str]]) -> str:
    """Apply one OCR confusion; the result always differs from the input"""
    candidates = [(source, target) for source, target in confusions if source in text and source != target]
    if candidates:
        source, target = candidates[int(rng.integers(len(candidates)))]
        positions = [i for i in range(len(text)) if text.startswith(source, i)]
        position = positions[int(rng.integers(len(positions)))]
        return text[:position] + target + text[position + len(source):]
    position = int(rng.integers(len(text)))
    pool = [ch for ch in FALLBACK_CHARS if ch != text[position]]
    return text[:position] + pool[int(rng.integers(len(pool)))] + text[position + 1:]


def _swap_punctuation(text: str) -> str:
    return "".join(PUNCTUATION_SWAPS.get(ch, ch) for ch in text)


def _anchor(doc: Document, offset: int, closing: bool) -> Tuple[int, int]:
    """(token index, offset inside that token) of a character position"""
    for index, token in enumerate(doc.tokens):
        if closing and token.char_start < offset <= token.char_end:
            return index, offset - token.char_start
        if not closing and token.char_start <= offset < token.char_end:
            return index, offset - token.char_start
    # offsets on a separating space snap to the next token
    for index, token in enumerate(doc.tokens):
        if token.char_start >= offset:
            return index, 0
    last = len(doc.tokens) - 1
    return last, len(doc.tokens[last].text)


def _shift(offset: int, old_text: str, new_text: str) -> int:
    """Carry an offset inside a token over to its noisy text; token edges stay edges"""
    if offset >= len(old_text):
        return len(new_text)
    return min(offset, len(new_text))


def inject_ocr_noise(doc: Document, config: NoiseConfig) -> Document:
    """
    Corrupt token texts with OCR-style errors

    Token count, labels and entity types are preserved; entity spans follow their
    tokens to the new character offsets.

    Args:
        doc: Source document (left unchanged)
        config: Noise rates, confusion table and seed

    Returns:
        New Document with noisy texts and re-derived offsets
    """
    rng = derived_rng(config.seed, doc.doc_id)
    anchors = [(e.type, _anchor(doc, e.start, False), _anchor(doc, e.end, True)) for e in doc.entities]

    tokens: List[RawToken] = []
    for token in doc.tokens:
        draws = rng.random(3)
        text = token.text
        if text and draws[0] < config.substitution_rate:
            text = _substitute(text, rng, config.confusions)
        if draws[1] < config.case_flip_rate:
            text = text.swapcase()
        if draws[2] < config.punctuation_swap_rate:
            text = _swap_punctuation(text)
        tokens.append(RawToken(text, token.x, token.y))

    noisy = replace(doc, tokens=tokens, labels=list(doc.labels) if doc.labels is not None else None, entities=[])
    for entity_type, (first, start_offset), (last, end_offset) in anchors:
        start = tokens[first].char_start + _shift(start_offset, doc.tokens[first].text, tokens[first].text)
        end = tokens[last].char_start + _shift(end_offset, doc.tokens[last].text, tokens[last].text)
        if end <= start:
            end = start + 1
        noisy.entities.append(Entity(entity_type, start, end))
    noisy.validate()
    return noisy


def add_noise(docs: Sequence[Document], config: NoiseConfig) -> List[Document]:
    if config.is_identity:
        return list(docs)
    return [inject_ocr_noise(doc, config) for doc in docs]
