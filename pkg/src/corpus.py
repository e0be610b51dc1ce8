"""Corpus data model, ingestion, EDU segmentation and chunking."""

import json
import math
import re
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.constants import (
    CLAUSE_BREAK_TOKENS,
    CORPUS_FORMAT_JSONL,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_TOKENIZER_ID,
    FALLBACK_MIN_EDU_TOKENS,
    SEGMENTER_FALLBACK,
    SENTENCE_FINAL_TOKENS,
)
from src.errors import (
    CacheInvalidError,
    ConfigurationError,
    CorpusFormatError,
    RecordError,
    SegmentationError,
    ValidationError,
)
from src.logger import get_logger

logger = get_logger(__name__)

TokenSpan = Tuple[int, int]


class Tokenizer(ABC):
    """Splits text into tokens with character offsets."""

    tokenizer_id: str = ""

    @abstractmethod
    def tokenize_with_offsets(self, text: str) -> List[Tuple[str, int, int]]:
        """Return ``(token, char_start, char_end)`` triples in text order."""

    def tokenize(self, text: str) -> List[str]:
        return [token for token, _, _ in self.tokenize_with_offsets(text)]


class RegexTokenizer(Tokenizer):
    """Deterministic word/punctuation tokenizer.

    Angle-bracket markers such as ``<doc-sep>`` stay a single token so a
    document separator is charged once against a budget.
    """

    tokenizer_id = DEFAULT_TOKENIZER_ID
    _pattern = re.compile(r"<[\w\-]+>|\w+|[^\w\s]")

    def tokenize_with_offsets(self, text: str) -> List[Tuple[str, int, int]]:
        return [(m.group(0), m.start(), m.end()) for m in self._pattern.finditer(text)]


class Document(BaseModel):
    """One source document of a set."""

    model_config = ConfigDict(frozen=True)

    id: str
    raw_text: str
    tokens: Tuple[str, ...] = ()
    offsets: Optional[Tuple[Tuple[int, int], ...]] = None

    @model_validator(mode="after")
    def _check_offsets(self):
        if self.offsets is not None and len(self.offsets) != len(self.tokens):
            raise ValueError("offsets must align with tokens")
        return self

    @classmethod
    def from_text(cls, doc_id: str, text: str, tokenizer: Tokenizer) -> "Document":
        """Tokenize ``text`` and keep character offsets for span rendering."""
        triples = tokenizer.tokenize_with_offsets(text)
        return cls(
            id=doc_id,
            raw_text=text,
            tokens=tuple(t for t, _, _ in triples),
            offsets=tuple((s, e) for _, s, e in triples),
        )

    def render(self, start: int, end: int) -> str:
        """Text covered by tokens ``[start, end)``."""
        if end <= start:
            return ""
        if self.offsets is None:
            return " ".join(self.tokens[start:end])
        return self.raw_text[self.offsets[start][0] : self.offsets[end - 1][1]]


class DocumentSet(BaseModel):
    """A set of topically related documents with an optional reference summary."""

    model_config = ConfigDict(frozen=True)

    set_id: str
    documents: Tuple[Document, ...]
    reference_summary: Optional[str] = None

    @field_validator("documents")
    @classmethod
    def _check_documents(cls, documents):
        if len(documents) < 1:
            raise ValueError("a document set needs at least one document")
        ids = [d.id for d in documents]
        if len(set(ids)) != len(ids):
            raise ValueError("document ids must be unique within a set")
        return documents


class EduSpan(BaseModel):
    """An elementary discourse unit as a half-open token range."""

    model_config = ConfigDict(frozen=True)

    doc_index: int = Field(ge=0)
    edu_index: int = Field(ge=0)
    start: int = Field(ge=0)
    end: int
    text: str = ""

    @model_validator(mode="after")
    def _check_length(self):
        if self.end - self.start < 1:
            raise ValueError("an EDU spans at least one token")
        return self

    @property
    def length(self) -> int:
        return self.end - self.start


class Chunk(BaseModel):
    """A fixed-size encoder window over a document's tokens."""

    model_config = ConfigDict(frozen=True)

    doc_index: int
    chunk_index: int
    start: int
    end: int

    @property
    def size(self) -> int:
        return self.end - self.start


def _check_cover(ranges: Sequence[TokenSpan], total: int) -> Optional[str]:
    """Return a problem description unless ``ranges`` tile ``[0, total)``."""
    cursor = 0
    for start, end in ranges:
        if end <= start:
            return f"empty or reversed range [{start}, {end})"
        if start != cursor:
            kind = "overlap" if start < cursor else "gap"
            return f"{kind} at token {min(start, cursor)}"
        cursor = end
    if cursor != total:
        return f"ranges cover {cursor} of {total} tokens"
    return None


class SegmentedSet(BaseModel):
    """A document set with EDU spans and chunks for every document."""

    model_config = ConfigDict(frozen=True)

    base: DocumentSet
    spans: Tuple[Tuple[EduSpan, ...], ...]
    chunks: Tuple[Tuple[Chunk, ...], ...]

    @model_validator(mode="after")
    def _check_coverage(self):
        n = len(self.base.documents)
        if len(self.spans) != n or len(self.chunks) != n:
            raise ValueError("spans and chunks need one list per document")
        for doc, doc_spans, doc_chunks in zip(self.base.documents, self.spans, self.chunks):
            total = len(doc.tokens)
            problem = _check_cover([(s.start, s.end) for s in doc_spans], total)
            if problem and total:
                raise ValueError(f"EDU spans of {doc.id!r}: {problem}")
            problem = _check_cover([(c.start, c.end) for c in doc_chunks], total)
            if problem and total:
                raise ValueError(f"chunks of {doc.id!r}: {problem}")
        return self

    @property
    def set_id(self) -> str:
        return self.base.set_id

    @property
    def num_documents(self) -> int:
        return len(self.base.documents)

    @property
    def edu_ids(self) -> List[Tuple[int, int]]:
        """Global EDU order: ascending ``(doc_index, edu_index)``."""
        return [(s.doc_index, s.edu_index) for doc_spans in self.spans for s in doc_spans]

    @property
    def all_spans(self) -> List[EduSpan]:
        return [s for doc_spans in self.spans for s in doc_spans]

    @property
    def num_edus(self) -> int:
        return sum(len(doc_spans) for doc_spans in self.spans)


class SegmenterBackend(ABC):
    """Pluggable EDU segmenter returning token spans for a document."""

    segmenter_id: str = ""

    @abstractmethod
    def segment(self, doc: Document) -> List[TokenSpan]:
        """Return half-open token ranges covering ``doc.tokens``."""

    def close(self):
        """Release connections held by the segmenter."""


class FallbackSegmenter(SegmenterBackend):
    """Deterministic punctuation-based segmenter."""

    segmenter_id = SEGMENTER_FALLBACK

    def segment(self, doc: Document) -> List[TokenSpan]:
        return [(s.start, s.end) for s in fallback_segment(doc)]


def _make_spans(doc: Document, doc_index: int, ranges: Sequence[TokenSpan]) -> List[EduSpan]:
    return [
        EduSpan(doc_index=doc_index, edu_index=j, start=s, end=e, text=doc.render(s, e))
        for j, (s, e) in enumerate(ranges)
    ]


def fallback_segment(doc: Document, doc_index: int = 0) -> List[EduSpan]:
    """Split at sentence-final punctuation and at commas/semicolons.

    Fragments shorter than three tokens merge into their left neighbour (the
    first fragment merges rightwards), so every EDU keeps a usable length.
    """
    if not doc.tokens:
        raise SegmentationError(doc.id, "document has no tokens")

    breaks = SENTENCE_FINAL_TOKENS | CLAUSE_BREAK_TOKENS
    fragments: List[TokenSpan] = []
    start = 0
    for i, token in enumerate(doc.tokens):
        if token in breaks:
            fragments.append((start, i + 1))
            start = i + 1
    if start < len(doc.tokens):
        fragments.append((start, len(doc.tokens)))

    merged: List[TokenSpan] = []
    for s, e in fragments:
        if merged and e - s < FALLBACK_MIN_EDU_TOKENS:
            merged[-1] = (merged[-1][0], e)
        else:
            merged.append((s, e))
    if len(merged) > 1 and merged[0][1] - merged[0][0] < FALLBACK_MIN_EDU_TOKENS:
        merged[1] = (merged[0][0], merged[1][1])
        merged.pop(0)

    return _make_spans(doc, doc_index, merged)


def segment_edus(doc: Document, segmenter: SegmenterBackend, doc_index: int = 0) -> List[EduSpan]:
    """Segment a document with ``segmenter`` and validate the result."""
    if not doc.tokens:
        raise SegmentationError(doc.id, "document has no tokens")
    try:
        ranges = segmenter.segment(doc)
    except (SegmentationError, ValidationError):
        raise
    except Exception as e:
        raise SegmentationError(doc.id, str(e)) from e

    ranges = [(int(s), int(e)) for s, e in ranges]
    problem = _check_cover(ranges, len(doc.tokens))
    if problem:
        raise ValidationError(doc.id, problem)
    return _make_spans(doc, doc_index, ranges)


def snap_char_spans(doc: Document, char_spans: Sequence[TokenSpan]) -> List[TokenSpan]:
    """Map character spans from an external parser onto token boundaries.

    Each inner boundary snaps to the nearest token start; ties go to the
    earlier token. Boundaries that collapse are dropped.
    """
    if doc.offsets is None:
        raise SegmentationError(doc.id, "document has no character offsets")
    starts = [s for s, _ in doc.offsets]
    total = len(doc.tokens)
    boundaries = {0, total}
    for char_start, _ in list(char_spans)[1:]:
        best = min(range(total), key=lambda i: (abs(starts[i] - char_start), i))
        boundaries.add(best)
    ordered = sorted(boundaries)
    return [(a, b) for a, b in zip(ordered, ordered[1:]) if b > a]


def chunk_document(doc: Document, c: int = DEFAULT_CHUNK_SIZE, doc_index: int = 0) -> List[Chunk]:
    """Split a document's tokens into consecutive chunks of size ``c``."""
    if c < 1:
        raise ConfigurationError(f"chunk size must be positive, got {c}")
    total = len(doc.tokens)
    return [
        Chunk(doc_index=doc_index, chunk_index=j, start=j * c, end=min((j + 1) * c, total))
        for j in range(math.ceil(total / c))
    ]


def segment_set(
    dset: DocumentSet,
    segmenter: SegmenterBackend,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> SegmentedSet:
    """Segment and chunk every document of a set."""
    spans = []
    chunks = []
    for i, doc in enumerate(dset.documents):
        spans.append(tuple(segment_edus(doc, segmenter, doc_index=i)))
        chunks.append(tuple(chunk_document(doc, chunk_size, doc_index=i)))
    return SegmentedSet(base=dset, spans=tuple(spans), chunks=tuple(chunks))


def _build_set(record: dict, line_number: int, default_id: str, tokenizer: Tokenizer) -> DocumentSet:
    docs = record["docs"]
    if not isinstance(docs, list) or not docs:
        raise RecordError(line_number, '"docs" must be a non-empty list of strings')
    if not all(isinstance(d, str) for d in docs):
        raise RecordError(line_number, '"docs" must contain only strings')
    summary = record.get("summary")
    if summary is not None and not isinstance(summary, str):
        raise RecordError(line_number, '"summary" must be a string')
    set_id = str(record.get("id") or default_id)
    documents = tuple(
        Document.from_text(f"{set_id}/{i}", text, tokenizer) for i, text in enumerate(docs)
    )
    return DocumentSet(set_id=set_id, documents=documents, reference_summary=summary)


def load_corpus(
    path: Path,
    format: str = CORPUS_FORMAT_JSONL,
    tokenizer: Optional[Tokenizer] = None,
    skip_bad_records: bool = False,
) -> Iterator[DocumentSet]:
    """Stream document sets from a JSON Lines corpus file.

    Args:
        path: Corpus file
        format: Only ``"jsonl"`` is supported
        tokenizer: Tokenizer aligned with the encoder backend
        skip_bad_records: Log and skip malformed records instead of raising

    Yields:
        DocumentSet records in file order
    """
    if format != CORPUS_FORMAT_JSONL:
        raise CorpusFormatError(f"unsupported corpus format: {format}")
    tokenizer = tokenizer or RegexTokenizer()
    path = Path(path)

    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                error = RecordError(line_number, f"invalid JSON ({e.msg})")
                if skip_bad_records:
                    logger.warning(f"Skipping record: {error}")
                    continue
                raise error from e
            if not isinstance(record, dict) or "docs" not in record:
                raise CorpusFormatError(f'{path}:{line_number}: missing "docs" field')
            try:
                yield _build_set(record, line_number, f"{path.stem}-{line_number:06d}", tokenizer)
            except RecordError as error:
                if skip_bad_records:
                    logger.warning(f"Skipping record: {error}")
                    continue
                raise


def write_segmented_cache(sets: Iterable[SegmentedSet], path: Path, tokenizer_id: str, chunk_size: int):
    """Write segmented sets as JSON Lines with EDU token offsets."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for seg in sets:
            record = {
                "id": seg.set_id,
                "docs": [d.raw_text for d in seg.base.documents],
                "summary": seg.base.reference_summary,
                "edu_spans": [[[s.start, s.end] for s in doc_spans] for doc_spans in seg.spans],
                "tokenizer_id": tokenizer_id,
                "chunk_size": chunk_size,
            }
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_segmented_cache(path: Path, tokenizer: Tokenizer) -> List[SegmentedSet]:
    """Load a segmented cache written with the same tokenizer."""
    sets = []
    with open(Path(path), "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordError(line_number, f"invalid JSON ({e.msg})") from e
            if record.get("tokenizer_id") != tokenizer.tokenizer_id:
                raise CacheInvalidError(
                    f"{path}: cache built with tokenizer {record.get('tokenizer_id')!r}, "
                    f"expected {tokenizer.tokenizer_id!r}"
                )
            dset = _build_set(record, line_number, record["id"], tokenizer)
            chunk_size = int(record["chunk_size"])
            spans = []
            chunks = []
            for i, (doc, ranges) in enumerate(zip(dset.documents, record["edu_spans"])):
                ranges = [tuple(r) for r in ranges]
                problem = _check_cover(ranges, len(doc.tokens))
                if problem:
                    raise ValidationError(doc.id, problem)
                spans.append(tuple(_make_spans(doc, i, ranges)))
                chunks.append(tuple(chunk_document(doc, chunk_size, doc_index=i)))
            sets.append(SegmentedSet(base=dset, spans=tuple(spans), chunks=tuple(chunks)))
    return sets
