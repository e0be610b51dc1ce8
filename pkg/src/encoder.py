"""Token, EDU and document encoding.

Documents are encoded chunk by chunk and the chunk outputs concatenated, so
EDU spans are defined over one token matrix per document. EDUs are pooled with
span attention and documents with softmax-gated pooling over transformed EDU
embeddings.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from src.constants import DEFAULT_CHUNK_SIZE
from src.corpus import Document, EduSpan, SegmentedSet, Tokenizer, chunk_document
from src.errors import ContractViolation
from src.logger import get_logger

logger = get_logger(__name__)

DTYPE = torch.float64


class TokenEncoderBackend(ABC):
    """Maps a token sequence to one ``dimension``-wide row per token."""

    backend_id: str = ""
    dimension: int = 0

    @property
    @abstractmethod
    def tokenizer(self) -> Tokenizer:
        """Tokenizer whose token space the rows are aligned with."""

    @abstractmethod
    def encode(self, tokens: Sequence[str]) -> torch.Tensor:
        """Return a ``len(tokens) x dimension`` matrix."""

    def trainable_parameters(self) -> List[nn.Parameter]:
        """Parameters updated when the backend is unfrozen."""
        return []


@dataclass(frozen=True)
class TokenEmbeddings:
    """Token matrix of one document (rows follow the token sequence)."""

    doc_index: int
    matrix: torch.Tensor

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SetLayout:
    """Index tensors for batched pooling over one segmented set.

    Token rows of all documents are stacked; ``span_index``/``span_mask``
    address each EDU's tokens in that stack (padded to the longest EDU) and
    ``doc_index``/``doc_mask`` address each document's EDUs (padded to the
    document with the most EDUs).
    """

    edu_ids: List[Tuple[int, int]]
    doc_offsets: List[int]
    span_index: torch.Tensor
    span_mask: torch.Tensor
    doc_edu_index: torch.Tensor
    doc_edu_mask: torch.Tensor

    @property
    def num_edus(self) -> int:
        return len(self.edu_ids)

    @property
    def num_documents(self) -> int:
        return self.doc_edu_index.shape[0]


@dataclass
class SetEmbeddings:
    """EDU and document embeddings of one set."""

    edu_matrix: torch.Tensor
    doc_matrix: torch.Tensor
    span_weights: torch.Tensor
    gate_weights: torch.Tensor


class SpanPooler(nn.Module):
    """Self-attentive span pooling over token embeddings."""

    def __init__(self, d: int, d_h: Optional[int] = None):
        super().__init__()
        d_h = d_h or d
        self.d = d
        self.d_h = d_h
        self.hidden = nn.Linear(d, d_h)
        self.score = nn.Linear(d_h, 1)
        self.to(DTYPE)

    def attention_logits(self, tokens: torch.Tensor) -> torch.Tensor:
        """Unnormalised attention score per token row."""
        return self.score(torch.relu(self.hidden(tokens))).squeeze(-1)

    def forward(
        self, tokens: torch.Tensor, span_index: torch.Tensor, span_mask: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Pool every span; returns ``(edu_matrix, weights)``."""
        logits = self.attention_logits(tokens)[span_index]
        logits = logits.masked_fill(~span_mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        pooled = (weights.unsqueeze(-1) * tokens[span_index]).sum(dim=1)
        return pooled, weights


class GatedPooler(nn.Module):
    """Softmax-gated pooling of transformed EDU embeddings into a document vector."""

    def __init__(self, d: int, transform: Optional[nn.Module] = None):
        super().__init__()
        self.d = d
        self.transform = transform if transform is not None else nn.Sequential(
            nn.Linear(d, d), nn.ReLU(), nn.Linear(d, d)
        )
        self.gate = nn.Parameter(torch.zeros(d))
        self.to(DTYPE)

    def forward(
        self, edus: torch.Tensor, doc_edu_index: torch.Tensor, doc_edu_mask: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Pool the EDUs of every document; returns ``(doc_matrix, weights)``."""
        transformed = self.transform(edus)[doc_edu_index]
        logits = (transformed @ self.gate).masked_fill(~doc_edu_mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        pooled = (weights.unsqueeze(-1) * transformed).sum(dim=1)
        return pooled, weights


def encode_tokens(
    doc: Document, backend: TokenEncoderBackend, c: int = DEFAULT_CHUNK_SIZE, doc_index: int = 0
) -> TokenEmbeddings:
    """Encode each chunk independently and concatenate the rows in order."""
    parts = []
    for chunk in chunk_document(doc, c, doc_index=doc_index):
        rows = backend.encode(doc.tokens[chunk.start : chunk.end])
        if rows.shape[0] != chunk.size:
            raise ContractViolation(
                f"{backend.backend_id} returned {rows.shape[0]} rows for a chunk of "
                f"{chunk.size} tokens (document {doc.id!r})"
            )
        parts.append(rows.to(DTYPE))
    if not parts:
        return TokenEmbeddings(doc_index, torch.zeros(0, backend.dimension, dtype=DTYPE))
    return TokenEmbeddings(doc_index, torch.cat(parts, dim=0))


def encode_set_tokens(
    segmented: SegmentedSet, backend: TokenEncoderBackend, c: int = DEFAULT_CHUNK_SIZE
) -> torch.Tensor:
    """Stack the token matrices of all documents of a set."""
    matrices = [
        encode_tokens(doc, backend, c, doc_index=i).matrix
        for i, doc in enumerate(segmented.base.documents)
    ]
    return torch.cat(matrices, dim=0)


def _pad(groups: Sequence[Sequence[int]]) -> Tuple[torch.Tensor, torch.Tensor]:
    width = max(len(g) for g in groups)
    index = torch.zeros(len(groups), width, dtype=torch.long)
    mask = torch.zeros(len(groups), width, dtype=torch.bool)
    for row, group in enumerate(groups):
        index[row, : len(group)] = torch.tensor(list(group), dtype=torch.long)
        mask[row, : len(group)] = True
    return index, mask


def build_layout(segmented: SegmentedSet) -> SetLayout:
    """Build the pooling index tensors of a set."""
    offsets = []
    cursor = 0
    for doc in segmented.base.documents:
        offsets.append(cursor)
        cursor += len(doc.tokens)

    span_groups = []
    doc_groups = []
    edu_cursor = 0
    for doc_spans in segmented.spans:
        if not doc_spans:
            raise ContractViolation("every document needs at least one EDU")
        for span in doc_spans:
            base = offsets[span.doc_index]
            span_groups.append(range(base + span.start, base + span.end))
        doc_groups.append(range(edu_cursor, edu_cursor + len(doc_spans)))
        edu_cursor += len(doc_spans)

    span_index, span_mask = _pad(span_groups)
    doc_edu_index, doc_edu_mask = _pad(doc_groups)
    return SetLayout(
        edu_ids=segmented.edu_ids,
        doc_offsets=offsets,
        span_index=span_index,
        span_mask=span_mask,
        doc_edu_index=doc_edu_index,
        doc_edu_mask=doc_edu_mask,
    )


def encode_set(
    tokens: torch.Tensor, layout: SetLayout, span_pooler: SpanPooler, gated_pooler: GatedPooler
) -> SetEmbeddings:
    """Pool EDU and document embeddings of a set from its stacked token rows."""
    edus, span_weights = span_pooler(tokens, layout.span_index, layout.span_mask)
    docs, gate_weights = gated_pooler(edus, layout.doc_edu_index, layout.doc_edu_mask)
    return SetEmbeddings(
        edu_matrix=edus, doc_matrix=docs, span_weights=span_weights, gate_weights=gate_weights
    )


def pool_edu(toks: TokenEmbeddings, span: EduSpan, pooler: SpanPooler) -> torch.Tensor:
    """Span-attentive embedding of a single EDU."""
    if span.end - span.start < 1:
        raise ContractViolation("cannot pool an empty span")
    if span.end > toks.matrix.shape[0]:
        raise ContractViolation(
            f"span [{span.start}, {span.end}) exceeds {toks.matrix.shape[0]} token rows"
        )
    index, mask = _pad([range(span.start, span.end)])
    pooled, _ = pooler(toks.matrix, index, mask)
    return pooled[0]


def pool_document(edus: torch.Tensor, pooler: GatedPooler) -> torch.Tensor:
    """Gated pooling of one document's EDU embeddings (``m x d``)."""
    if edus.ndim != 2 or edus.shape[0] < 1:
        raise ContractViolation("a document needs at least one EDU embedding")
    index, mask = _pad([range(edus.shape[0])])
    pooled, _ = pooler(edus, index, mask)
    return pooled[0]
