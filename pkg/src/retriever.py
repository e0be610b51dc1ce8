"""Unified EDU filtering and document ranking model.

The forward pass refines EDU embeddings with cross-attention over document
embeddings, scores EDU salience with a two-class head, selects the most salient
EDUs as latent queries and scores documents against those queries.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from src.constants import DEFAULT_CHUNK_SIZE, DEFAULT_QUERY_COUNT
from src.corpus import SegmentedSet
from src.encoder import (
    DTYPE,
    GatedPooler,
    SetLayout,
    SpanPooler,
    TokenEncoderBackend,
    build_layout,
    encode_set,
    encode_set_tokens,
)
from src.errors import CheckpointMismatchError, ConfigurationError, ContractViolation, InferenceError
from src.logger import get_logger
from src.oracle import EduId, OracleLabels

logger = get_logger(__name__)


class CrossAttn(nn.Module):
    """Single-head scaled dot-product cross-attention (EDUs attend to documents).

    The output replaces the incoming EDU rows unless ``residual`` is set, in
    which case it is added to them.
    """

    def __init__(self, d: int, residual: bool = False):
        super().__init__()
        self.d = d
        self.residual = residual
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.output = nn.Linear(d, d)
        self.to(DTYPE)

    def forward(self, edus: torch.Tensor, docs: torch.Tensor) -> torch.Tensor:
        scores = self.query(edus) @ self.key(docs).T / math.sqrt(self.d)
        attended = self.output(torch.softmax(scores, dim=-1) @ self.value(docs))
        return edus + attended if self.residual else attended


class FilterHead(nn.Module):
    """Two-class salience classifier; column 1 is the salient class."""

    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(d, 2)
        self.to(DTYPE)

    def forward(self, edus: torch.Tensor) -> torch.Tensor:
        return self.linear(edus)


@dataclass(frozen=True)
class LatentQuerySet:
    queries: torch.Tensor
    source_edu_ids: List[EduId]
    source_rows: List[int]

    @property
    def k(self) -> int:
        return len(self.source_rows)


@dataclass(frozen=True)
class RelevanceScores:
    per_query: torch.Tensor
    aggregate: torch.Tensor


@dataclass
class ForwardOutput:
    salience: torch.Tensor
    refined: torch.Tensor
    doc_matrix: torch.Tensor
    queries: LatentQuerySet
    relevance: RelevanceScores


@dataclass(frozen=True)
class InferenceResult:
    edu_salience: np.ndarray
    doc_relevance: np.ndarray
    queries: LatentQuerySet
    edu_ids: List[EduId]


class RetrieverModel(nn.Module):
    """Span pooling, gated pooling, cross-attention and salience head."""

    def __init__(self, d: int, d_h: Optional[int] = None, residual: bool = False):
        super().__init__()
        self.d = d
        self.span_pooler = SpanPooler(d, d_h)
        self.gated_pooler = GatedPooler(d)
        self.cross_attn = CrossAttn(d, residual=residual)
        self.filter_head = FilterHead(d)

    @property
    def d_h(self) -> int:
        return self.span_pooler.d_h

    def forward(self, tokens: torch.Tensor, layout: SetLayout, k: int = DEFAULT_QUERY_COUNT) -> ForwardOutput:
        if tokens.shape[1] != self.d:
            raise ContractViolation(f"token rows have width {tokens.shape[1]}, model expects {self.d}")
        embeddings = encode_set(tokens, layout, self.span_pooler, self.gated_pooler)
        refined = refine_edus(embeddings.edu_matrix, embeddings.doc_matrix, self.cross_attn)
        salience = score_salience(refined, self.filter_head)
        queries = select_queries(salience, refined, k, layout.edu_ids)
        relevance = score_relevance(embeddings.doc_matrix, queries)
        return ForwardOutput(
            salience=salience,
            refined=refined,
            doc_matrix=embeddings.doc_matrix,
            queries=queries,
            relevance=relevance,
        )


def init_parameters(model: nn.Module, seed: int, d: Optional[int] = None):
    """Uniform initialisation in ``[-1/sqrt(d), 1/sqrt(d)]`` from a fixed seed."""
    d = d or getattr(model, "d")
    scale = 1.0 / math.sqrt(d)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, param in sorted(model.named_parameters()):
            noise = torch.rand(param.shape, generator=generator, dtype=DTYPE)
            param.copy_((noise * 2.0 - 1.0) * scale)


def build_model(d: int, seed: int, residual: bool = False) -> RetrieverModel:
    model = RetrieverModel(d, residual=residual)
    init_parameters(model, seed)
    return model


def refine_edus(edus: torch.Tensor, docs: torch.Tensor, attn: CrossAttn) -> torch.Tensor:
    """Cross-attention of EDU rows (queries) over document rows (keys/values)."""
    if edus.ndim != 2 or docs.ndim != 2 or edus.shape[1] != attn.d or docs.shape[1] != attn.d:
        raise ContractViolation(
            f"cross-attention expects (*, {attn.d}) inputs, got {tuple(edus.shape)} and {tuple(docs.shape)}"
        )
    return attn(edus, docs)


def score_salience(refined: torch.Tensor, head: FilterHead) -> torch.Tensor:
    """Positive-class probability of the per-EDU two-class softmax."""
    if refined.ndim != 2 or refined.shape[1] != head.linear.in_features:
        raise ContractViolation(f"salience head expects (*, {head.linear.in_features}) rows")
    return torch.softmax(head(refined), dim=-1)[:, 1]


def select_queries(
    salience: torch.Tensor,
    refined: torch.Tensor,
    k: int = DEFAULT_QUERY_COUNT,
    edu_ids: Optional[Sequence[EduId]] = None,
) -> LatentQuerySet:
    """E-step: the ``k`` most salient EDUs become latent queries.

    Selection indices are computed on detached scores; gradients reach the
    query vectors only through the refined rows they are gathered from.
    """
    if k < 1:
        raise ConfigurationError(f"query count must be >= 1, got {k}")
    scores = salience.detach().cpu().tolist()
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    rows = order[: min(k, len(scores))]
    ids = list(edu_ids) if edu_ids is not None else [(0, i) for i in range(len(scores))]
    return LatentQuerySet(
        queries=refined[torch.tensor(rows, dtype=torch.long)],
        source_edu_ids=[ids[r] for r in rows],
        source_rows=rows,
    )


def score_relevance(docs: torch.Tensor, queries: LatentQuerySet) -> RelevanceScores:
    """Per-query softmax over documents of dot products, averaged over queries."""
    if docs.shape[0] < 1 or queries.k < 1:
        raise ContractViolation("relevance needs at least one document and one query")
    per_query = torch.softmax(docs @ queries.queries.T, dim=0)
    return RelevanceScores(per_query=per_query, aggregate=per_query.mean(dim=1))


class PairSampler:
    """Draws (positive, negative) index pairs for the BPR losses.

    ``max_pairs=None`` returns every pair; otherwise, when more pairs exist
    than ``max_pairs``, a uniform sample without replacement is drawn.
    """

    def __init__(self, max_pairs: Optional[int] = None, rng: Optional[np.random.Generator] = None):
        self.max_pairs = max_pairs
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def sample(self, positives: Sequence[int], negatives: Sequence[int]) -> Tuple[List[int], List[int]]:
        total = len(positives) * len(negatives)
        if total == 0:
            return [], []
        if self.max_pairs is None or total <= self.max_pairs:
            flat = range(total)
        else:
            flat = sorted(self.rng.choice(total, size=self.max_pairs, replace=False).tolist())
        pos = [positives[f // len(negatives)] for f in flat]
        neg = [negatives[f % len(negatives)] for f in flat]
        return pos, neg

    def sample_ordered(self, order: Sequence[int]) -> Tuple[List[int], List[int]]:
        """Pairs ``(order[p], order[q])`` with ``p < q``."""
        pairs = [(order[p], order[q]) for p in range(len(order)) for q in range(p + 1, len(order))]
        if self.max_pairs is not None and len(pairs) > self.max_pairs:
            chosen = sorted(self.rng.choice(len(pairs), size=self.max_pairs, replace=False).tolist())
            pairs = [pairs[c] for c in chosen]
        return [i for i, _ in pairs], [j for _, j in pairs]


def bpr(scores: torch.Tensor, pos: Sequence[int], neg: Sequence[int]) -> torch.Tensor:
    """Mean of ``-log sigmoid(s_pos - s_neg)`` over the given pairs."""
    if not pos:
        return scores.new_zeros(())
    diff = scores[torch.tensor(list(pos))] - scores[torch.tensor(list(neg))]
    return F.softplus(-diff).mean()


def filtering_loss(
    salience: torch.Tensor,
    labels: OracleLabels,
    sampler: PairSampler,
    edu_ids: Optional[Sequence[EduId]] = None,
) -> torch.Tensor:
    """BPR loss ranking query EDUs above the rest and the rest above filter EDUs."""
    ids = list(edu_ids) if edu_ids is not None else [(d, e) for d, e, _ in labels.edu_salience]
    row_of = {edu_id: row for row, edu_id in enumerate(ids)}
    query_rows = sorted(row_of[e] for e in labels.query_set)
    filter_rows = sorted(row_of[e] for e in labels.filter_set)
    all_rows = range(len(ids))

    if not query_rows:
        logger.warning(f"Set {labels.set_id}: empty query set, query term contributes 0")
    if not filter_rows:
        logger.warning(f"Set {labels.set_id}: empty filter set, filter term contributes 0")

    query_members = set(query_rows)
    filter_members = set(filter_rows)
    pos, neg = sampler.sample(query_rows, [r for r in all_rows if r not in query_members])
    query_term = bpr(salience, pos, neg)
    pos, neg = sampler.sample([r for r in all_rows if r not in filter_members], filter_rows)
    filter_term = bpr(salience, pos, neg)
    return query_term + filter_term


def ranking_loss(relevance: torch.Tensor, labels: OracleLabels, sampler: PairSampler) -> torch.Tensor:
    """BPR loss over ordered document pairs of the oracle ranking."""
    pos, neg = sampler.sample_ordered(labels.doc_ranking)
    return bpr(relevance, pos, neg)


def total_loss(rank_l: torch.Tensor, filter_l: torch.Tensor, lam: float) -> torch.Tensor:
    """Ranking loss plus ``lam`` times the filtering loss."""
    if lam < 0:
        raise ConfigurationError(f"balance weight must be non-negative, got {lam}")
    return rank_l + lam * filter_l


def infer_scores(
    model: RetrieverModel,
    segmented: SegmentedSet,
    backend: TokenEncoderBackend,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    k: int = DEFAULT_QUERY_COUNT,
) -> InferenceResult:
    """Single deterministic forward pass producing EDU salience and document relevance."""
    for i, doc_spans in enumerate(segmented.spans):
        if not doc_spans:
            raise InferenceError(f"document {i} of set {segmented.set_id!r} has no EDUs")
    layout = build_layout(segmented)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            tokens = encode_set_tokens(segmented, backend, chunk_size)
            output = model(tokens, layout, k)
    finally:
        model.train(was_training)
    return InferenceResult(
        edu_salience=output.salience.numpy().copy(),
        doc_relevance=output.relevance.aggregate.numpy().copy(),
        queries=output.queries,
        edu_ids=layout.edu_ids,
    )


def model_fingerprint(model: RetrieverModel, chunk_size: int, backend_id: str) -> Dict[str, object]:
    return {"d": model.d, "d_h": model.d_h, "c": chunk_size, "backend_id": backend_id}


def save_checkpoint(
    path: Path,
    model: RetrieverModel,
    fingerprint: Dict[str, object],
    optimizer: Optional[torch.optim.Optimizer] = None,
    epoch: int = 0,
    best_score: Optional[float] = None,
):
    """Write model parameters, optimizer state and config fingerprint to one archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "fingerprint": dict(fingerprint),
        "residual": model.cross_attn.residual,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "best_score": best_score,
    }
    torch.save(payload, path)


def load_checkpoint(path: Path, expected: Optional[Dict[str, object]] = None) -> Tuple[RetrieverModel, dict]:
    """Load a checkpoint; raise when its fingerprint differs from ``expected``."""
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as e:
        raise CheckpointMismatchError(f"cannot load checkpoint {path}: {e}") from e
    found = payload["fingerprint"]
    if expected is not None and dict(expected) != dict(found):
        raise CheckpointMismatchError(
            f"checkpoint {path} was trained with {found}, configuration expects {expected}",
            expected=dict(expected),
            found=dict(found),
        )
    model = RetrieverModel(int(found["d"]), int(found["d_h"]), residual=payload.get("residual", False))
    model.load_state_dict(payload["model"])
    return model, payload
