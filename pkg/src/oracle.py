"""Oracle labels: EDU salience and document ranking against the reference summary."""

import json
import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.constants import (
    AGGREGATION_MAX,
    AGGREGATION_MEAN,
    AGGREGATION_SUM,
    AGGREGATIONS,
    DEFAULT_FILTER_FRACTION,
    DEFAULT_K_Q,
)
from src.corpus import SegmentedSet
from src.errors import ConfigurationError, DegenerateSimilarityError, LabelError, RecordError
from src.logger import get_logger

logger = get_logger(__name__)

EduId = Tuple[int, int]


class SemanticEmbedder(ABC):
    """Deterministic text embedder used to score EDUs against summaries."""

    embedder_id: str = ""
    dimension: int = 0
    deterministic: bool = True

    @abstractmethod
    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return a ``len(texts) x dimension`` float64 matrix."""


class OracleLabels(BaseModel):
    """Ground-truth EDU salience and document ranking of one set."""

    model_config = ConfigDict(frozen=True)

    set_id: str
    edu_salience: List[Tuple[int, int, float]]
    doc_ranking: List[int]
    k_q: int
    k_f: int
    embedder_id: str = ""

    @model_validator(mode="after")
    def _check(self):
        if sorted(self.doc_ranking) != list(range(len(self.doc_ranking))):
            raise ValueError("doc_ranking must be a permutation of 0..n-1")
        total = len(self.edu_salience)
        if self.k_q < 0 or self.k_f < 0 or self.k_q + self.k_f > total:
            raise ValueError(f"k_q={self.k_q}, k_f={self.k_f} do not fit {total} EDUs")
        return self

    def ranked_edus(self) -> List[EduId]:
        """All EDUs by descending salience, ties by ascending ``(doc, edu)``."""
        ordered = sorted(self.edu_salience, key=lambda t: (-t[2], t[0], t[1]))
        return [(doc, edu) for doc, edu, _ in ordered]

    @property
    def query_set(self) -> List[EduId]:
        return self.ranked_edus()[: self.k_q]

    @property
    def filter_set(self) -> List[EduId]:
        ranked = self.ranked_edus()
        return ranked[len(ranked) - self.k_f :] if self.k_f else []

    @property
    def ranked_pairs(self) -> List[Tuple[int, int]]:
        """Ordered document pairs ``(i, j)`` with ``i`` ranked above ``j``."""
        order = self.doc_ranking
        return [(order[p], order[q]) for p in range(len(order)) for q in range(p + 1, len(order))]

    def salience_of(self, doc_index: int, edu_index: int) -> float:
        for doc, edu, score in self.edu_salience:
            if doc == doc_index and edu == edu_index:
                return score
        raise KeyError((doc_index, edu_index))


def score_edu(edu_vec: np.ndarray, summary_vec: np.ndarray) -> float:
    """Cosine similarity between an EDU embedding and the summary embedding."""
    edu_vec = np.asarray(edu_vec, dtype=np.float64)
    summary_vec = np.asarray(summary_vec, dtype=np.float64)
    if edu_vec.shape != summary_vec.shape:
        raise ValueError(f"dimension mismatch: {edu_vec.shape} vs {summary_vec.shape}")
    norm = np.linalg.norm(edu_vec) * np.linalg.norm(summary_vec)
    if norm == 0.0:
        raise DegenerateSimilarityError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(edu_vec, summary_vec) / norm, -1.0, 1.0))


def _safe_score(edu_vec: np.ndarray, summary_vec: np.ndarray) -> float:
    # EDUs made only of punctuation embed to zero; they carry no salience
    try:
        return score_edu(edu_vec, summary_vec)
    except DegenerateSimilarityError:
        return 0.0


def edu_similarities(segmented: SegmentedSet, embedder: SemanticEmbedder) -> List[List[float]]:
    """Per-document lists of EDU-to-summary cosine similarities."""
    summary = segmented.base.reference_summary
    if summary is None:
        raise LabelError(f"set {segmented.set_id!r} has no reference summary")
    for i, doc_spans in enumerate(segmented.spans):
        if not doc_spans:
            raise LabelError(f"document {i} of set {segmented.set_id!r} has no EDUs")

    texts = [span.text for span in segmented.all_spans]
    vectors = embedder.embed(texts + [summary])
    summary_vec = vectors[-1]
    if not np.any(summary_vec):
        raise LabelError(f"reference summary of set {segmented.set_id!r} embeds to zero")

    sims = []
    cursor = 0
    for doc_spans in segmented.spans:
        sims.append([_safe_score(vectors[cursor + j], summary_vec) for j in range(len(doc_spans))])
        cursor += len(doc_spans)
    return sims


def _aggregate(values: Sequence[float], aggregation: str) -> float:
    if aggregation == AGGREGATION_MEAN:
        return math.fsum(values) / len(values)
    if aggregation == AGGREGATION_MAX:
        return max(values)
    if aggregation == AGGREGATION_SUM:
        return math.fsum(values)
    raise ConfigurationError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")


def rank_from_similarities(sims: Sequence[Sequence[float]], aggregation: str = AGGREGATION_MEAN) -> List[int]:
    """Documents by descending aggregated similarity, ties by ascending index."""
    scores = [_aggregate(doc_sims, aggregation) for doc_sims in sims]
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def rank_documents_oracle(
    segmented: SegmentedSet, embedder: SemanticEmbedder, aggregation: str = AGGREGATION_MEAN
) -> List[int]:
    """Oracle document ranking of a set."""
    return rank_from_similarities(edu_similarities(segmented, embedder), aggregation)


def default_k_f(total_edus: int) -> int:
    return max(1, int(math.floor(DEFAULT_FILTER_FRACTION * total_edus)))


def build_labels(
    segmented: SegmentedSet,
    embedder: SemanticEmbedder,
    k_q: int = DEFAULT_K_Q,
    k_f: Optional[int] = None,
    aggregation: str = AGGREGATION_MEAN,
) -> OracleLabels:
    """Build oracle labels for one set.

    Oversized ``k_q``/``k_f`` are clipped to the EDU count; when the query and
    filter sets would overlap, ``k_f`` shrinks until they are disjoint.
    """
    total = segmented.num_edus
    if k_f is None:
        k_f = default_k_f(total)
    if k_q < 1 or k_f < 1:
        raise ConfigurationError(f"k_q and k_f must be >= 1, got k_q={k_q}, k_f={k_f}")

    if k_q > total:
        logger.warning(f"Set {segmented.set_id}: k_q={k_q} exceeds {total} EDUs, clipping")
        k_q = total
    if k_f > total:
        logger.warning(f"Set {segmented.set_id}: k_f={k_f} exceeds {total} EDUs, clipping")
        k_f = total
    if k_q + k_f > total:
        logger.warning(
            f"Set {segmented.set_id}: query and filter sets overlap "
            f"(k_q={k_q}, k_f={k_f}, {total} EDUs), shrinking k_f to {total - k_q}"
        )
        k_f = total - k_q

    sims = edu_similarities(segmented, embedder)
    salience = [
        (doc, edu, score) for doc, doc_sims in enumerate(sims) for edu, score in enumerate(doc_sims)
    ]
    return OracleLabels(
        set_id=segmented.set_id,
        edu_salience=salience,
        doc_ranking=rank_from_similarities(sims, aggregation),
        k_q=k_q,
        k_f=k_f,
        embedder_id=embedder.embedder_id,
    )


def write_labels(labels: Iterable[OracleLabels], path: Path):
    """Write labels as JSON Lines (one set per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for item in labels:
            record = {
                "set_id": item.set_id,
                "edu_salience": [[doc, edu, score] for doc, edu, score in item.edu_salience],
                "doc_ranking": item.doc_ranking,
                "k_q": item.k_q,
                "k_f": item.k_f,
                "embedder_id": item.embedder_id,
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_labels(path: Path) -> List[OracleLabels]:
    """Load a label file."""
    labels = []
    with open(Path(path), "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                labels.append(OracleLabels(**json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError) as e:
                raise RecordError(line_number, f"invalid label record: {e}") from e
    return labels
