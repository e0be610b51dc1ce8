"""Ranking-quality metrics: Precision@K, NDCG@K and MRR of the top-1/top-2 documents."""

import math
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence

from pydantic import BaseModel, Field

from src.constants import GAIN_EXPONENTIAL, GAIN_LINEAR, NDCG_THRESHOLDS, PRECISION_THRESHOLDS
from src.errors import MetricError
from src.logger import get_logger
from src.oracle import OracleLabels

logger = get_logger(__name__)


class MetricsReport(BaseModel):
    """Corpus-level metrics of one method."""

    precision_at: Dict[int, float] = Field(default_factory=dict)
    filter_precision_at: Dict[int, float] = Field(default_factory=dict)
    ndcg_at: Dict[int, float] = Field(default_factory=dict)
    mrr_1st: float = 0.0
    mrr_2nd: Optional[float] = None
    num_sets: int = 0


def descending_order(scores: Sequence[float]) -> List[int]:
    """Indices by descending score, ties by ascending index."""
    values = [float(s) for s in scores]
    return sorted(range(len(values)), key=lambda i: (-values[i], i))


def precision_at_k(predicted_top: Sequence[Hashable], oracle_top: Iterable[Hashable], K: int) -> float:
    """Fraction of the first ``K`` predictions found in the oracle set."""
    if K <= 0:
        raise MetricError(f"K must be positive, got {K}")
    oracle = set(oracle_top)
    if len(predicted_top) < K:
        raise MetricError(f"need at least {K} predictions, got {len(predicted_top)}")
    if len(oracle) != K:
        raise MetricError(f"oracle set must hold exactly {K} items, got {len(oracle)}")
    return len(set(predicted_top[:K]) & oracle) / K


def dcg(gains: Sequence[float]) -> float:
    return math.fsum(g / math.log2(p + 2) for p, g in enumerate(gains))


def ndcg_from_gains(predicted_gains: Sequence[float], ideal_gains: Sequence[float], K: int) -> float:
    """NDCG@K from per-position gains of the prediction and of the ideal order."""
    ideal = dcg(sorted(ideal_gains, reverse=True)[:K])
    if ideal == 0.0:
        return 1.0
    return dcg(list(predicted_gains)[:K]) / ideal


def _gain(rank: int, n: int, gain: str) -> float:
    linear = float(n - rank)
    if gain == GAIN_LINEAR:
        return linear
    if gain == GAIN_EXPONENTIAL:
        return 2.0**linear - 1.0
    raise MetricError(f"unknown gain function {gain!r}")


def ndcg_at_k(
    predicted: Sequence[int], oracle_ranking: Sequence[int], K: int, gain: str = GAIN_LINEAR
) -> float:
    """NDCG@K with gains derived from oracle rank (``n - rank``)."""
    if K < 1:
        raise MetricError(f"K must be >= 1, got {K}")
    n = len(oracle_ranking)
    K = min(K, n)
    rank_of = {doc: rank for rank, doc in enumerate(oracle_ranking)}
    predicted_gains = [_gain(rank_of[doc], n, gain) for doc in predicted[:K]]
    ideal_gains = [_gain(rank, n, gain) for rank in range(n)]
    return ndcg_from_gains(predicted_gains, ideal_gains, K)


def _reciprocal_rank(predicted: Sequence[int], target: int) -> float:
    return 1.0 / (list(predicted).index(target) + 1)


def mrr_first(predicted: Sequence[int], oracle_ranking: Sequence[int]) -> float:
    """Reciprocal predicted position of the oracle rank-1 document."""
    return _reciprocal_rank(predicted, oracle_ranking[0])


def mrr_second(predicted: Sequence[int], oracle_ranking: Sequence[int]) -> Optional[float]:
    """Reciprocal predicted position of the oracle rank-2 document (None when n = 1)."""
    if len(oracle_ranking) < 2:
        logger.warning("mrr_second needs at least two documents; skipping set")
        return None
    return _reciprocal_rank(predicted, oracle_ranking[1])


def set_metrics(
    predicted_edus: Sequence[Hashable],
    predicted_docs: Sequence[int],
    labels: OracleLabels,
    precision_ks: Sequence[int] = PRECISION_THRESHOLDS,
    ndcg_ks: Sequence[int] = NDCG_THRESHOLDS,
    gain: str = GAIN_LINEAR,
) -> Dict[str, object]:
    """All metrics of one set; ``predicted_edus`` is the full EDU order, most salient first.

    Thresholds larger than the set's EDU count are evaluated at the EDU count.
    """
    oracle_edus = labels.ranked_edus()
    total = len(oracle_edus)
    precision = {}
    filter_precision = {}
    for K in precision_ks:
        k_eff = min(K, total)
        precision[K] = precision_at_k(list(predicted_edus), oracle_edus[:k_eff], k_eff)
        filter_precision[K] = precision_at_k(
            list(reversed(predicted_edus)), oracle_edus[total - k_eff :], k_eff
        )
    return {
        "precision_at": precision,
        "filter_precision_at": filter_precision,
        "ndcg_at": {K: ndcg_at_k(predicted_docs, labels.doc_ranking, K, gain) for K in ndcg_ks},
        "mrr_1st": mrr_first(predicted_docs, labels.doc_ranking),
        "mrr_2nd": mrr_second(predicted_docs, labels.doc_ranking),
    }


def _mean(values: List[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def aggregate_reports(per_set: Sequence[Mapping[str, object]]) -> MetricsReport:
    """Average per-set metrics; sets without an MRR_2nd value are skipped for it."""
    if not per_set:
        return MetricsReport()

    def collect(key: str) -> Dict[int, float]:
        thresholds = per_set[0][key].keys()
        return {K: _mean([m[key][K] for m in per_set]) for K in thresholds}

    second = [m["mrr_2nd"] for m in per_set if m["mrr_2nd"] is not None]
    return MetricsReport(
        precision_at=collect("precision_at"),
        filter_precision_at=collect("filter_precision_at"),
        ndcg_at=collect("ndcg_at"),
        mrr_1st=_mean([m["mrr_1st"] for m in per_set]),
        mrr_2nd=_mean(second) if second else None,
        num_sets=len(per_set),
    )
