"""EM training of the retriever: E-step query selection, M-step gradient updates."""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.config import TrainingConfig
from src.constants import DEFAULT_CHUNK_SIZE, SELECTION_METRIC_K
from src.corpus import SegmentedSet
from src.encoder import SetLayout, TokenEncoderBackend, build_layout, encode_set_tokens
from src.errors import TrainingDivergenceError
from src.logger import get_logger, log_epoch
from src.metrics import aggregate_reports, descending_order, set_metrics
from src.oracle import OracleLabels
from src.retriever import (
    PairSampler,
    RetrieverModel,
    build_model,
    filtering_loss,
    infer_scores,
    model_fingerprint,
    ranking_loss,
    save_checkpoint,
    total_loss,
)

logger = get_logger(__name__)


@dataclass
class TrainingExample:
    segmented: SegmentedSet
    labels: OracleLabels
    layout: SetLayout
    tokens: Optional[torch.Tensor] = None


@dataclass
class EpochMetrics:
    epoch: int
    rank_loss: float
    filter_loss: float
    total: float
    precision_at_k: float
    ndcg_at_3: float
    mrr_1st: float
    wall_seconds: float


@dataclass
class TrainingResult:
    model: RetrieverModel
    history: List[EpochMetrics] = field(default_factory=list)
    best_score: Optional[float] = None
    best_epoch: Optional[int] = None


def last_checkpoint_path(checkpoint_path: Path) -> Path:
    """Location of the most recent (not necessarily best) training state."""
    checkpoint_path = Path(checkpoint_path)
    return checkpoint_path.with_name(checkpoint_path.stem + ".last" + checkpoint_path.suffix)


def prepare_examples(
    data: Sequence[Tuple[SegmentedSet, OracleLabels]],
    backend: TokenEncoderBackend,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    cache_tokens: bool = True,
) -> List[TrainingExample]:
    """Pair every set with its pooling layout (and frozen token rows)."""
    examples = []
    for segmented, labels in data:
        if labels.set_id != segmented.set_id:
            raise ValueError(f"labels {labels.set_id!r} do not belong to set {segmented.set_id!r}")
        tokens = None
        if cache_tokens:
            with torch.no_grad():
                tokens = encode_set_tokens(segmented, backend, chunk_size)
        examples.append(TrainingExample(segmented, labels, build_layout(segmented), tokens))
    return examples


def evaluate_model(
    model: RetrieverModel,
    data: Sequence[Tuple[SegmentedSet, OracleLabels]],
    backend: TokenEncoderBackend,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    k: int = 10,
) -> Dict[str, float]:
    """Query-selection Precision@k, NDCG@3 and MRR_1st of the model on labelled sets."""
    per_set = []
    for segmented, labels in data:
        result = infer_scores(model, segmented, backend, chunk_size, k)
        predicted_edus = [result.edu_ids[i] for i in descending_order(result.edu_salience)]
        predicted_docs = descending_order(result.doc_relevance)
        per_set.append(
            set_metrics(
                predicted_edus,
                predicted_docs,
                labels,
                precision_ks=(k,),
                ndcg_ks=(SELECTION_METRIC_K,),
            )
        )
    report = aggregate_reports(per_set)
    return {
        "precision_at_k": report.precision_at.get(k, 0.0),
        "ndcg_at_3": report.ndcg_at.get(SELECTION_METRIC_K, 0.0),
        "mrr_1st": report.mrr_1st,
    }


def em_train(
    data: Sequence[Tuple[SegmentedSet, OracleLabels]],
    model: RetrieverModel,
    cfg: TrainingConfig,
    backend: TokenEncoderBackend,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    validation: Optional[Sequence[Tuple[SegmentedSet, OracleLabels]]] = None,
    checkpoint_path: Optional[Path] = None,
    fingerprint: Optional[Dict[str, object]] = None,
    start_epoch: int = 0,
    optimizer_state: Optional[dict] = None,
    best_score: Optional[float] = None,
) -> TrainingResult:
    """Alternate E-steps (latent query selection) and M-steps (Adam on the total loss).

    Every epoch draws its shuffling and pair samples from a generator seeded
    with ``(cfg.seed, epoch)``, so resuming at ``start_epoch`` replays the
    same trajectory. When ``checkpoint_path`` is given, the model is saved
    whenever validation NDCG@3 improves and the latest state after every epoch.
    """
    result = TrainingResult(model=model, best_score=best_score)
    if cfg.epochs <= start_epoch:
        logger.info("No training epochs to run")
        return result

    unfreeze = cfg.unfreeze_backend and bool(backend.trainable_parameters())
    examples = prepare_examples(data, backend, chunk_size, cache_tokens=not unfreeze)
    selection = list(validation) if validation else list(data)

    params = list(model.parameters())
    if unfreeze:
        params += backend.trainable_parameters()
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    max_pairs = None if cfg.full_pairs else cfg.pair_samples_per_set
    logger.info(
        f"EM training: {len(examples)} sets, epochs {start_epoch + 1}..{cfg.epochs}, "
        f"k={cfg.k}, lambda={cfg.lam}, lr={cfg.learning_rate}"
    )

    for epoch in range(start_epoch, cfg.epochs):
        started = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        sampler = PairSampler(max_pairs, rng)
        order = rng.permutation(len(examples)).tolist()
        model.train()

        sums = {"rank": 0.0, "filter": 0.0, "total": 0.0}
        batches = 0
        for batch_number, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            optimizer.zero_grad()
            rank_terms = []
            filter_terms = []
            for example in batch:
                tokens = example.tokens
                if tokens is None:
                    tokens = encode_set_tokens(example.segmented, backend, chunk_size)
                output = model(tokens, example.layout, cfg.k)
                rank_terms.append(ranking_loss(output.relevance.aggregate, example.labels, sampler))
                filter_terms.append(
                    filtering_loss(output.salience, example.labels, sampler, example.layout.edu_ids)
                )
            rank_l = torch.stack(rank_terms).mean()
            filter_l = torch.stack(filter_terms).mean()
            loss = total_loss(rank_l, filter_l, cfg.lam)

            if not torch.isfinite(loss):
                raise TrainingDivergenceError(
                    f"epoch {epoch + 1} batch {batch_number}",
                    {
                        "rank_loss": float(rank_l),
                        "filter_loss": float(filter_l),
                        "total": float(loss),
                    },
                )

            loss.backward()
            optimizer.step()
            sums["rank"] += float(rank_l)
            sums["filter"] += float(filter_l)
            sums["total"] += float(loss)
            batches += 1

        scores = evaluate_model(model, selection, backend, chunk_size, cfg.k)
        metrics = EpochMetrics(
            epoch=epoch + 1,
            rank_loss=sums["rank"] / batches,
            filter_loss=sums["filter"] / batches,
            total=sums["total"] / batches,
            precision_at_k=scores["precision_at_k"],
            ndcg_at_3=scores["ndcg_at_3"],
            mrr_1st=scores["mrr_1st"],
            wall_seconds=time.perf_counter() - started,
        )
        result.history.append(metrics)
        log_epoch(**metrics.__dict__)
        logger.info(
            f"Epoch {metrics.epoch}: total={metrics.total:.4f} "
            f"P@{cfg.k}={metrics.precision_at_k:.3f} NDCG@3={metrics.ndcg_at_3:.3f}"
        )

        improved = result.best_score is None or metrics.ndcg_at_3 > result.best_score
        if improved:
            result.best_score = metrics.ndcg_at_3
            result.best_epoch = metrics.epoch
        if checkpoint_path is not None:
            fp = fingerprint or model_fingerprint(model, chunk_size, backend.backend_id)
            if improved:
                save_checkpoint(checkpoint_path, model, fp, optimizer, epoch + 1, result.best_score)
            save_checkpoint(
                last_checkpoint_path(checkpoint_path), model, fp, optimizer, epoch + 1, result.best_score
            )

    return result


def sweep(
    train: Sequence[Tuple[SegmentedSet, OracleLabels]],
    test: Sequence[Tuple[SegmentedSet, OracleLabels]],
    backend: TokenEncoderBackend,
    cfg: TrainingConfig,
    parameter: str,
    values: Sequence[float],
    seeds: Sequence[int] = (0,),
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Dict[float, Dict[str, float]]:
    """Retrain once per (value, seed) and report held-out metrics averaged over seeds.

    ``parameter`` is a TrainingConfig field such as ``"k"`` or ``"lam"``.
    """
    results: Dict[float, Dict[str, float]] = {}
    for value in values:
        runs = []
        for seed in seeds:
            run_cfg = cfg.model_copy(update={parameter: value, "seed": seed})
            model = build_model(backend.dimension, seed, residual=run_cfg.residual)
            em_train(train, model, run_cfg, backend, chunk_size)
            runs.append(evaluate_model(model, test, backend, chunk_size, run_cfg.k))
        results[value] = {
            name: math.fsum(r[name] for r in runs) / len(runs) for name in runs[0]
        }
        logger.info(f"Sweep {parameter}={value}: {results[value]}")
    return results


def sweep_query_count(
    train: Sequence[Tuple[SegmentedSet, OracleLabels]],
    test: Sequence[Tuple[SegmentedSet, OracleLabels]],
    backend: TokenEncoderBackend,
    cfg: TrainingConfig,
    ks: Sequence[int],
    seeds: Sequence[int] = (0,),
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Dict[float, Dict[str, float]]:
    """Held-out metrics (MRR_1st among them) per latent query count."""
    return sweep(train, test, backend, cfg, "k", ks, seeds, chunk_size)


def sweep_lambda(
    train: Sequence[Tuple[SegmentedSet, OracleLabels]],
    test: Sequence[Tuple[SegmentedSet, OracleLabels]],
    backend: TokenEncoderBackend,
    cfg: TrainingConfig,
    lams: Sequence[float],
    seeds: Sequence[int] = (0,),
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Dict[float, Dict[str, float]]:
    """Held-out metrics (NDCG@3 among them) per loss balance weight."""
    return sweep(train, test, backend, cfg, "lam", lams, seeds, chunk_size)
