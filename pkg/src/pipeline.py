"""Pipeline commands: prepare, train, retrieve and evaluate."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from src.backends import create_embedder, create_encoder, create_segmenter
from src.baselines import (
    bm25_doc_order,
    bm25_edu_order,
    gold_query,
    load_stopwords,
    rake_query,
)
from src.config import PipelineConfig, save_effective_config
from src.constants import (
    ASSEMBLED_FILE_TEMPLATE,
    CHECKPOINT_FILE_NAME,
    LABELS_FILE_TEMPLATE,
    PLANS_FILE_TEMPLATE,
    PRECISION_THRESHOLDS,
    REPORT_FILE_NAME,
    SEGMENTED_FILE_TEMPLATE,
    SPLITS,
    SUMMARIES_FILE_TEMPLATE,
    TRAINING_LOG_FILE_NAME,
    WORKER_THREAD_PREFIX,
)
from src.corpus import (
    DocumentSet,
    SegmentedSet,
    load_corpus,
    read_segmented_cache,
    segment_set,
    write_segmented_cache,
)
from src.encoder import TokenEncoderBackend
from src.errors import ConfigurationError, CorpusFormatError, InputError, LabelError
from src.logger import attach_training_log, detach_training_log, get_logger, log_event
from src.metrics import MetricsReport, aggregate_reports, descending_order, set_metrics
from src.oracle import OracleLabels, build_labels, read_labels, write_labels
from src.retriever import (
    RetrieverModel,
    build_model,
    infer_scores,
    load_checkpoint,
    model_fingerprint,
    save_checkpoint,
)
from src.summarizer import create_summarizer, write_summaries
from src.trainer import em_train, last_checkpoint_path
from src.truncation import TruncationPlan, ablation_plan, assemble_input, derive_seed

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")

Prepared = List[Tuple[SegmentedSet, OracleLabels]]

METHOD_MODEL = "model"
METHOD_BM25_RAKE = "bm25+rake"
METHOD_BM25_GOLD = "bm25+gold"


def map_ordered(fn: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    """Apply ``fn`` across a worker pool; results keep input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix=WORKER_THREAD_PREFIX) as pool:
        return list(pool.map(fn, items))


def few_shot_subsample(sets: Sequence[T], fraction: float, seed: int) -> List[T]:
    """Seeded subsample of ``fraction`` of the sets (at least one), original order kept."""
    count = max(1, int(math.floor(fraction * len(sets))))
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(sets), size=min(count, len(sets)), replace=False).tolist())
    return [sets[i] for i in chosen]


def _segmented_path(config: PipelineConfig, split: str) -> Path:
    return Path(config.out_dir) / SEGMENTED_FILE_TEMPLATE.format(split=split)


def _labels_path(config: PipelineConfig, split: str) -> Path:
    return Path(config.out_dir) / LABELS_FILE_TEMPLATE.format(split=split)


def _read_split(config: PipelineConfig, split: str, path: Path, tokenizer) -> List[DocumentSet]:
    path = Path(path)
    if not path.is_file():
        raise CorpusFormatError(f"corpus file for split {split!r} not found: {path}")
    try:
        sets = list(load_corpus(path, tokenizer=tokenizer))
    except OSError as e:
        raise CorpusFormatError(f"cannot read corpus {path}: {e}") from e
    if not sets:
        raise CorpusFormatError(f"corpus {path} holds no document sets")
    ids = [s.set_id for s in sets]
    if len(set(ids)) != len(ids):
        raise CorpusFormatError(f"corpus {path} repeats set ids")
    if split == "train" and config.few_shot is not None:
        sets = few_shot_subsample(sets, config.few_shot, config.seed)
        logger.info(f"Few-shot: keeping {len(sets)} training sets")
    return sorted(sets, key=lambda s: s.set_id)


def cmd_prepare(config: PipelineConfig) -> Dict[str, int]:
    """Segment every corpus split and write segmented caches and oracle labels.

    All splits are read, segmented and labelled before anything is written.

    Returns:
        Number of sets per prepared split
    """
    log_event("prepare_start", {"out_dir": str(config.out_dir)})
    splits = config.corpus.available()
    if not splits:
        raise ConfigurationError("no corpus paths configured")

    backends = config.backends
    segmenter = create_segmenter(backends.segmenter, backends.segmenter_endpoint)
    embedder = create_embedder(backends.embedder, backends.embedder_model, backends.embedder_dim)
    encoder = create_encoder(backends.encoder, backends.encoder_model, backends.encoder_dim)
    tokenizer = encoder.tokenizer
    training = config.training

    prepared: Dict[str, Tuple[List[SegmentedSet], List[OracleLabels]]] = {}
    try:
        for split, path in splits.items():
            sets = _read_split(config, split, path, tokenizer)
            segmented = map_ordered(
                lambda dset: segment_set(dset, segmenter, config.chunk_size), sets, config.workers
            )
            labels = map_ordered(
                lambda seg: build_labels(
                    seg, embedder, training.k_q, training.k_f, training.aggregation
                ),
                segmented,
                config.workers,
            )
            prepared[split] = (segmented, labels)
            logger.info(f"Prepared {len(segmented)} sets for split {split}")
    finally:
        segmenter.close()

    save_effective_config(config)
    for split, (segmented, labels) in prepared.items():
        write_segmented_cache(
            segmented, _segmented_path(config, split), tokenizer.tokenizer_id, config.chunk_size
        )
        write_labels(labels, _labels_path(config, split))
        log_event("artifact_written", {"split": split, "sets": len(segmented)})

    return {split: len(segmented) for split, (segmented, _) in prepared.items()}


def load_prepared(config: PipelineConfig, split: str, tokenizer) -> Prepared:
    """Segmented sets of a prepared split paired with their labels."""
    seg_path = _segmented_path(config, split)
    label_path = _labels_path(config, split)
    if not seg_path.is_file() or not label_path.is_file():
        raise InputError(f"split {split!r} is not prepared in {config.out_dir}; run prepare first")
    segmented = read_segmented_cache(seg_path, tokenizer)
    labels = {item.set_id: item for item in read_labels(label_path)}
    pairs = []
    for seg in segmented:
        if seg.set_id not in labels:
            raise LabelError(f"no labels for set {seg.set_id!r} in {label_path}")
        pairs.append((seg, labels[seg.set_id]))
    return pairs


def _create_encoder(config: PipelineConfig) -> TokenEncoderBackend:
    backends = config.backends
    return create_encoder(backends.encoder, backends.encoder_model, backends.encoder_dim)


def expected_fingerprint(config: PipelineConfig, encoder: TokenEncoderBackend) -> Dict[str, object]:
    return model_fingerprint(RetrieverModel(encoder.dimension), config.chunk_size, encoder.backend_id)


def cmd_train(config: PipelineConfig) -> Path:
    """Run EM training on the prepared train split and write the checkpoint.

    The checkpoint is overwritten whenever validation NDCG@3 improves; with
    ``resume`` training continues from the latest saved epoch.

    Returns:
        Checkpoint path
    """
    encoder = _create_encoder(config)
    train = load_prepared(config, "train", encoder.tokenizer)
    validation = None
    if _segmented_path(config, "validation").is_file():
        validation = load_prepared(config, "validation", encoder.tokenizer)

    out_dir = Path(config.out_dir)
    checkpoint_path = out_dir / CHECKPOINT_FILE_NAME
    log_path = out_dir / TRAINING_LOG_FILE_NAME
    fingerprint = expected_fingerprint(config, encoder)

    start_epoch = 0
    optimizer_state = None
    best_score = None
    resume_from = last_checkpoint_path(checkpoint_path)
    resumed = config.resume and resume_from.is_file()
    if resumed:
        model, payload = load_checkpoint(resume_from, fingerprint)
        start_epoch = int(payload["epoch"])
        optimizer_state = payload["optimizer"]
        best_score = payload["best_score"]
        logger.info(f"Resuming from epoch {start_epoch}")
    else:
        model = build_model(encoder.dimension, config.training.seed, residual=config.training.residual)
        if log_path.exists():
            log_path.unlink()

    save_effective_config(config)
    attach_training_log(log_path)
    try:
        log_event("train_start", {"sets": len(train), "start_epoch": start_epoch})
        result = em_train(
            train,
            model,
            config.training,
            encoder,
            config.chunk_size,
            validation=validation,
            checkpoint_path=checkpoint_path,
            fingerprint=fingerprint,
            start_epoch=start_epoch,
            optimizer_state=optimizer_state,
            best_score=best_score,
        )
        if not result.history and not resumed:
            save_checkpoint(checkpoint_path, model, fingerprint, epoch=start_epoch)
        log_event(
            "train_end", {"best_epoch": result.best_epoch, "best_ndcg_at_3": result.best_score}
        )
    finally:
        detach_training_log()
    return checkpoint_path


def _load_model(config: PipelineConfig, encoder: TokenEncoderBackend, checkpoint: Optional[Path]):
    path = Path(checkpoint) if checkpoint else Path(config.out_dir) / CHECKPOINT_FILE_NAME
    model, _ = load_checkpoint(path, expected_fingerprint(config, encoder))
    model.eval()
    return model


def _write_jsonl(path: Path, records: Sequence[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def _plans_for_set(
    config: PipelineConfig, segmented: SegmentedSet, relevance, salience, tokenizer
) -> Dict[str, TruncationPlan]:
    seed = derive_seed(config.seed, segmented.set_id)
    return {
        variant: ablation_plan(
            segmented,
            relevance,
            salience,
            config.budget,
            variant=variant,
            seed=seed,
            separator=config.separator,
            tokenizer=tokenizer,
            drop_mode=config.drop_mode,
        )
        for variant in config.variants
    }


def cmd_retrieve(
    config: PipelineConfig, checkpoint: Optional[Path] = None, split: str = "test"
) -> Dict[str, Path]:
    """Score a prepared split and write truncation plans and assembled inputs per variant.

    Returns:
        Assembled-input file per variant
    """
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}")
    encoder = _create_encoder(config)
    tokenizer = encoder.tokenizer
    seg_path = _segmented_path(config, split)
    if not seg_path.is_file():
        raise InputError(f"split {split!r} is not prepared in {config.out_dir}; run prepare first")
    segmented = read_segmented_cache(seg_path, tokenizer)
    model = _load_model(config, encoder, checkpoint)

    def retrieve(seg: SegmentedSet) -> Dict[str, TruncationPlan]:
        result = infer_scores(model, seg, encoder, config.chunk_size, config.training.k)
        return _plans_for_set(config, seg, result.doc_relevance, result.edu_salience, tokenizer)

    segmented = sorted(segmented, key=lambda s: s.set_id)
    plans = map_ordered(retrieve, segmented, config.workers)

    outputs = {}
    out_dir = Path(config.out_dir)
    for variant in config.variants:
        plan_records = []
        assembled_records = []
        for seg, set_plans in zip(segmented, plans):
            plan = set_plans[variant]
            plan_records.append(plan.to_export_record())
            assembled_records.append(
                {"set_id": seg.set_id, "input_text": assemble_input(plan, seg).text}
            )
        _write_jsonl(out_dir / PLANS_FILE_TEMPLATE.format(variant=variant), plan_records)
        assembled_path = out_dir / ASSEMBLED_FILE_TEMPLATE.format(variant=variant)
        _write_jsonl(assembled_path, assembled_records)
        outputs[variant] = assembled_path
        log_event("artifact_written", {"variant": variant, "sets": len(plan_records)})

        summarizer = config.summarizer
        if summarizer.enabled:
            service = create_summarizer(
                summarizer.kind,
                summarizer.endpoint,
                summarizer.model,
                summarizer.api_key,
                separator=config.separator,
            )
            write_summaries(
                service,
                assembled_records,
                out_dir / SUMMARIES_FILE_TEMPLATE.format(variant=variant),
            )

    return outputs


def _ablation_proxy(plan: TruncationPlan, labels: OracleLabels) -> Dict[str, float]:
    """Share of oracle query EDUs kept and of oracle filter EDUs dropped by a plan."""
    kept = plan.kept
    query = labels.query_set
    filtered = labels.filter_set
    return {
        "query_retention": sum(kept[d][e] for d, e in query) / len(query) if query else 1.0,
        "filter_drop": sum(not kept[d][e] for d, e in filtered) / len(filtered) if filtered else 0.0,
        "used_tokens": float(plan.used_tokens),
    }


def cmd_evaluate(
    config: PipelineConfig, checkpoint: Optional[Path] = None, split: str = "test"
) -> Path:
    """Compare the model with BM25 baselines and the truncation variants on a labelled split.

    Returns:
        Report path
    """
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}")
    encoder = _create_encoder(config)
    tokenizer = encoder.tokenizer
    data = sorted(load_prepared(config, split, tokenizer), key=lambda pair: pair[0].set_id)
    model = _load_model(config, encoder, checkpoint)
    stopwords = load_stopwords()

    def evaluate(pair: Tuple[SegmentedSet, OracleLabels]) -> dict:
        seg, labels = pair
        result = infer_scores(model, seg, encoder, config.chunk_size, config.training.k)
        predictions = {
            METHOD_MODEL: (
                [result.edu_ids[i] for i in descending_order(result.edu_salience)],
                descending_order(result.doc_relevance),
            )
        }
        rake = rake_query([doc.raw_text for doc in seg.base.documents], stopwords)
        predictions[METHOD_BM25_RAKE] = (bm25_edu_order(seg, rake), bm25_doc_order(seg, rake))
        gold = gold_query(labels, seg)
        predictions[METHOD_BM25_GOLD] = (bm25_edu_order(seg, gold), bm25_doc_order(seg, gold))

        metrics = {
            method: set_metrics(
                edus, docs, labels, precision_ks=PRECISION_THRESHOLDS, gain=config.ndcg_gain
            )
            for method, (edus, docs) in predictions.items()
        }
        plans = _plans_for_set(config, seg, result.doc_relevance, result.edu_salience, tokenizer)
        ablations = {variant: _ablation_proxy(plan, labels) for variant, plan in plans.items()}
        return {"metrics": metrics, "ablations": ablations}

    if not data:
        raise InputError(f"split {split!r} holds no sets to evaluate")
    per_set = map_ordered(evaluate, data, config.workers)

    methods: Dict[str, MetricsReport] = {
        method: aggregate_reports([item["metrics"][method] for item in per_set])
        for method in (METHOD_MODEL, METHOD_BM25_RAKE, METHOD_BM25_GOLD)
    }
    ablations = {}
    for variant in config.variants:
        rows = [item["ablations"][variant] for item in per_set]
        ablations[variant] = {
            name: math.fsum(row[name] for row in rows) / len(rows) for name in rows[0]
        }

    report = {
        "split": split,
        "num_sets": len(per_set),
        "methods": {name: r.model_dump(mode="json") for name, r in methods.items()},
        "ablations": ablations,
    }
    path = Path(config.out_dir) / REPORT_FILE_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    log_event("artifact_written", {"report": str(path)})
    logger.info(
        f"Evaluated {len(per_set)} sets: model NDCG@3="
        f"{methods[METHOD_MODEL].ndcg_at.get(3, 0.0):.3f}, "
        f"bm25+rake NDCG@3={methods[METHOD_BM25_RAKE].ndcg_at.get(3, 0.0):.3f}"
    )
    return path
