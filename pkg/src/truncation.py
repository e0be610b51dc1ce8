"""Budget-respecting assembly of summarizer inputs from retrieval scores."""

import hashlib
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from src.constants import (
    DEFAULT_SEPARATOR,
    DROP_GLOBAL,
    DROP_PER_DOCUMENT,
    VARIANT_EVEN,
    VARIANT_FULL,
    VARIANT_NO_BOTH,
    VARIANT_NO_FILTER,
    VARIANT_NO_RANK,
)
from src.corpus import RegexTokenizer, SegmentedSet, Tokenizer
from src.errors import ConfigurationError, ContractViolation, EmptyPlanError
from src.logger import get_logger
from src.metrics import descending_order

logger = get_logger(__name__)


class TruncationPlan(BaseModel):
    """Document order plus the number of leading tokens kept from every EDU.

    ``kept_tokens[d][e]`` equals the EDU length when the EDU is kept whole and
    0 when it is dropped; values in between only occur for tail drops and
    degraded plans.
    """

    set_id: str
    variant: str = VARIANT_FULL
    doc_order: List[int]
    kept_tokens: List[List[int]]
    edu_lengths: List[List[int]]
    budget: int
    used_tokens: int
    separator: str = DEFAULT_SEPARATOR
    separator_tokens: List[str] = []
    degraded: bool = False

    @property
    def kept(self) -> List[List[bool]]:
        return [[count > 0 for count in doc] for doc in self.kept_tokens]

    @property
    def dropped_edus(self) -> List[Tuple[int, int]]:
        return [
            (d, e)
            for d, doc in enumerate(self.kept_tokens)
            for e, count in enumerate(doc)
            if count == 0
        ]

    def to_export_record(self) -> Dict[str, object]:
        return {
            "set_id": self.set_id,
            "doc_order": list(self.doc_order),
            "dropped_edus": [list(edu) for edu in self.dropped_edus],
            "used_tokens": self.used_tokens,
            "budget": self.budget,
            "variant": self.variant,
            "degraded": self.degraded,
        }


class AssembledInput(BaseModel):
    set_id: str
    tokens: List[str]
    text: str


def derive_seed(seed: int, set_id: str) -> int:
    """Per-set seed so random permutations differ across sets yet stay reproducible."""
    digest = hashlib.blake2b(f"{seed}:{set_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _edu_lengths(segmented: SegmentedSet) -> List[List[int]]:
    return [[span.length for span in doc_spans] for doc_spans in segmented.spans]


def _used_tokens(kept: Sequence[Sequence[int]], separator_cost: int) -> int:
    non_empty = sum(1 for doc in kept if sum(doc) > 0)
    return sum(sum(doc) for doc in kept) + separator_cost * max(non_empty - 1, 0)


def _check_overhead(n: int, budget: int, separator_cost: int):
    if budget < 1:
        raise EmptyPlanError(f"budget must be positive, got {budget}")
    if n > 1 and separator_cost > 0 and budget <= (n - 1) * separator_cost:
        raise EmptyPlanError(
            f"budget {budget} does not exceed the separator overhead {(n - 1) * separator_cost}"
        )


def _finish(
    segmented: SegmentedSet,
    variant: str,
    doc_order: Sequence[int],
    kept: List[List[int]],
    budget: int,
    separator: str,
    separator_tokens: List[str],
    degraded: bool = False,
) -> TruncationPlan:
    used = _used_tokens(kept, len(separator_tokens))
    if used > budget:
        raise ContractViolation(f"plan for {segmented.set_id!r} uses {used} > {budget} tokens")
    return TruncationPlan(
        set_id=segmented.set_id,
        variant=variant,
        doc_order=[int(d) for d in doc_order],
        kept_tokens=kept,
        edu_lengths=_edu_lengths(segmented),
        budget=budget,
        used_tokens=used,
        separator=separator,
        separator_tokens=list(separator_tokens),
        degraded=degraded,
    )


def _check_scores(segmented: SegmentedSet, doc_relevance, edu_salience) -> Tuple[List[float], List[float]]:
    relevance = [float(x) for x in np.asarray(doc_relevance).ravel()]
    salience = [float(x) for x in np.asarray(edu_salience).ravel()]
    if len(relevance) != segmented.num_documents:
        raise ContractViolation(
            f"{len(relevance)} relevance scores for {segmented.num_documents} documents"
        )
    if len(salience) != segmented.num_edus:
        raise ContractViolation(f"{len(salience)} salience scores for {segmented.num_edus} EDUs")
    return relevance, salience


def filter_plan(
    segmented: SegmentedSet,
    doc_order: Sequence[int],
    edu_salience: Sequence[float],
    budget: int,
    separator: str = DEFAULT_SEPARATOR,
    tokenizer: Optional[Tokenizer] = None,
    drop_mode: str = DROP_GLOBAL,
    variant: str = VARIANT_FULL,
) -> TruncationPlan:
    """Drop the least salient EDUs until the documents in ``doc_order`` fit the budget.

    Global mode drops by ascending salience across the whole set (ties: the
    lower-ranked document first, then the later EDU). Per-document mode
    empties the lowest-ranked document first, least salient EDU first.
    """
    separator_tokens = (tokenizer or RegexTokenizer()).tokenize(separator)
    n = segmented.num_documents
    _check_overhead(n, budget, len(separator_tokens))

    lengths = _edu_lengths(segmented)
    kept = [list(doc) for doc in lengths]
    position = {doc: p for p, doc in enumerate(doc_order)}
    ids = segmented.edu_ids

    if drop_mode == DROP_GLOBAL:
        key: Callable[[int], tuple] = lambda i: (edu_salience[i], -position[ids[i][0]], -ids[i][1])
    elif drop_mode == DROP_PER_DOCUMENT:
        key = lambda i: (-position[ids[i][0]], edu_salience[i], -ids[i][1])
    else:
        raise ConfigurationError(f"unknown drop mode {drop_mode!r}")
    drop_order = sorted(range(len(ids)), key=key)

    used = _used_tokens(kept, len(separator_tokens))
    degraded = False
    for i in drop_order[:-1]:
        if used <= budget:
            break
        d, e = ids[i]
        kept[d][e] = 0
        used = _used_tokens(kept, len(separator_tokens))

    if used > budget:
        # only the most salient EDU is left and it alone exceeds the budget
        d, e = ids[drop_order[-1]]
        kept[d][e] = budget
        degraded = True
        logger.warning(
            f"Set {segmented.set_id}: EDU ({d}, {e}) of {lengths[d][e]} tokens exceeds the "
            f"budget {budget}; keeping a {budget}-token prefix"
        )

    return _finish(segmented, variant, doc_order, kept, budget, separator, separator_tokens, degraded)


def build_plan(
    segmented: SegmentedSet,
    doc_relevance: Sequence[float],
    edu_salience: Sequence[float],
    budget: int,
    separator: str = DEFAULT_SEPARATOR,
    tokenizer: Optional[Tokenizer] = None,
    drop_mode: str = DROP_GLOBAL,
) -> TruncationPlan:
    """Order documents by relevance and filter EDUs by salience to fit ``budget``."""
    relevance, salience = _check_scores(segmented, doc_relevance, edu_salience)
    return filter_plan(
        segmented, descending_order(relevance), salience, budget, separator, tokenizer, drop_mode
    )


def head_plan(
    segmented: SegmentedSet,
    doc_order: Sequence[int],
    budget: int,
    separator: str = DEFAULT_SEPARATOR,
    tokenizer: Optional[Tokenizer] = None,
    variant: str = VARIANT_NO_FILTER,
) -> TruncationPlan:
    """Concatenate documents in ``doc_order`` and drop the tokens past the budget."""
    separator_tokens = (tokenizer or RegexTokenizer()).tokenize(separator)
    cost = len(separator_tokens)
    _check_overhead(segmented.num_documents, budget, cost)

    lengths = _edu_lengths(segmented)
    kept = [[0] * len(doc) for doc in lengths]
    remaining = budget
    emitted = False
    for d in doc_order:
        if emitted:
            if remaining <= cost:
                break
            remaining -= cost
        for e, length in enumerate(lengths[d]):
            take = min(length, remaining)
            kept[d][e] = take
            remaining -= take
        emitted = True
        if remaining == 0:
            break
    return _finish(segmented, variant, doc_order, kept, budget, separator, separator_tokens)


def even_truncation(
    segmented: SegmentedSet,
    budget: int,
    separator: str = DEFAULT_SEPARATOR,
    tokenizer: Optional[Tokenizer] = None,
) -> TruncationPlan:
    """Keep an equal-size token prefix of every document, in original order.

    The quota is ``(budget - separator overhead) // n``; shorter documents are
    kept whole and their unused quota is not redistributed.
    """
    n = segmented.num_documents
    if budget < n:
        raise EmptyPlanError(f"budget {budget} is smaller than the {n} documents")
    separator_tokens = (tokenizer or RegexTokenizer()).tokenize(separator)
    quota = (budget - (n - 1) * len(separator_tokens)) // n
    if quota < 1:
        raise EmptyPlanError(f"budget {budget} leaves no tokens per document after separators")

    kept = []
    for doc_lengths in _edu_lengths(segmented):
        remaining = quota
        row = []
        for length in doc_lengths:
            take = min(length, remaining)
            row.append(take)
            remaining -= take
        kept.append(row)
    return _finish(segmented, VARIANT_EVEN, list(range(n)), kept, budget, separator, separator_tokens)


def ablation_plan(
    segmented: SegmentedSet,
    doc_relevance: Sequence[float],
    edu_salience: Sequence[float],
    budget: int,
    variant: str = VARIANT_FULL,
    seed: int = 0,
    separator: str = DEFAULT_SEPARATOR,
    tokenizer: Optional[Tokenizer] = None,
    drop_mode: str = DROP_GLOBAL,
) -> TruncationPlan:
    """Plan for one variant: with or without ranking, with or without EDU filtering.

    Variants without ranking use a random document permutation drawn from
    ``seed``; variants without filtering drop trailing tokens instead of EDUs.
    """
    if variant == VARIANT_EVEN:
        return even_truncation(segmented, budget, separator, tokenizer)
    relevance, salience = _check_scores(segmented, doc_relevance, edu_salience)

    if variant in (VARIANT_FULL, VARIANT_NO_FILTER):
        doc_order = descending_order(relevance)
    elif variant in (VARIANT_NO_RANK, VARIANT_NO_BOTH):
        doc_order = np.random.default_rng(seed).permutation(segmented.num_documents).tolist()
    else:
        raise ConfigurationError(f"unknown truncation variant {variant!r}")

    if variant in (VARIANT_FULL, VARIANT_NO_RANK):
        return filter_plan(
            segmented, doc_order, salience, budget, separator, tokenizer, drop_mode, variant
        )
    return head_plan(segmented, doc_order, budget, separator, tokenizer, variant)


def assemble_input(
    plan: TruncationPlan, segmented: SegmentedSet, joiner: str = " "
) -> AssembledInput:
    """Concatenate the kept token runs in plan order with separators between documents."""
    if plan.set_id != segmented.set_id or plan.edu_lengths != _edu_lengths(segmented):
        raise ContractViolation(f"plan for {plan.set_id!r} does not match set {segmented.set_id!r}")

    tokens: List[str] = []
    pieces: List[str] = []
    for d in plan.doc_order:
        if sum(plan.kept_tokens[d]) == 0:
            continue
        if pieces:
            tokens.extend(plan.separator_tokens)
            pieces.append(plan.separator)
        doc = segmented.base.documents[d]
        runs = []
        for span, count in zip(segmented.spans[d], plan.kept_tokens[d]):
            if count == 0:
                continue
            tokens.extend(doc.tokens[span.start : span.start + count])
            runs.append(doc.render(span.start, span.start + count))
        pieces.append(joiner.join(runs))

    if len(tokens) != plan.used_tokens:
        raise ContractViolation(
            f"assembled {len(tokens)} tokens for {plan.set_id!r}, plan declares {plan.used_tokens}"
        )
    return AssembledInput(set_id=plan.set_id, tokens=tokens, text=joiner.join(pieces))
