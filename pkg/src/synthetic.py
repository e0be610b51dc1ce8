"""Planted-signal benchmark with known salient EDUs and a strict document ranking.

Every set picks topic words from a shared topic vocabulary; the reference
summary lists them. EDUs follow the pattern ``w1 w2 and w3 of w4 w5 ,`` and
belong to one of four tiers by how many topic words they carry:

- core: five distinct topic words (the salient EDUs)
- support: two topic words
- rest: one topic word
- pure: none (the least salient EDUs)

Documents of a set receive distinct numbers of core EDUs, plus extra support
EDUs per core EDU, so the oracle document ranking has no ties. All words are
chosen so that neither hash backend maps two of them to the same bucket. Sets
built by one call share their vocabularies; split one benchmark into train and
test sets rather than generating them separately.
"""

import json
from pathlib import Path
from typing import Iterable, List, Sequence, Set

import numpy as np

from src.backends import feature_bucket
from src.constants import HASH_EMBEDDER_DIM, HASH_ENCODER_DIM
from src.corpus import Document, DocumentSet, RegexTokenizer
from src.errors import ConfigurationError
from src.logger import get_logger

logger = get_logger(__name__)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_FUNCTION_WORDS = ("and", "of")
_PUNCTUATION = (",", ".")
WORDS_PER_EDU = 5


class _Vocabulary:
    """Pseudo-words whose hash buckets are pairwise distinct."""

    def __init__(self, rng: np.random.Generator, dims: Sequence[int]):
        self.rng = rng
        self.dims = list(dims)
        self.used: List[Set[int]] = [set() for _ in self.dims]
        self.words: Set[str] = set()
        for word in _FUNCTION_WORDS + _PUNCTUATION:
            self._register(word)

    def _fits(self, word: str) -> bool:
        return word not in self.words and all(
            feature_bucket(word, dim) not in used for dim, used in zip(self.dims, self.used)
        )

    def _register(self, word: str):
        self.words.add(word)
        for dim, used in zip(self.dims, self.used):
            used.add(feature_bucket(word, dim))

    def draw(self, count: int, max_attempts: int = 10000) -> List[str]:
        drawn = []
        for _ in range(count):
            for _ in range(max_attempts):
                word = "".join(
                    self.rng.choice(list(_CONSONANTS)) + self.rng.choice(list(_VOWELS))
                    for _ in range(3)
                )
                if self._fits(word):
                    self._register(word)
                    drawn.append(word)
                    break
            else:
                raise ConfigurationError("vocabulary too large for collision-free hash buckets")
        return drawn


def _edu_text(words: Sequence[str], final: bool) -> str:
    w1, w2, w3, w4, w5 = words
    return f"{w1} {w2} and {w3} of {w4} {w5} {'.' if final else ','}"


def _edu_words(
    rng: np.random.Generator, topic: Sequence[str], distractors: Sequence[str], num_topic: int
) -> List[str]:
    chosen_topic = rng.choice(len(topic), size=num_topic, replace=False)
    chosen_other = rng.choice(len(distractors), size=WORDS_PER_EDU - num_topic, replace=False)
    words = [topic[i] for i in chosen_topic] + [distractors[i] for i in chosen_other]
    return [words[i] for i in rng.permutation(WORDS_PER_EDU)]


def make_planted_benchmark(
    num_sets: int,
    docs_per_set: int = 5,
    edus_per_doc: int = 30,
    seed: int = 0,
    topic_vocab: int = 16,
    distractor_vocab: int = 48,
    topic_words_per_set: int = 8,
    support_per_doc: int = 2,
    support_per_core: int = 2,
    pure_per_doc: int = 2,
    prefix: str = "planted",
) -> List[DocumentSet]:
    """Build ``num_sets`` planted document sets, deterministic in ``seed``.

    Args:
        num_sets: Number of document sets
        docs_per_set: Documents per set; core EDU counts per document are a
            permutation of ``0 .. docs_per_set - 1``
        edus_per_doc: EDUs per document
        seed: Seed of every random choice
        topic_vocab: Size of the shared topic vocabulary
        distractor_vocab: Size of the shared distractor vocabulary
        topic_words_per_set: Topic words per set, which also form its summary
        support_per_doc: Two-topic-word EDUs of a document without core EDUs
        support_per_core: Additional support EDUs per core EDU
        pure_per_doc: Topic-free EDUs per document
        prefix: Set id prefix

    Returns:
        DocumentSets with reference summaries
    """
    most_core = docs_per_set - 1
    if edus_per_doc < most_core * (1 + support_per_core) + support_per_doc + pure_per_doc:
        raise ConfigurationError(
            f"{edus_per_doc} EDUs per document cannot hold the planted tiers"
        )
    if not WORDS_PER_EDU <= topic_words_per_set <= topic_vocab:
        raise ConfigurationError("topic words per set must lie between 5 and the topic vocabulary")
    if distractor_vocab < WORDS_PER_EDU:
        raise ConfigurationError("distractor vocabulary needs at least 5 words")

    rng = np.random.default_rng(seed)
    vocabulary = _Vocabulary(rng, (HASH_EMBEDDER_DIM, HASH_ENCODER_DIM))
    topic_words = vocabulary.draw(topic_vocab)
    distractor_words = vocabulary.draw(distractor_vocab)
    tokenizer = RegexTokenizer()

    sets = []
    for s in range(num_sets):
        set_id = f"{prefix}-{s:04d}"
        picked = sorted(rng.choice(topic_vocab, size=topic_words_per_set, replace=False).tolist())
        topic = [topic_words[i] for i in picked]
        core_counts = rng.permutation(docs_per_set).tolist()

        documents = []
        for d, core in enumerate(core_counts):
            support = support_per_doc + support_per_core * core
            tiers = (
                [WORDS_PER_EDU] * core
                + [2] * support
                + [0] * pure_per_doc
                + [1] * (edus_per_doc - core - support - pure_per_doc)
            )
            tiers = [tiers[i] for i in rng.permutation(len(tiers))]
            edus = [
                _edu_text(_edu_words(rng, topic, distractor_words, t), final=j == len(tiers) - 1)
                for j, t in enumerate(tiers)
            ]
            documents.append(Document.from_text(f"{set_id}/{d}", " ".join(edus), tokenizer))

        sets.append(
            DocumentSet(
                set_id=set_id, documents=tuple(documents), reference_summary=" ".join(topic) + " ."
            )
        )

    logger.info(f"Built {num_sets} planted sets ({docs_per_set} docs x {edus_per_doc} EDUs)")
    return sets


def write_corpus_jsonl(sets: Iterable[DocumentSet], path: Path) -> Path:
    """Write document sets in the corpus JSON Lines format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for dset in sets:
            record = {
                "id": dset.set_id,
                "docs": [doc.raw_text for doc in dset.documents],
                "summary": dset.reference_summary,
            }
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    return path
