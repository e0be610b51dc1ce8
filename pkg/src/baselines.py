"""Classical comparison retrievers: BM25 scoring with RAKE or gold queries."""

import math
import re
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from rake_nltk import Metric, Rake
from rank_bm25 import BM25Okapi

from src.constants import BM25_B, BM25_K1, RAKE_MAX_PHRASE_WORDS, RAKE_QUERY_PHRASES
from src.corpus import SegmentedSet
from src.errors import ConfigurationError, LabelError
from src.logger import get_logger
from src.oracle import EduId, OracleLabels

logger = get_logger(__name__)

_TOKEN = re.compile(r"\w+|[^\w\s]")
_TERM = re.compile(r"\w+")
# Rake replaces an empty stopword set with the NLTK list, which needs a corpus download
_NO_STOPWORDS = frozenset({""})

ENGLISH_STOPWORDS: FrozenSet[str] = frozenset(
    """
    a about above after again against all am an and any are as at be because been before
    being below between both but by can could did do does doing down during each few for
    from further had has have having he her here hers herself him himself his how i if in
    into is it its itself just me more most my myself no nor not now of off on once only or
    other our ours ourselves out over own same she should so some such than that the their
    theirs them themselves then there these they this those through to too under until up
    very was we were what when where which while who whom why will with would you your
    yours yourself yourselves
    """.split()
)


def load_stopwords(path: Optional[Path] = None) -> FrozenSet[str]:
    """Stopword list from a file (one word per line) or the embedded English list."""
    if path is None:
        return ENGLISH_STOPWORDS
    try:
        with open(Path(path), "r", encoding="utf-8") as f:
            return frozenset(line.strip().lower() for line in f if line.strip())
    except OSError as e:
        raise ConfigurationError(f"cannot read stopword file {path}: {e}") from e


def tokenize_terms(text: str) -> List[str]:
    """Lowercased word terms; no stemming."""
    return _TERM.findall(text.lower())


def _word_tokens(text: str) -> List[str]:
    # anything but a plain word becomes a phrase-breaking "."
    return [token if token.isalnum() else "." for token in _TOKEN.findall(text)]


def rake_keywords(
    texts: Iterable[str],
    stopwords: Optional[Set[str]] = None,
    max_words: int = RAKE_MAX_PHRASE_WORDS,
) -> List[Tuple[str, float]]:
    """Rank keyword phrases by summed word degree/frequency.

    Candidates from all texts feed one co-occurrence graph, so the result does
    not depend on text order. Phrases longer than ``max_words`` are discarded
    before scoring.

    Returns:
        ``(phrase, score)`` pairs by descending score, ties lexicographic
    """
    stopwords = ENGLISH_STOPWORDS if stopwords is None else stopwords
    rake = Rake(
        stopwords=set(stopwords) or set(_NO_STOPWORDS),
        ranking_metric=Metric.DEGREE_TO_FREQUENCY_RATIO,
        max_length=max_words,
        word_tokenizer=_word_tokens,
    )
    rake.extract_keywords_from_sentences(list(texts))

    scores: Dict[str, float] = {}
    for score, phrase in rake.get_ranked_phrases_with_scores():
        scores[phrase] = float(score)
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


def rake_query(
    texts: Iterable[str],
    stopwords: Optional[Set[str]] = None,
    num_phrases: int = RAKE_QUERY_PHRASES,
) -> str:
    """Simulated query: the top RAKE phrases joined with spaces."""
    return " ".join(phrase for phrase, _ in rake_keywords(texts, stopwords)[:num_phrases])


class Bm25Index(BM25Okapi):
    """Okapi BM25 over a fixed list of units (documents or EDUs), with smoothed idf."""

    def __init__(self, units: Sequence[Sequence[str]], k1: float = BM25_K1, b: float = BM25_B):
        super().__init__([list(unit) for unit in units], k1=k1, b=b)

    @classmethod
    def from_texts(cls, texts: Sequence[str], k1: float = BM25_K1, b: float = BM25_B) -> "Bm25Index":
        return cls([tokenize_terms(t) for t in texts], k1=k1, b=b)

    def _initialize(self, corpus):
        if not corpus:
            self.avgdl = 1.0
            return {}
        nd = super()._initialize(corpus)
        # an index of empty units would otherwise divide by zero
        if self.avgdl == 0:
            self.avgdl = 1.0
        return nd

    def _calc_idf(self, nd):
        for term, df in nd.items():
            self.idf[term] = math.log((self.corpus_size - df + 0.5) / (df + 0.5) + 1.0)
        self.average_idf = math.fsum(self.idf.values()) / len(self.idf) if self.idf else 0.0

    @property
    def num_units(self) -> int:
        return self.corpus_size

    @property
    def avg_length(self) -> float:
        return self.avgdl

    def score(self, query_terms: Sequence[str], unit_id: int) -> float:
        return float(self.get_batch_scores(list(query_terms), [unit_id])[0])


def bm25_score(index: Bm25Index, query_terms: Sequence[str], unit_id: int) -> float:
    if not 0 <= unit_id < index.num_units:
        raise IndexError(f"unit {unit_id} is not in the index of {index.num_units} units")
    return index.score(query_terms, unit_id)


def bm25_rank(index: Bm25Index, query_terms: Sequence[str], k: Optional[int] = None) -> List[int]:
    """Top-``k`` unit ids by descending score, ties by ascending id (all units when k is None)."""
    if k is not None and k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    scores = [index.score(query_terms, i) for i in range(index.num_units)]
    order = sorted(range(index.num_units), key=lambda i: (-scores[i], i))
    return order if k is None else order[:k]


def gold_query(labels: Optional[OracleLabels], segmented: SegmentedSet) -> str:
    """Text of the EDU most similar to the reference summary."""
    if labels is None:
        raise LabelError(f"set {segmented.set_id!r} has no oracle labels for a gold query")
    doc_index, edu_index = labels.ranked_edus()[0]
    return segmented.spans[doc_index][edu_index].text


def bm25_edu_order(segmented: SegmentedSet, query: str) -> List[EduId]:
    """All EDUs of the set ranked as BM25 units against ``query``."""
    spans = segmented.all_spans
    index = Bm25Index.from_texts([span.text for span in spans])
    return [(spans[i].doc_index, spans[i].edu_index) for i in bm25_rank(index, tokenize_terms(query))]


def bm25_doc_order(segmented: SegmentedSet, query: str) -> List[int]:
    """Documents of the set ranked as BM25 units against ``query``."""
    index = Bm25Index.from_texts([doc.raw_text for doc in segmented.base.documents])
    return bm25_rank(index, tokenize_terms(query))
