import re
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import pytest
import torch

from src.backends import HashingEmbedder, HashingTokenEncoder
from src.corpus import Document, DocumentSet, FallbackSegmenter, RegexTokenizer, segment_set
from src.encoder import DTYPE, SetLayout
from src.oracle import OracleLabels, SemanticEmbedder, build_labels
from src.synthetic import make_planted_benchmark

SMALL_K_Q = 3
SMALL_K_F = 6

TOY_TEXTS = [
    "The cat sat on the mat, and it purred loudly. Dogs barked outside the house.",
    "A dog ran in the park, chasing a ball. The sun was warm today.",
    "Markets fell sharply on Monday, traders said. Prices of oil rose again.",
]


class VocabEmbedder(SemanticEmbedder):
    """Bag of words over an explicit vocabulary; words outside it are ignored."""

    def __init__(self, vocabulary: Sequence[str]):
        self.index = {word: i for i, word in enumerate(vocabulary)}
        self.dimension = len(self.index)
        self.embedder_id = f"vocab-{self.dimension}"

    def embed(self, texts):
        vectors = np.zeros((len(texts), self.dimension))
        for row, text in enumerate(texts):
            for word in re.findall(r"\w+", text.lower()):
                if word in self.index:
                    vectors[row, self.index[word]] += 1.0
        return vectors


def build_set(texts: List[str], summary: Optional[str] = None, set_id: str = "toy") -> DocumentSet:
    tokenizer = RegexTokenizer()
    documents = tuple(Document.from_text(f"{set_id}/{i}", t, tokenizer) for i, t in enumerate(texts))
    return DocumentSet(set_id=set_id, documents=documents, reference_summary=summary)


def build_segmented(texts, summary=None, set_id="toy", chunk_size=1024):
    return segment_set(build_set(texts, summary, set_id), FallbackSegmenter(), chunk_size)


@pytest.fixture
def tokenizer():
    return RegexTokenizer()


@pytest.fixture
def make_set():
    return build_set


@pytest.fixture
def make_segmented():
    return build_segmented


@pytest.fixture
def toy_segmented():
    return build_segmented(TOY_TEXTS, summary="The cat purred while the dog chased a ball.")


@pytest.fixture
def vocab_embedder():
    return VocabEmbedder


@pytest.fixture
def hash_embedder():
    return HashingEmbedder()


@pytest.fixture
def hash_encoder():
    return HashingTokenEncoder(dimension=16)


@pytest.fixture(scope="session")
def small_planted():
    """Ten small planted sets: 3 documents of 12 EDUs each."""
    return make_planted_benchmark(10, docs_per_set=3, edus_per_doc=12, seed=7)


def label_sets(sets, k_q, k_f, chunk_size=1024):
    """Segment sets with the fallback segmenter and label them with the hash embedder."""
    embedder = HashingEmbedder()
    pairs = []
    for dset in sets:
        segmented = segment_set(dset, FallbackSegmenter(), chunk_size)
        pairs.append((segmented, build_labels(segmented, embedder, k_q, k_f)))
    return pairs


@pytest.fixture(scope="session")
def planted_pairs(small_planted):
    """Small planted sets with labels: the 3 core EDUs are the query set, the 6 pure EDUs the filter set."""
    return label_sets(small_planted, SMALL_K_Q, SMALL_K_F)


@pytest.fixture
def make_pairs():
    return label_sets


class RandomInstance(NamedTuple):
    tokens: torch.Tensor
    layout: SetLayout
    labels: OracleLabels


def _index_groups(groups):
    width = max(len(g) for g in groups)
    index = torch.zeros(len(groups), width, dtype=torch.long)
    mask = torch.zeros(len(groups), width, dtype=torch.bool)
    for row, group in enumerate(groups):
        index[row, : len(group)] = torch.tensor(group, dtype=torch.long)
        mask[row, : len(group)] = True
    return index, mask


def random_instance(seed, d=4, max_docs=4, max_edus=12, max_span=3, min_docs=2):
    """Random stacked token rows, pooling layout and oracle labels of one set."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(min_docs, max_docs + 1))
    span_groups, doc_groups, edu_ids, offsets = [], [], [], []
    cursor = 0
    for doc in range(n):
        offsets.append(cursor)
        first_edu = len(edu_ids)
        for edu in range(int(rng.integers(1, max_edus // n + 1))):
            length = int(rng.integers(1, max_span + 1))
            span_groups.append(list(range(cursor, cursor + length)))
            edu_ids.append((doc, edu))
            cursor += length
        doc_groups.append(list(range(first_edu, len(edu_ids))))

    span_index, span_mask = _index_groups(span_groups)
    doc_edu_index, doc_edu_mask = _index_groups(doc_groups)
    layout = SetLayout(
        edu_ids=edu_ids,
        doc_offsets=offsets,
        span_index=span_index,
        span_mask=span_mask,
        doc_edu_index=doc_edu_index,
        doc_edu_mask=doc_edu_mask,
    )
    total = len(edu_ids)
    k_q = max(1, total // 4)
    labels = OracleLabels(
        set_id=f"random-{seed}",
        edu_salience=[(doc, edu, float(s)) for (doc, edu), s in zip(edu_ids, rng.uniform(-1, 1, total))],
        doc_ranking=rng.permutation(n).tolist(),
        k_q=k_q,
        k_f=min(max(1, total // 4), total - k_q),
    )
    tokens = torch.from_numpy(rng.normal(size=(cursor, d))).to(DTYPE)
    return RandomInstance(tokens, layout, labels)


@pytest.fixture
def make_random_instance():
    return random_instance
