"""Backend adapters for segmentation, semantic embedding and token encoding."""

import hashlib
import re
from typing import Dict, List, Optional, Sequence

import httpx
import numpy as np
import torch

from src.constants import (
    DEFAULT_ENCODER_MODEL,
    DEFAULT_SENTENCE_MODEL,
    EMBEDDER_HASH,
    EMBEDDER_SENTENCE_TRANSFORMER,
    ENCODER_HASH,
    ENCODER_TRANSFORMER,
    HASH_EMBEDDER_DIM,
    HASH_ENCODER_DIM,
    HTTP_TIMEOUT,
    SEGMENTER_FALLBACK,
    SEGMENTER_RST,
)
from src.corpus import (
    Document,
    FallbackSegmenter,
    RegexTokenizer,
    SegmenterBackend,
    Tokenizer,
    TokenSpan,
    snap_char_spans,
)
from src.encoder import DTYPE, TokenEncoderBackend
from src.errors import BackendUnavailableError, SegmentationError
from src.logger import get_logger
from src.oracle import SemanticEmbedder

# Configure logging
logger = get_logger(__name__)

_WORD = re.compile(r"\w+")


def feature_bucket(feature: str, dim: int) -> int:
    """Stable hash bucket of a feature string (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashingEmbedder(SemanticEmbedder):
    """Feature-hashed bag of lowercased word unigrams, L2-normalised."""

    deterministic = True

    def __init__(self, dimension: int = HASH_EMBEDDER_DIM):
        self.dimension = dimension
        self.embedder_id = f"hash-unigram-{dimension}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        vectors = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            for word in _WORD.findall(text.lower()):
                vectors[row, feature_bucket(word, self.dimension)] += 1.0
            norm = np.linalg.norm(vectors[row])
            if norm > 0:
                vectors[row] /= norm
        return vectors


class SentenceTransformerEmbedder(SemanticEmbedder):
    """Pretrained semantic-search sentence encoder (optional dependency)."""

    deterministic = True

    def __init__(self, model_name: str = DEFAULT_SENTENCE_MODEL, device: str = "cpu"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as e:
            raise BackendUnavailableError(
                "embedder", "install the 'models' extra for sentence-transformers"
            ) from e
        self._model = SentenceTransformer(model_name, device=device)
        self.dimension = int(self._model.get_sentence_embedding_dimension())
        self.embedder_id = model_name

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        with torch.no_grad():
            vectors = self._model.encode(list(texts), convert_to_numpy=True, batch_size=64)
        return np.asarray(vectors, dtype=np.float64)


class HashingTokenEncoder(TokenEncoderBackend):
    """Frozen token encoder: each lowercased token is a one-hot hash bucket."""

    def __init__(self, dimension: int = HASH_ENCODER_DIM, tokenizer: Optional[Tokenizer] = None):
        self.dimension = dimension
        self._tokenizer = tokenizer or RegexTokenizer()
        self.backend_id = f"hash-token-{dimension}"

    @property
    def tokenizer(self) -> Tokenizer:
        return self._tokenizer

    def encode(self, tokens: Sequence[str]) -> torch.Tensor:
        rows = torch.zeros(len(tokens), self.dimension, dtype=DTYPE)
        for i, token in enumerate(tokens):
            rows[i, feature_bucket(token.lower(), self.dimension)] = 1.0
        return rows


class OneHotTokenEncoder(TokenEncoderBackend):
    """Pass-through encoder over a fixed vocabulary (unknown tokens map to zero rows)."""

    def __init__(self, vocabulary: Sequence[str], tokenizer: Optional[Tokenizer] = None):
        self.vocabulary: Dict[str, int] = {token: i for i, token in enumerate(vocabulary)}
        self.dimension = len(self.vocabulary)
        self._tokenizer = tokenizer or RegexTokenizer()
        self.backend_id = f"one-hot-{self.dimension}"

    @property
    def tokenizer(self) -> Tokenizer:
        return self._tokenizer

    def encode(self, tokens: Sequence[str]) -> torch.Tensor:
        rows = torch.zeros(len(tokens), self.dimension, dtype=DTYPE)
        for i, token in enumerate(tokens):
            column = self.vocabulary.get(token)
            if column is not None:
                rows[i, column] = 1.0
        return rows


class _PretrainedTokenizer(Tokenizer):
    """Adapter exposing a Hugging Face fast tokenizer through the Tokenizer contract."""

    def __init__(self, hf_tokenizer, tokenizer_id: str):
        self._hf = hf_tokenizer
        self.tokenizer_id = tokenizer_id

    def tokenize_with_offsets(self, text: str):
        encoded = self._hf(text, add_special_tokens=False, return_offsets_mapping=True)
        tokens = self._hf.convert_ids_to_tokens(encoded["input_ids"])
        return [(tok, s, e) for tok, (s, e) in zip(tokens, encoded["offset_mapping"])]


class TransformerTokenEncoder(TokenEncoderBackend):
    """Long-context pretrained encoder (optional dependency).

    Chunks are encoded independently; the model's special tokens are added
    around each chunk and stripped from the output rows.
    """

    def __init__(self, model_name: str = DEFAULT_ENCODER_MODEL, device: str = "cpu"):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:
            raise BackendUnavailableError(
                "encoder", "install the 'models' extra for transformers"
            ) from e
        hf_tokenizer = AutoTokenizer.from_pretrained(model_name, use_fast=True)
        self._tokenizer = _PretrainedTokenizer(hf_tokenizer, f"hf:{model_name}")
        self._hf_tokenizer = hf_tokenizer
        self.model = AutoModel.from_pretrained(model_name).to(device)
        self.model.eval()
        self.device = device
        self.dimension = int(self.model.config.hidden_size)
        self.backend_id = model_name

    @property
    def tokenizer(self) -> Tokenizer:
        return self._tokenizer

    def encode(self, tokens: Sequence[str]) -> torch.Tensor:
        ids = self._hf_tokenizer.convert_tokens_to_ids(list(tokens))
        ids = self._hf_tokenizer.build_inputs_with_special_tokens(ids)
        input_ids = torch.tensor([ids], device=self.device)
        outputs = self.model(input_ids=input_ids, attention_mask=torch.ones_like(input_ids))
        hidden = outputs.last_hidden_state[0]
        # build_inputs_with_special_tokens wraps the chunk with one token on each side
        return hidden[1 : 1 + len(tokens)].to(DTYPE)

    def trainable_parameters(self):
        return list(self.model.parameters())


class RstParserSegmenter(SegmenterBackend):
    """Client for an external RST segmentation service.

    The service receives ``{"text": ...}`` and answers ``{"edus": [[start, end], ...]}``
    with character offsets; boundaries are snapped to the nearest token.
    """

    segmenter_id = SEGMENTER_RST

    def __init__(self, endpoint: str, transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint.rstrip("/")
        self.client = httpx.Client(timeout=HTTP_TIMEOUT, transport=transport)

    def segment(self, doc: Document) -> List[TokenSpan]:
        try:
            response = self.client.post(f"{self.endpoint}/segment", json={"text": doc.raw_text})
            response.raise_for_status()
            char_spans = response.json()["edus"]
        except (httpx.HTTPError, KeyError, ValueError) as e:
            logger.error(f"RST segmentation request failed for {doc.id}: {e}")
            raise SegmentationError(doc.id, str(e)) from e
        return snap_char_spans(doc, [tuple(span) for span in char_spans])

    def close(self):
        self.client.close()


def create_segmenter(segmenter_id: str, endpoint: Optional[str] = None) -> SegmenterBackend:
    """Factory function to create segmenter backends."""
    if segmenter_id == SEGMENTER_FALLBACK:
        return FallbackSegmenter()
    elif segmenter_id == SEGMENTER_RST:
        if not endpoint:
            raise BackendUnavailableError("segmenter", "the rst segmenter needs an endpoint")
        return RstParserSegmenter(endpoint)
    else:
        raise BackendUnavailableError("segmenter", f"unknown segmenter {segmenter_id!r}")


def create_embedder(
    embedder_id: str, model_name: Optional[str] = None, dimension: int = HASH_EMBEDDER_DIM
) -> SemanticEmbedder:
    """Factory function to create semantic embedders."""
    if embedder_id == EMBEDDER_HASH:
        return HashingEmbedder(dimension)
    elif embedder_id == EMBEDDER_SENTENCE_TRANSFORMER:
        try:
            return SentenceTransformerEmbedder(model_name or DEFAULT_SENTENCE_MODEL)
        except BackendUnavailableError:
            raise
        except Exception as e:
            raise BackendUnavailableError("embedder", str(e)) from e
    else:
        raise BackendUnavailableError("embedder", f"unknown embedder {embedder_id!r}")


def create_encoder(
    encoder_id: str, model_name: Optional[str] = None, dimension: int = HASH_ENCODER_DIM
) -> TokenEncoderBackend:
    """Factory function to create token encoder backends."""
    if encoder_id == ENCODER_HASH:
        return HashingTokenEncoder(dimension)
    elif encoder_id == ENCODER_TRANSFORMER:
        try:
            return TransformerTokenEncoder(model_name or DEFAULT_ENCODER_MODEL)
        except BackendUnavailableError:
            raise
        except Exception as e:
            raise BackendUnavailableError("encoder", str(e)) from e
    else:
        raise BackendUnavailableError("encoder", f"unknown encoder {encoder_id!r}")
