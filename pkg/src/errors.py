"""Exception hierarchy for the retrieval pipeline.

Every error raised towards the command line carries the process exit code it
maps to, so ``main`` never has to know which module raised it.
"""

from typing import Dict, Optional

from src.constants import EXIT_CHECKPOINT, EXIT_DIVERGENCE, EXIT_FAILURE, EXIT_INPUT


class RetrievalError(Exception):
    """Base class for all pipeline errors."""

    exit_code = EXIT_FAILURE


class InputError(RetrievalError):
    """Bad input data, configuration or unavailable backends."""

    exit_code = EXIT_INPUT


class ConfigurationError(InputError):
    """Invalid configuration value."""


class CorpusFormatError(InputError):
    """The corpus file cannot be interpreted at all."""


class RecordError(InputError):
    """A single corpus record is malformed."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class SegmentationError(InputError):
    """The segmenter backend failed on a document."""

    def __init__(self, doc_id: str, message: str):
        super().__init__(f"segmentation failed for document {doc_id!r}: {message}")
        self.doc_id = doc_id


class ValidationError(InputError):
    """Segmenter output violates the EDU span invariants."""

    def __init__(self, doc_id: str, message: str):
        super().__init__(f"invalid EDU spans for document {doc_id!r}: {message}")
        self.doc_id = doc_id


class CacheInvalidError(InputError):
    """A segmented cache was produced with a different tokenizer."""


class LabelError(InputError):
    """Oracle labels cannot be built or are missing."""


class BackendUnavailableError(InputError):
    """A configured backend cannot be created."""

    def __init__(self, component: str, message: str):
        super().__init__(f"{component} unavailable: {message}")
        self.component = component


class DegenerateSimilarityError(RetrievalError):
    """Cosine similarity is undefined for a zero vector."""


class ContractViolation(RetrievalError):
    """Shape, row-count or plan/set mismatch between components."""


class InferenceError(RetrievalError):
    """A set cannot be scored (for example a document without EDUs)."""


class EmptyPlanError(RetrievalError):
    """The token budget cannot hold anything beyond separators."""


class MetricError(RetrievalError):
    """Invalid metric arguments."""


class TrainingDivergenceError(RetrievalError):
    """The training loss became non-finite."""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, batch_id: str, losses: Dict[str, float]):
        details = ", ".join(f"{name}={value}" for name, value in losses.items())
        super().__init__(f"non-finite loss in batch {batch_id}: {details}")
        self.batch_id = batch_id
        self.losses = losses


class CheckpointMismatchError(RetrievalError):
    """Checkpoint fingerprint does not match the configured backends."""

    exit_code = EXIT_CHECKPOINT

    def __init__(self, message: str, expected: Optional[dict] = None, found: Optional[dict] = None):
        super().__init__(message)
        self.expected = expected
        self.found = found
