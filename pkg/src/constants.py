"""Application constants and default values."""

# Application Information
APP_NAME = "EDU Retriever"
APP_VERSION = "0.1.0"
LOGGER_ROOT = "edu_retriever"

# Corpus Settings
DEFAULT_CHUNK_SIZE = 1024
CORPUS_FORMAT_JSONL = "jsonl"
DEFAULT_TOKENIZER_ID = "regex-v1"
FALLBACK_MIN_EDU_TOKENS = 3
SENTENCE_FINAL_TOKENS = frozenset({".", "!", "?"})
CLAUSE_BREAK_TOKENS = frozenset({",", ";"})

# Backend Identifiers
SEGMENTER_FALLBACK = "fallback"
SEGMENTER_RST = "rst"
EMBEDDER_HASH = "hash"
EMBEDDER_SENTENCE_TRANSFORMER = "sentence-transformer"
ENCODER_HASH = "hash"
ENCODER_TRANSFORMER = "transformer"
DEFAULT_SENTENCE_MODEL = "sentence-transformers/multi-qa-mpnet-base-cos-v1"
DEFAULT_ENCODER_MODEL = "allenai/longformer-base-4096"

# Hash Backends
HASH_EMBEDDER_DIM = 256
HASH_ENCODER_DIM = 128

# Oracle Settings
DEFAULT_K_Q = 10
DEFAULT_FILTER_FRACTION = 0.2
AGGREGATION_MEAN = "mean"
AGGREGATION_MAX = "max"
AGGREGATION_SUM = "sum"
AGGREGATIONS = (AGGREGATION_MEAN, AGGREGATION_MAX, AGGREGATION_SUM)

# Retriever / Training Settings
DEFAULT_QUERY_COUNT = 10
DEFAULT_LAMBDA = 1.0
DEFAULT_LEARNING_RATE = 3e-5
DEFAULT_BATCH_SIZE = 16
DEFAULT_EPOCHS = 10
DEFAULT_PAIR_SAMPLES = 64
DEFAULT_SEED = 0
SELECTION_METRIC_K = 3

# Truncation Settings
DEFAULT_BUDGET = 4096
DEFAULT_SEPARATOR = "<doc-sep>"
VARIANT_FULL = "full"
VARIANT_NO_RANK = "no_rank"
VARIANT_NO_FILTER = "no_filter"
VARIANT_NO_BOTH = "no_both"
VARIANT_EVEN = "even"
ABLATION_VARIANTS = (VARIANT_FULL, VARIANT_NO_RANK, VARIANT_NO_FILTER, VARIANT_NO_BOTH)
ALL_VARIANTS = ABLATION_VARIANTS + (VARIANT_EVEN,)
DROP_GLOBAL = "global"
DROP_PER_DOCUMENT = "per_document"

# Baseline Settings
BM25_K1 = 1.2
BM25_B = 0.75
RAKE_MAX_PHRASE_WORDS = 4
RAKE_QUERY_PHRASES = 5

# Metric Settings
PRECISION_THRESHOLDS = (10, 20, 50, 100)
NDCG_THRESHOLDS = (1, 3, 5)
GAIN_LINEAR = "linear"
GAIN_EXPONENTIAL = "exponential"

# Exit Codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2
EXIT_DIVERGENCE = 3
EXIT_CHECKPOINT = 4

# Thread Pool Settings
WORKER_POOL_MAX_WORKERS = 4
WORKER_THREAD_PREFIX = "edu-worker"

# Summarizer Hook
SUMMARIZER_OLLAMA = "ollama"
SUMMARIZER_API = "api"
DEFAULT_OLLAMA_ENDPOINT = "http://localhost:11434"
DEFAULT_OPENAI_ENDPOINT = "https://api.openai.com"
DEFAULT_SUMMARY_PROMPT = (
    "Write a concise summary of the following related documents. "
    "Documents are separated by the marker {separator}."
)

# Network Settings
HTTP_TIMEOUT = 120.0
MAX_KEEPALIVE_CONNECTIONS = 5
MAX_CONNECTIONS = 10

# File Names
EFFECTIVE_CONFIG_FILE_NAME = "effective_config.json"
SEGMENTED_FILE_TEMPLATE = "segmented_{split}.jsonl"
LABELS_FILE_TEMPLATE = "labels_{split}.jsonl"
CHECKPOINT_FILE_NAME = "checkpoint.pt"
TRAINING_LOG_FILE_NAME = "training_log.jsonl"
EVENTS_LOG_FILE_NAME = "events.jsonl"
PLANS_FILE_TEMPLATE = "plans_{variant}.jsonl"
ASSEMBLED_FILE_TEMPLATE = "assembled_{variant}.jsonl"
SUMMARIES_FILE_TEMPLATE = "summaries_{variant}.jsonl"
REPORT_FILE_NAME = "report.json"
APP_LOG_FILE_NAME = "edu-retriever.log"
SPLITS = ("train", "validation", "test")

# Logging
LOG_LEVEL = "INFO"
LOG_MAX_BYTES = 5 * 1024 * 1024
LOG_BACKUP_COUNT = 3
