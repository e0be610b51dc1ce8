"""EDU Retriever - EDU filtering and document ranking for long-input summarization."""

__version__ = "0.1.0"
