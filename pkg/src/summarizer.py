"""Optional summarizer hook: sends assembled inputs to an external summarization service."""

import asyncio
import json
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import httpx

from src.constants import (
    DEFAULT_SEPARATOR,
    DEFAULT_SUMMARY_PROMPT,
    HTTP_TIMEOUT,
    MAX_CONNECTIONS,
    MAX_KEEPALIVE_CONNECTIONS,
    SUMMARIZER_API,
    SUMMARIZER_OLLAMA,
)
from src.errors import BackendUnavailableError
from src.logger import get_logger, log_event

# Configure logging
logger = get_logger(__name__)


class SummarizerService(ABC):
    """Abstract base class for summarization services."""

    def __init__(self, model: str, system_prompt: str):
        self.model = model
        self.system_prompt = system_prompt

    def _messages(self, text: str) -> List[Dict[str, str]]:
        return [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": text},
        ]

    @abstractmethod
    async def summarize(self, text: str) -> str:
        """Return a summary of one assembled input."""

    async def close(self):
        """Close the service and cleanup resources."""
        pass


class OllamaSummarizer(SummarizerService):
    """Ollama chat endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        system_prompt: str = DEFAULT_SUMMARY_PROMPT,
        transport: Optional[httpx.AsyncBaseTransport] = None,
    ):
        super().__init__(model, system_prompt)
        self.endpoint = endpoint.rstrip("/")
        self.client = httpx.AsyncClient(
            timeout=HTTP_TIMEOUT,
            transport=transport,
            limits=httpx.Limits(
                max_keepalive_connections=MAX_KEEPALIVE_CONNECTIONS, max_connections=MAX_CONNECTIONS
            ),
        )

    async def summarize(self, text: str) -> str:
        response = await self.client.post(
            f"{self.endpoint}/api/chat",
            json={"model": self.model, "messages": self._messages(text), "stream": False},
        )
        response.raise_for_status()
        return response.json()["message"]["content"]

    async def close(self):
        """Close the HTTP client."""
        await self.client.aclose()


class OpenAICompatibleSummarizer(SummarizerService):
    """OpenAI-compatible chat completions endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        system_prompt: str = DEFAULT_SUMMARY_PROMPT,
        transport: Optional[httpx.AsyncBaseTransport] = None,
    ):
        super().__init__(model, system_prompt)
        self.endpoint = endpoint.rstrip("/")

        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        self.client = httpx.AsyncClient(
            timeout=HTTP_TIMEOUT,
            headers=headers,
            transport=transport,
            limits=httpx.Limits(
                max_keepalive_connections=MAX_KEEPALIVE_CONNECTIONS, max_connections=MAX_CONNECTIONS
            ),
        )

    async def summarize(self, text: str) -> str:
        response = await self.client.post(
            f"{self.endpoint}/v1/chat/completions",
            json={"model": self.model, "messages": self._messages(text), "stream": False},
        )
        response.raise_for_status()
        return response.json()["choices"][0]["message"]["content"]

    async def close(self):
        """Close the HTTP client."""
        await self.client.aclose()


def create_summarizer(
    kind: str,
    endpoint: str,
    model: str,
    api_key: Optional[str] = None,
    separator: str = DEFAULT_SEPARATOR,
    transport: Optional[httpx.AsyncBaseTransport] = None,
) -> SummarizerService:
    """Factory function to create summarizer services."""
    if not model:
        raise BackendUnavailableError("summarizer", "a summarizer model name is required")
    prompt = DEFAULT_SUMMARY_PROMPT.format(separator=separator)
    if kind == SUMMARIZER_OLLAMA:
        return OllamaSummarizer(endpoint, model, system_prompt=prompt, transport=transport)
    elif kind == SUMMARIZER_API:
        if not api_key:
            raise BackendUnavailableError("summarizer", "API key is required for API-based models")
        return OpenAICompatibleSummarizer(
            endpoint, model, api_key=api_key, system_prompt=prompt, transport=transport
        )
    else:
        raise BackendUnavailableError("summarizer", f"unknown summarizer kind {kind!r}")


async def summarize_inputs(
    service: SummarizerService, records: Sequence[Dict[str, str]]
) -> List[Dict[str, str]]:
    """Summarize assembled inputs one set at a time.

    Args:
        service: Summarization service
        records: ``{"set_id", "input_text"}`` records

    Returns:
        ``{"set_id", "summary"}`` records in input order; a failed set carries
        an ``"error"`` field instead of a summary
    """
    results = []
    for record in records:
        start_time = time.time()
        try:
            summary = await service.summarize(record["input_text"])
            results.append({"set_id": record["set_id"], "summary": summary})
            log_event(
                "summary_written",
                {"set_id": record["set_id"], "duration": round(time.time() - start_time, 3)},
            )
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
            logger.error(f"Summarizer failed for set {record['set_id']}: {e}")
            results.append({"set_id": record["set_id"], "error": str(e)})
    return results


def write_summaries(
    service: SummarizerService, records: Sequence[Dict[str, str]], path: Path
) -> Path:
    """Run the summarizer over ``records`` and write JSON Lines to ``path``."""

    async def run():
        try:
            return await summarize_inputs(service, records)
        finally:
            await service.close()

    results = asyncio.run(run())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for result in results:
            f.write(json.dumps(result, ensure_ascii=False, sort_keys=True) + "\n")
    logger.info(f"Wrote {len(results)} summaries to {path}")
    return path
