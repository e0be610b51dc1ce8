import asyncio
import json

import httpx
import pytest

from src.errors import BackendUnavailableError
from src.summarizer import (
    OllamaSummarizer,
    OpenAICompatibleSummarizer,
    create_summarizer,
    summarize_inputs,
    write_summaries,
)

RECORDS = [
    {"set_id": "a", "input_text": "first input"},
    {"set_id": "b", "input_text": "FAIL"},
    {"set_id": "c", "input_text": "third input"},
]


def _ollama_handler(request):
    body = json.loads(request.read())
    text = body["messages"][-1]["content"]
    if text == "FAIL":
        return httpx.Response(503, text="busy")
    assert request.url.path == "/api/chat"
    assert body["stream"] is False
    assert body["messages"][0]["role"] == "system"
    return httpx.Response(200, json={"message": {"role": "assistant", "content": f"summary of {text}"}})


def _openai_handler(request):
    assert request.url.path == "/v1/chat/completions"
    assert request.headers["Authorization"] == "Bearer secret"
    text = json.loads(request.read())["messages"][-1]["content"]
    return httpx.Response(200, json={"choices": [{"message": {"content": text.upper()}}]})


def test_ollama_records_failures_per_set():
    service = create_summarizer(
        "ollama", "http://ollama.local/", "llama3", transport=httpx.MockTransport(_ollama_handler)
    )
    assert isinstance(service, OllamaSummarizer)

    async def run():
        try:
            return await summarize_inputs(service, RECORDS)
        finally:
            await service.close()

    results = asyncio.run(run())
    assert [r["set_id"] for r in results] == ["a", "b", "c"]
    assert results[0] == {"set_id": "a", "summary": "summary of first input"}
    assert "error" in results[1] and "summary" not in results[1]
    assert results[2]["summary"] == "summary of third input"


def test_openai_compatible_summaries_are_written(tmp_path):
    service = create_summarizer(
        "api",
        "http://api.local",
        "gpt-small",
        api_key="secret",
        transport=httpx.MockTransport(_openai_handler),
    )
    assert isinstance(service, OpenAICompatibleSummarizer)

    path = write_summaries(service, RECORDS[:1], tmp_path / "out" / "summaries_full.jsonl")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line) for line in lines] == [{"set_id": "a", "summary": "FIRST INPUT"}]


def test_prompt_names_the_separator():
    service = create_summarizer("ollama", "http://ollama.local", "llama3", separator="<sep>")
    assert "<sep>" in service.system_prompt
    asyncio.run(service.close())


def test_factory_errors():
    with pytest.raises(BackendUnavailableError):
        create_summarizer("ollama", "http://ollama.local", "")
    with pytest.raises(BackendUnavailableError):
        create_summarizer("api", "http://api.local", "gpt-small")
    with pytest.raises(BackendUnavailableError) as info:
        create_summarizer("telepathy", "http://x", "m")
    assert info.value.component == "summarizer"
