"""Chat-completions client for live benchmark runs."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import httpx

from ..errors import HttpError, MalformedResponse, NetworkError
from .grading import Transcript
from .prompts import ChatFamily, build_prompt, render_chat
from .questions import Question

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
DEFAULT_CONCURRENCY = 4


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.0
    top_k: int | None = None
    top_p: float | None = None
    repetition_penalty: float | None = None
    max_tokens: int = 16

    def request_fields(self) -> dict:
        body = {"temperature": self.temperature, "max_tokens": self.max_tokens}
        for key in ("top_k", "top_p", "repetition_penalty"):
            value = getattr(self, key)
            if value is not None:
                body[key] = value
        return body


# greedy decoding for graded benchmarks
BENCHMARK = GenerationConfig(temperature=0.0, max_tokens=16)
# sampling settings used for open-ended multi-turn conversations
CONVERSATION = GenerationConfig(temperature=1.0, top_k=512, top_p=0.9, repetition_penalty=1.1, max_tokens=1024)


def _messages(prompt) -> list[dict]:
    if isinstance(prompt, str):
        return [{"role": "user", "content": prompt}]
    return list(prompt)


def query_endpoint(
    endpoint: str,
    model: str,
    prompt,
    cfg: GenerationConfig = BENCHMARK,
    *,
    client: httpx.Client | None = None,
    timeout: float = 60.0,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """POST one chat completion and return the first choice's content.

    ``prompt`` is a string (sent as a single user message) or a list of
    ``{"role", "content"}`` messages. 429 and 5xx responses and transport
    failures are retried up to three attempts in total, waiting
    ``backoff * 2**attempt`` seconds in between.
    """
    url = endpoint.rstrip("/") + "/v1/chat/completions"
    body = {"model": model, "messages": _messages(prompt), **cfg.request_fields()}
    owns = client is None
    client = client or httpx.Client(timeout=timeout)
    try:
        for attempt in range(MAX_ATTEMPTS):
            last = attempt == MAX_ATTEMPTS - 1
            try:
                resp = client.post(url, json=body)
            except httpx.TransportError as exc:
                if last:
                    raise NetworkError(str(exc)) from exc
                log.warning("request to %s failed (%s), retrying", url, exc)
                sleep(backoff * 2**attempt)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                if last:
                    raise HttpError(resp.status_code, resp.text)
                log.warning("HTTP %d from %s, retrying", resp.status_code, url)
                sleep(backoff * 2**attempt)
                continue
            if resp.status_code >= 400:
                raise HttpError(resp.status_code, resp.text)
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise MalformedResponse(f"unexpected response body: {resp.text[:200]!r}") from exc
            if not isinstance(content, str):
                raise MalformedResponse("message content is not a string")
            return content
    finally:
        if owns:
            client.close()
    raise AssertionError("unreachable")


def benchmark_prompt(q: Question, template: str = "raw", system: str = ""):
    """Prompt payload for a question: raw text or a family chat template.

    Templated prompts are sent as the sole user message, for servers that
    pass content through without applying their own template.
    """
    prompt = build_prompt(q)
    if template == "raw":
        if system:
            return [{"role": "system", "content": system}, {"role": "user", "content": prompt}]
        return prompt
    return render_chat(ChatFamily(template), system, [prompt])


def collect_transcript(
    endpoint: str,
    model: str,
    bank: Sequence[Question],
    *,
    template: str = "raw",
    system: str = "",
    cfg: GenerationConfig = BENCHMARK,
    concurrency: int = DEFAULT_CONCURRENCY,
    **kwargs,
) -> Transcript:
    """Query every question with at most ``concurrency`` requests in flight."""
    concurrency = max(1, concurrency)

    with httpx.Client(timeout=kwargs.pop("timeout", 60.0), limits=httpx.Limits(max_connections=concurrency)) as client:
        def ask(q: Question) -> tuple[str, str]:
            return q.id, query_endpoint(endpoint, model, benchmark_prompt(q, template, system), cfg, client=client, **kwargs)

        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            answers = dict(pool.map(ask, bank))
    return Transcript(model, [(q.id, answers[q.id]) for q in bank])
