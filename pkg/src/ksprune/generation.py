"""Answer generators: an OpenAI-compatible HTTP backend and a recorded
fixture backend for fully offline, bit-reproducible runs.

Fixture format (JSONL, one bundle per line):

    {"dataset_id": ..., "row_index": ..., "context": ..., "question": ...,
     "correct_answer": ..., "a_o": ..., "samples": [m strings]}
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

API_KEY_ENV = "KSPRUNE_API_KEY"
DEFAULT_PROMPT_TEMPLATE = "<|user|>{context} {question}"


class GeneratorError(Exception):
    """Transport-level generation failure (distinct from empty output)."""


@dataclass
class GenerationBundle:
    """One primary answer plus its m resampled answers for a single query."""

    dataset_id: str
    row_index: int
    context: str
    question: str
    a_o: str
    samples: list
    correct_answer: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def query_key(self) -> tuple:
        return (self.dataset_id, self.row_index)


class RecordedFixtureGenerator:
    """Replays pre-recorded bundles byte-identically; fully deterministic."""

    backend = "recorded-fixture"

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise GeneratorError(f"fixture file not found: {self.path}")
        self.bundles = []
        self._by_ref = {}
        self._by_text = {}
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    bundle = GenerationBundle(
                        dataset_id=obj.get("dataset_id", ""),
                        row_index=int(obj.get("row_index", -1)),
                        context=obj["context"],
                        question=obj["question"],
                        a_o=obj["a_o"],
                        samples=list(obj["samples"]),
                        correct_answer=obj.get("correct_answer", ""),
                        meta={"backend": self.backend, "fixture_line": lineno},
                    )
                except (KeyError, ValueError, TypeError) as exc:
                    raise GeneratorError(
                        f"{self.path}:{lineno}: malformed bundle: {exc}") from exc
                self.bundles.append(bundle)
                self._by_ref[bundle.query_key] = bundle
                self._by_text[(bundle.context, bundle.question)] = bundle

    def lookup(self, context: str, question: str,
               ref: tuple | None = None) -> GenerationBundle:
        if ref is not None and ref in self._by_ref:
            return self._by_ref[ref]
        bundle = self._by_text.get((context, question))
        if bundle is None:
            raise GeneratorError(
                f"no recorded bundle for query {ref or (context[:40], question[:40])!r}")
        return bundle


class HttpChatGenerator:
    """OpenAI-compatible chat completions client with retry/backoff.

    Empty completions come back as "", never as an exception; exceptions are
    reserved for transport failures after retries are exhausted.
    """

    backend = "http-chat-endpoint"

    def __init__(self, base_url: str, model: str, temperature: float = 1.0,
                 top_k: int | None = None, max_tokens: int = 128,
                 seed: int | None = None, retries: int = 3,
                 timeout: float = 120.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.top_k = top_k
        self.max_tokens = max_tokens
        self.seed = seed
        self.retries = retries
        self.timeout = timeout
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def generate(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.top_k is not None:
            payload["top_k"] = self.top_k
        if self.seed is not None:
            payload["seed"] = self.seed
        last = None
        for attempt in range(self.retries):
            try:
                resp = self.session.post(
                    self.base_url + "/v1/chat/completions",
                    json=payload, headers=self._headers(), timeout=self.timeout)
                resp.raise_for_status()
                data = resp.json()
                choices = data.get("choices") or []
                if not choices:
                    return ""
                message = choices[0].get("message") or {}
                return message.get("content") or ""
            except (requests.RequestException, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(0.25 * 2 ** attempt)
        raise GeneratorError(
            f"chat endpoint {self.base_url} failed after {self.retries} "
            f"attempts: {last}")


def generate_bundle(generator, context: str, question: str, m: int,
                    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
                    dataset_id: str = "", row_index: int = -1,
                    correct_answer: str = "") -> GenerationBundle:
    """Issue 1 + m generation requests (or replay a recording) for one query."""
    if m < 1:
        raise GeneratorError(f"sample count m must be >= 1, got {m}")
    if isinstance(generator, RecordedFixtureGenerator):
        bundle = generator.lookup(context, question, ref=(dataset_id, row_index))
        if len(bundle.samples) != m:
            raise GeneratorError(
                f"recorded bundle for {bundle.query_key} has "
                f"{len(bundle.samples)} samples, expected m={m}")
        return bundle
    prompt = prompt_template.format(context=context, question=question)
    started = time.time()
    a_o = generator.generate(prompt)
    samples = [generator.generate(prompt) for _ in range(m)]
    return GenerationBundle(
        dataset_id=dataset_id, row_index=row_index, context=context,
        question=question, a_o=a_o, samples=samples,
        correct_answer=correct_answer,
        meta={"backend": generator.backend, "model": getattr(generator, "model", ""),
              "temperature": getattr(generator, "temperature", None),
              "top_k": getattr(generator, "top_k", None),
              "started_at": started, "elapsed_s": time.time() - started})
