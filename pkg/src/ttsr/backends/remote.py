"""Chat-completions client used for sampling and teacher calls (no weight updates)."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import httpx

from ..consensus import canonicalize_answer, extract_final_answer
from ..types import QuestionView, Trajectory

log = logging.getLogger(__name__)

API_KEY_ENV = "TTSR_API_KEY"
STUDENT_SYSTEM_PROMPT = ("Solve the problem step by step. "
                         "Put the final answer inside \\boxed{}.")


class RemoteError(RuntimeError):
    """Endpoint failure; carries the question id when the call served one."""

    def __init__(self, message: str, question_id: Optional[str] = None, status: Optional[int] = None):
        self.question_id = question_id
        self.status = status
        prefix = f"[{question_id}] " if question_id else ""
        super().__init__(prefix + message)


class RemoteEndpoint:
    def __init__(self, url: str, model: str, *, temperature: float = 1.0, max_tokens: int = 4096,
                 timeout: float = 60.0, max_retries: int = 3, concurrency: int = 4,
                 backoff: float = 0.5, api_key: Optional[str] = None,
                 client: Optional[httpx.Client] = None, sleep: Callable[[float], None] = time.sleep):
        self.url = url.rstrip("/") + "/v1/chat/completions"
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.max_retries = max_retries
        self.concurrency = concurrency
        self.backoff = backoff
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self.retry_count = 0

    @classmethod
    def from_config(cls, cfg, **kwargs) -> "RemoteEndpoint":
        return cls(cfg.endpoint_url, cfg.model_name, temperature=cfg.temperature,
                   max_tokens=cfg.max_len, timeout=cfg.request_timeout,
                   max_retries=cfg.max_retries, concurrency=cfg.concurrency, **kwargs)

    def close(self):
        self._client.close()

    def request_body(self, messages: Sequence[dict], n: int, temperature: Optional[float] = None) -> dict:
        return {
            "model": self.model,
            "messages": list(messages),
            "n": n,
            "temperature": self.temperature if temperature is None else temperature,
            "max_tokens": self.max_tokens,
        }

    def chat(self, messages: Sequence[dict], n: int = 1, temperature: Optional[float] = None,
             question_id: Optional[str] = None) -> list[str]:
        """POST one completion request; retries transport errors, timeouts, 429 and 5xx."""
        body = self.request_body(messages, n, temperature)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.retry_count += 1
                delay = self.backoff * 2 ** (attempt - 1)
                log.warning("retry %d/%d after %s (sleeping %.2fs)", attempt, self.max_retries,
                            last_error, delay)
                self._sleep(delay)
            try:
                resp = self._client.post(self.url, json=body, headers=headers, timeout=self.timeout)
            except httpx.TimeoutException as exc:
                last_error = RemoteError(f"request timed out after {self.timeout}s", question_id)
                last_error.__cause__ = exc
                continue
            except httpx.TransportError as exc:
                last_error = RemoteError(f"transport failure: {exc}", question_id)
                last_error.__cause__ = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = RemoteError(f"HTTP {resp.status_code}", question_id, resp.status_code)
                continue
            if not 200 <= resp.status_code < 300:
                raise RemoteError(f"HTTP {resp.status_code}: {resp.text[:200]}", question_id,
                                  resp.status_code)
            return self._parse(resp, question_id)
        raise last_error

    @staticmethod
    def _parse(resp: httpx.Response, question_id: Optional[str]) -> list[str]:
        try:
            payload = resp.json()
            contents = [choice["message"]["content"] for choice in payload["choices"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise RemoteError(f"malformed response body: {exc}", question_id) from exc
        if not contents or not all(isinstance(c, str) for c in contents):
            raise RemoteError("malformed response body: no text choices", question_id)
        return contents

    def sample_group(self, question: QuestionView, G: int, rng=None,
                     temperature: Optional[float] = None) -> list[Trajectory]:
        # rng is accepted for interface parity with the toy policy; the endpoint samples

        messages = [{"role": "system", "content": STUDENT_SYSTEM_PROMPT},
                    {"role": "user", "content": question.body}]
        texts = self.chat(messages, n=G, temperature=temperature, question_id=question.id)
        if len(texts) != G:
            raise RemoteError(f"expected {G} choices, got {len(texts)}", question.id)
        return [_text_trajectory(question.id, text) for text in texts]

    def sample_groups(self, questions: Sequence[QuestionView], G: int) -> list[list[Trajectory]]:
        """Fan out one request per question, bounded by the concurrency cap; order preserved."""
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            return list(pool.map(lambda q: self.sample_group(q, G), questions))

    def greedy(self, question: QuestionView) -> Trajectory:
        return self.sample_group(question, 1, temperature=0.0)[0]

    def teacher_call(self, prompt: str, n: int = 1) -> list[str]:
        texts = self.chat([{"role": "user", "content": prompt}], n=n)
        if any(not t.strip() for t in texts):
            raise RemoteError("empty completion from teacher call")
        return texts


def _text_trajectory(question_id: str, text: str) -> Trajectory:
    raw = extract_final_answer(text)
    return Trajectory(question_id=question_id, token_ids=(), text=text, answer_raw=raw,
                      answer_canonical=canonicalize_answer(raw, "remote"))


def remote_sample_group(endpoint: RemoteEndpoint, question: QuestionView, G: int) -> list[Trajectory]:
    return endpoint.sample_group(question, G)


def remote_teacher_call(endpoint: RemoteEndpoint, prompt: str) -> str:
    return endpoint.teacher_call(prompt, n=1)[0]
