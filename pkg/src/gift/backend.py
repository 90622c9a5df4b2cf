"""Clients for a completions-style inference endpoint.

Two capabilities are exposed: ``complete`` samples continuations of a prompt,
``score`` returns the per-token logprobs of a fixed continuation given a
context. Scoring is sent as an echo request with ``max_tokens=0``.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import httpx

log = logging.getLogger(__name__)

LOGPROB_SLACK = 1e-9
FINISH_REASONS = ("stop", "length", "error")


class BackendError(RuntimeError):
    """The endpoint could not be reached or kept failing after retries."""


class ProtocolError(BackendError):
    """The endpoint answered, but the body violates the wire contract."""

    def __init__(self, message: str, raw_body: str = ""):
        super().__init__(message)
        self.raw_body = raw_body


class CapabilityError(BackendError):
    """The endpoint cannot score continuations (echo + logprobs unsupported).

    Callers fall back to generation-time logprobs where the conditioning
    description matches; see ``gift.selection``.
    """


@dataclass(frozen=True)
class Completion:
    text: str
    token_logprobs: Optional[tuple[float, ...]] = None
    finish_reason: str = "stop"
    tokens: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")
        if self.token_logprobs is not None:
            object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(self.tokens))


@dataclass
class BackendSpec:
    kind: str = "http"  # "http" or "mock"
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "model"
    timeout_s: float = 120.0
    max_retries: int = 3
    retry_backoff_s: float = 1.0
    max_concurrency: int = 8
    api_key_env: str = "GIFT_API_KEY"
    mock: dict = field(default_factory=dict)


def _check_complete_args(prompt: str, n: int, temperature: float) -> None:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")


def _check_logprobs(lps: Sequence[float], raw: str = "") -> None:
    for lp in lps:
        if lp is None or lp > LOGPROB_SLACK:
            raise ProtocolError(f"invalid token logprob {lp!r}", raw)


class Backend:
    """Interface shared by the HTTP client and the mocks."""

    def complete(self, prompt: str, n: int = 1, temperature: float = 1.0, max_tokens: int = 512,
                 want_logprobs: bool = False, stop: Optional[Sequence[str]] = None) -> list[Completion]:
        raise NotImplementedError

    def score(self, context: str, continuation: str) -> list[float]:
        raise CapabilityError(f"{type(self).__name__} cannot score continuations")

    def health(self) -> None:
        """Raise BackendError if the endpoint is unusable."""


def generation_request(model: str, prompt: str, n: int, temperature: float, max_tokens: int,
                       want_logprobs: bool, stop: Optional[Sequence[str]] = None) -> dict:
    body = {
        "model": model,
        "prompt": prompt,
        "n": n,
        "temperature": temperature,
        "max_tokens": max_tokens,
        "logprobs": 1 if want_logprobs else None,
        "echo": False,
    }
    if stop:
        body["stop"] = list(stop)
    return body


def scoring_request(model: str, context: str, continuation: str) -> dict:
    return {
        "model": model,
        "prompt": context + continuation,
        "n": 1,
        "temperature": 1.0,
        "max_tokens": 0,
        "logprobs": 1,
        "echo": True,
    }


def _finish_reason(value) -> str:
    if value == "length":
        return "length"
    if value in (None, "stop", "eos", "stop_sequence"):
        return "stop"
    return "error"


def parse_generation_response(payload: dict, n: int, want_logprobs: bool, raw: str = "") -> list[Completion]:
    choices = payload.get("choices") if isinstance(payload, dict) else None
    if not isinstance(choices, list):
        raise ProtocolError("response has no 'choices' list", raw)
    if len(choices) != n:
        raise ProtocolError(f"requested {n} choices, received {len(choices)}", raw)
    out = []
    for ch in choices:
        if not isinstance(ch, dict) or not isinstance(ch.get("text"), str):
            raise ProtocolError("choice without text", raw)
        lps = tokens = None
        if want_logprobs:
            lp_obj = ch.get("logprobs") or {}
            lps = lp_obj.get("token_logprobs")
            tokens = lp_obj.get("tokens")
            if not isinstance(lps, list):
                raise ProtocolError("logprobs requested but missing from choice", raw)
            if tokens is not None and len(tokens) != len(lps):
                raise ProtocolError("token count does not match logprob count", raw)
            _check_logprobs(lps, raw)
        out.append(Completion(ch["text"], lps, _finish_reason(ch.get("finish_reason")), tokens))
    return out


def parse_scoring_response(payload: dict, context: str, raw: str = "") -> list[float]:
    """Logprobs of every echoed token that reaches past the end of ``context``."""
    choices = payload.get("choices") if isinstance(payload, dict) else None
    if not isinstance(choices, list) or len(choices) != 1:
        raise ProtocolError("scoring response must hold exactly one choice", raw)
    lp_obj = choices[0].get("logprobs")
    if not isinstance(lp_obj, dict):
        raise CapabilityError("endpoint did not return echo logprobs")
    tokens, lps, offsets = lp_obj.get("tokens"), lp_obj.get("token_logprobs"), lp_obj.get("text_offset")
    if not (isinstance(tokens, list) and isinstance(lps, list) and isinstance(offsets, list)):
        raise CapabilityError("echo logprobs lack tokens/token_logprobs/text_offset")
    if not len(tokens) == len(lps) == len(offsets):
        raise ProtocolError("echo logprob arrays differ in length", raw)
    cut = len(context)
    span = [lp for tok, lp, off in zip(tokens, lps, offsets) if off + len(tok) > cut]
    if not span:
        raise ProtocolError("echo covers no continuation tokens", raw)
    _check_logprobs(span, raw)
    return [float(lp) for lp in span]


class HTTPBackend(Backend):
    def __init__(self, spec: BackendSpec, transport: Optional[httpx.BaseTransport] = None,
                 sleep=time.sleep):
        if spec.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.spec = spec
        headers = {}
        key = os.environ.get(spec.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(base_url=spec.base_url.rstrip("/"), timeout=spec.timeout_s,
                                    headers=headers, transport=transport)
        self._slots = threading.BoundedSemaphore(spec.max_concurrency)
        self._sleep = sleep
        self._in_flight = 0
        self.max_in_flight_seen = 0
        self._lock = threading.Lock()

    def close(self):
        self._client.close()

    def _post(self, body: dict) -> tuple[dict, str]:
        attempts = self.spec.max_retries + 1
        last: Optional[Exception] = None
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.spec.retry_backoff_s * 2 ** (attempt - 1))
            try:
                with self._slots:
                    with self._lock:
                        self._in_flight += 1
                        self.max_in_flight_seen = max(self.max_in_flight_seen, self._in_flight)
                    try:
                        resp = self._client.post("/completions", json=body)
                    finally:
                        with self._lock:
                            self._in_flight -= 1
            except httpx.TransportError as e:
                last = e
                log.warning("request failed (%s), attempt %d/%d", e, attempt + 1, attempts)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = BackendError(f"HTTP {resp.status_code}")
                log.warning("HTTP %d, attempt %d/%d", resp.status_code, attempt + 1, attempts)
                continue
            raw = resp.text
            if resp.status_code >= 400:
                if body.get("echo"):
                    raise CapabilityError(f"scoring request rejected with HTTP {resp.status_code}: {raw[:200]}")
                raise BackendError(f"HTTP {resp.status_code}: {raw[:200]}")
            try:
                return resp.json(), raw
            except json.JSONDecodeError as e:
                raise ProtocolError(f"response is not JSON: {e}", raw) from e
        raise BackendError(f"giving up after {attempts} attempts: {last}")

    def complete(self, prompt, n=1, temperature=1.0, max_tokens=512, want_logprobs=False, stop=None):
        _check_complete_args(prompt, n, temperature)
        body = generation_request(self.spec.model_name, prompt, n, temperature, max_tokens, want_logprobs, stop)
        payload, raw = self._post(body)
        return parse_generation_response(payload, n, want_logprobs, raw)

    def score(self, context, continuation):
        if not continuation:
            raise ValueError("continuation must be nonempty")
        payload, raw = self._post(scoring_request(self.spec.model_name, context, continuation))
        return parse_scoring_response(payload, context, raw)

    def health(self):
        try:
            resp = self._client.get("/models")
        except httpx.TransportError as e:
            raise BackendError(f"endpoint {self.spec.base_url} unreachable: {e}") from e
        if resp.status_code >= 500:
            raise BackendError(f"endpoint {self.spec.base_url} unhealthy: HTTP {resp.status_code}")


def build_backend(spec: BackendSpec, **mock_kwargs) -> Backend:
    if spec.kind == "http":
        return HTTPBackend(spec)
    if spec.kind == "mock":
        from gift.mock import MockBackend

        return MockBackend.from_options(spec.mock, **mock_kwargs)
    raise ValueError(f"unknown backend kind {spec.kind!r}")
