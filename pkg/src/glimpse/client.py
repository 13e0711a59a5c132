"""Echo-mode completion client.

The provider is asked to generate zero new tokens while echoing the
submitted text with per-token logprobs and a top-K logprob list; that is
the entire acquisition surface. Transient failures (429, 5xx, transport
errors) retry with exponential backoff up to a fixed attempt budget; a
shared rate limiter spaces requests when a requests-per-minute budget is
configured. Positions covered by the conditioning prompt are dropped
using the provider's text offsets.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass

import httpx
import numpy as np

from .distribution import PartialObservation
from .errors import (
    AuthError,
    ConfigError,
    ObservationError,
    ProviderError,
    RateLimitExhaustedError,
    TopKUnsupportedError,
)
from .scoring import MAX_SKIP_FRACTION, PassageObservation

API_KEY_ENV = "GLIMPSE_API_KEY"


@dataclass(frozen=True)
class ClientConfig:
    """Provider connection settings.

    The API key resolves as: explicit field (e.g. from the config file),
    then the GLIMPSE_API_KEY environment variable. Retry and rate
    parameters are operational knobs with conservative defaults.
    """

    base_url: str
    model: str
    api_key: str | None = None
    max_top_k: int = 5
    timeout: float = 30.0
    max_attempts: int = 5
    backoff_base: float = 0.5
    backoff_cap: float = 30.0
    requests_per_minute: float | None = None
    max_concurrency: int = 4

    _FIELDS = (
        "base_url",
        "model",
        "api_key",
        "max_top_k",
        "timeout",
        "max_attempts",
        "backoff_base",
        "backoff_cap",
        "requests_per_minute",
        "max_concurrency",
    )

    def __post_init__(self):
        if not self.base_url:
            raise ConfigError("base_url must be non-empty")
        if not self.model:
            raise ConfigError("model must be non-empty")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if self.max_top_k < 1:
            raise ConfigError("max_top_k must be >= 1")

    @classmethod
    def from_file(cls, path) -> "ClientConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: provider config must be a JSON object")
        unknown = set(raw) - set(cls._FIELDS)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        for req in ("base_url", "model"):
            if req not in raw:
                raise ConfigError(f"{path}: missing required key {req!r}")
        return cls(**raw)

    def resolved_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)


class RateLimiter:
    """Spaces acquisitions so the shared requests-per-minute budget holds.

    Thread-safe; with no budget configured, acquire is free.
    """

    def __init__(
        self,
        requests_per_minute: float | None,
        clock=time.monotonic,
        sleeper=time.sleep,
    ):
        if requests_per_minute is not None and requests_per_minute <= 0:
            raise ConfigError("requests_per_minute must be positive")
        self.interval = 60.0 / requests_per_minute if requests_per_minute else 0.0
        self._clock = clock
        self._sleeper = sleeper
        self._lock = threading.Lock()
        self._earliest = float("-inf")

    def acquire(self) -> None:
        if self.interval == 0.0:
            return
        with self._lock:
            now = self._clock()
            wait = self._earliest - now
            if wait > 0:
                self._sleeper(wait)
                now = self._earliest
            self._earliest = now + self.interval


def _classify_status(response: httpx.Response):
    """Map a non-2xx response to (exception | None-if-transient)."""
    code = response.status_code
    if code in (401, 403):
        return AuthError(f"provider rejected credentials (HTTP {code})")
    if code == 429 or code >= 500:
        return None  # transient
    body = response.text[:400]
    lowered = body.lower()
    if "logprob" in lowered and any(
        word in lowered for word in ("max", "unsupported", "exceed", "at most")
    ):
        return TopKUnsupportedError(f"HTTP {code}: {body}")
    return ProviderError(f"provider rejected the request (HTTP {code}): {body}")


def _request_with_retries(config, client, payload, headers, limiter, sleeper):
    last_transient = ""
    last_was_429 = False
    for attempt in range(1, config.max_attempts + 1):
        if limiter is not None:
            limiter.acquire()
        try:
            response = client.post(
                config.base_url.rstrip("/") + "/completions",
                json=payload,
                headers=headers,
                timeout=config.timeout,
            )
        except httpx.TransportError as exc:
            last_transient, last_was_429 = f"transport error: {exc}", False
        else:
            if response.status_code < 300:
                return response, attempt
            err = _classify_status(response)
            if err is not None:
                raise err
            last_transient = f"HTTP {response.status_code}"
            last_was_429 = response.status_code == 429
        if attempt < config.max_attempts:
            sleeper(min(config.backoff_cap, config.backoff_base * 2 ** (attempt - 1)))
    if last_was_429:
        raise RateLimitExhaustedError(
            f"{config.max_attempts} attempts exhausted; last failure: {last_transient}"
        )
    raise ProviderError(
        f"{config.max_attempts} attempts exhausted; last failure: {last_transient}"
    )


def _positions_from_logprobs(logprobs: dict, prompt_len: int):
    tokens = logprobs.get("tokens") or []
    token_lps = logprobs.get("token_logprobs") or []
    top_lps = logprobs.get("top_logprobs") or []
    offsets = logprobs.get("text_offset") or []
    n = len(token_lps)
    if not (len(top_lps) == n and len(offsets) == n):
        raise ProviderError("logprob arrays have inconsistent lengths")
    positions = []
    kept_tokens = []
    scored = 0
    skipped = 0
    for j in range(n):
        if offsets[j] < prompt_len:
            continue  # conditioning prompt, never scored
        scored += 1
        tlp, top = token_lps[j], top_lps[j]
        if tlp is None or not top:
            skipped += 1
            continue
        probs = np.exp(np.sort(np.asarray(list(top.values()), dtype=np.float64))[::-1])
        try:
            positions.append(
                PartialObservation(token_prob=math.exp(tlp), top_probs=probs)
            )
        except ObservationError as exc:
            raise ProviderError(f"inconsistent logprobs at position {j}: {exc}") from exc
        if j < len(tokens):
            kept_tokens.append(tokens[j])
    if scored == 0 or not positions:
        raise ProviderError("no scoreable positions after prompt exclusion")
    if skipped / scored > MAX_SKIP_FRACTION:
        raise ProviderError(
            f"{skipped}/{scored} positions lack logprobs (over {MAX_SKIP_FRACTION:.0%})"
        )
    tokens_out = tuple(kept_tokens) if len(kept_tokens) == len(positions) else None
    return positions, tokens_out, skipped


def fetch_observation(
    config: ClientConfig,
    text: str,
    prompt: str = "",
    k: int = 5,
    label: str = "unknown",
    passage_id: str | None = None,
    client: httpx.Client | None = None,
    limiter: RateLimiter | None = None,
    sleeper=time.sleep,
) -> PassageObservation:
    """One echo-mode request for one text; returns its PassageObservation.

    The prompt conditions the model but its positions are excluded via
    the provider's text offsets. The attempt count lands in source_meta.
    """
    if not text:
        raise ConfigError("text must be non-empty")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > config.max_top_k:
        raise TopKUnsupportedError(
            f"requested top-{k} exceeds provider limit {config.max_top_k}"
        )
    payload = {
        "model": config.model,
        "prompt": prompt + text,
        "max_tokens": 0,
        "echo": True,
        "logprobs": k,
    }
    headers = {}
    key = config.resolved_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"

    own_client = client is None
    if own_client:
        client = httpx.Client()
    try:
        response, attempts = _request_with_retries(
            config, client, payload, headers, limiter, sleeper
        )
    finally:
        if own_client:
            client.close()

    try:
        body = response.json()
        logprobs = body["choices"][0]["logprobs"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"malformed provider response: {exc}") from exc
    if not isinstance(logprobs, dict):
        raise ProviderError("provider response lacks a logprobs object")
    positions, tokens, skipped = _positions_from_logprobs(logprobs, len(prompt))
    meta = {
        "provider": config.base_url,
        "model": body.get("model", config.model),
        "prompt_id": hashlib.sha1(prompt.encode("utf-8")).hexdigest()[:8],
        "K": k,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "attempts": attempts,
        "skipped_positions": skipped,
    }
    return PassageObservation(
        id=passage_id or "fetch-" + hashlib.sha1(text.encode("utf-8")).hexdigest()[:10],
        label=label,
        positions=tuple(positions),
        text=text,
        tokens=tokens,
        source_meta=meta,
    )
