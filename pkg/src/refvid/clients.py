"""Text-completion clients shared by the annotation pipeline and the judge.

Real services sit behind a one-method seam: complete(prompt, image_refs).
Tests and offline runs use the fixture client, which replays recorded
replies in order.
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path
from typing import Protocol

from .errors import ConfigError, DataError


class CompletionClient(Protocol):
    def complete(self, prompt: str, image_refs: tuple[str, ...] = ()) -> str: ...


class FixtureCompletionClient:
    """Replays canned replies; deterministic and offline."""

    def __init__(self, replies=None, path=None):
        if path is not None:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            replies = payload["replies"] if isinstance(payload, dict) else payload
        if replies is None:
            raise ConfigError("fixture client needs replies or a fixture file")
        self._replies = list(replies)
        self._cursor = 0
        self.requests: list[dict] = []

    def complete(self, prompt: str, image_refs: tuple[str, ...] = ()) -> str:
        if self._cursor >= len(self._replies):
            raise DataError(f"fixture exhausted after {len(self._replies)} replies")
        self.requests.append({"prompt": prompt, "image_refs": list(image_refs)})
        reply = self._replies[self._cursor]
        self._cursor += 1
        return reply


class HttpCompletionClient:
    """Generic JSON-over-HTTP completion endpoint.

    POSTs {"prompt": ..., "image_refs": [...]} with a bearer key taken from
    `api_key_env`; expects {"completion": "..."}. Concurrent requests are
    capped by a semaphore and failures retry with exponential backoff.
    """

    def __init__(self, endpoint: str, api_key_env: str, timeout: float = 30.0,
                 max_concurrent: int = 4, max_retries: int = 3, backoff: float = 1.0):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._gate = threading.Semaphore(max_concurrent)

    def complete(self, prompt: str, image_refs: tuple[str, ...] = ()) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ConfigError(f"environment variable {self.api_key_env} is not set")
        body = json.dumps({"prompt": prompt, "image_refs": list(image_refs)}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint,
            data=body,
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {key}"},
        )
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            with self._gate:
                try:
                    with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                        payload = json.loads(resp.read().decode("utf-8"))
                    return payload["completion"]
                except (urllib.error.URLError, KeyError, json.JSONDecodeError) as exc:
                    last_error = exc
            time.sleep(self.backoff * (2 ** attempt))
        raise DataError(f"completion endpoint failed after {self.max_retries} attempts: {last_error}")
