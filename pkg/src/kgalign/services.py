"""HTTP clients for the three external model services.

Wire protocols (JSON over POST, all paths relative to a base URL):

    /generate   {"prompt": str, "max_tokens": int}      -> {"text": str}
    /embed      {"texts": [str, ...]}                   -> {"vectors": [[float, ...], ...]}
    /score      {"pairs": [[str, str], ...]}            -> {"scores": [float, ...]}

Transient failures (connection errors, 5xx) are retried with short backoff;
4xx answers fail immediately. Responses can be cached on disk keyed by a
content hash of the request, which makes reruns offline-reproducible once
the cache is warm. Batch helpers keep result order equal to input order and
bound their parallelism.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from threading import Lock
from typing import Any, Sequence

import numpy as np
import requests

from .errors import (
    DimensionMismatchError,
    EmptyGenerationError,
    NonFiniteScoreError,
    ServiceErrorStatusError,
    ServiceUnreachableError,
)
from .util import atomic_write_text, canonical_json, sha256_bytes

LOGGER = logging.getLogger(__name__)


class DiskCache:
    """One JSON file per entry under a directory; safe for concurrent readers
    with serialized in-process writes."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Any | None:
        path = self._path(key)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            LOGGER.warning("discarding corrupt cache entry %s", path)
            return None

    def put(self, key: str, value: Any) -> None:
        with self._lock:
            atomic_write_text(self._path(key), json.dumps(value, ensure_ascii=False))


def request_key(kind: str, payload: Any) -> str:
    return sha256_bytes(canonical_json({"kind": kind, "payload": payload}).encode("utf-8"))


class _JsonServiceClient:
    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 10.0,
        retries: int = 2,
        backoff: float = 0.1,
        cache: DiskCache | None = None,
        parallelism: int = 4,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.cache = cache
        self.parallelism = max(1, parallelism)
        self._session = requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (attempt + 1))
                continue
            if resp.status_code >= 500:
                last_exc = ServiceErrorStatusError(resp.status_code, resp.text[:200])
                if attempt < self.retries:
                    time.sleep(self.backoff * (attempt + 1))
                continue
            if resp.status_code >= 400:
                raise ServiceErrorStatusError(resp.status_code, resp.text[:200])
            try:
                return resp.json()
            except ValueError:
                raise ServiceErrorStatusError(resp.status_code, "response body is not valid JSON") from None
        if isinstance(last_exc, ServiceErrorStatusError):
            raise last_exc
        raise ServiceUnreachableError(f"cannot reach {url} after {self.retries + 1} attempts: {last_exc}")

    def _cached_call(self, kind: str, path: str, payload: dict) -> dict:
        key = request_key(kind, payload) if self.cache is not None else None
        if key is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        result = self._post(path, payload)
        if key is not None:
            self.cache.put(key, result)
        return result


class GenerationClient(_JsonServiceClient):
    """Client for the text-generation service (/generate)."""

    def generate(self, prompt: str, max_tokens: int = 256) -> str:
        body = self._cached_call("generate", "/generate", {"prompt": prompt, "max_tokens": int(max_tokens)})
        text = body.get("text")
        if not isinstance(text, str):
            raise ServiceErrorStatusError(200, "generate response missing string field 'text'")
        if not text.strip():
            raise EmptyGenerationError("generation service returned empty text")
        return text


class EmbeddingClient(_JsonServiceClient):
    """Client for the embedding service (/embed). dim is the contract, every
    returned vector must match it."""

    def __init__(self, base_url: str, dim: int, *, batch_size: int = 64, **kwargs: Any) -> None:
        super().__init__(base_url, **kwargs)
        self.dim = int(dim)
        self.batch_size = max(1, int(batch_size))

    def _embed_chunk(self, texts: Sequence[str]) -> np.ndarray:
        body = self._cached_call("embed", "/embed", {"texts": list(texts)})
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ServiceErrorStatusError(200, f"embed response must carry {len(texts)} vectors")
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"embedding service returned shape {arr.shape}, expected ({len(texts)}, {self.dim})"
            )
        return arr.astype(np.float32)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            return np.zeros((0, self.dim), dtype=np.float32)
        chunks = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if len(chunks) == 1 or self.parallelism == 1:
            parts = [self._embed_chunk(c) for c in chunks]
        else:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                parts = list(pool.map(self._embed_chunk, chunks))
        return np.concatenate(parts, axis=0)


class PairScoreClient(_JsonServiceClient):
    """Client for the pair-scoring service (/score)."""

    def __init__(self, base_url: str, *, batch_size: int = 64, **kwargs: Any) -> None:
        super().__init__(base_url, **kwargs)
        self.batch_size = max(1, int(batch_size))

    def _score_chunk(self, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
        body = self._cached_call("score", "/score", {"pairs": [[a, b] for a, b in pairs]})
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(pairs):
            raise ServiceErrorStatusError(200, f"score response must carry {len(pairs)} scores")
        arr = np.asarray(scores, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteScoreError("pair-scoring service returned non-finite scores")
        return arr

    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
        if len(pairs) == 0:
            return np.zeros(0, dtype=np.float64)
        chunks = [pairs[i : i + self.batch_size] for i in range(0, len(pairs), self.batch_size)]
        if len(chunks) == 1 or self.parallelism == 1:
            parts = [self._score_chunk(c) for c in chunks]
        else:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                parts = list(pool.map(self._score_chunk, chunks))
        return np.concatenate(parts, axis=0)
