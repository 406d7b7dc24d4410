"""Generation-client boundary: HTTP, record/replay, and chat-style shim.

Wire protocol (JSON over POST):

    request  {"task": "describe"|"similar"|"embed",
              "text": str?, "texts": [str]?, "image_b64": str?,
              "exclude": str?, "count": int?}
    response {"texts": [str]?, "vectors": [[float]]?}

`describe` carries the image reference in `text` for embedding-only
pipelines (no image decoding happens in this package); deployments that
ship pixels use `image_b64`. Batch embedding uses the `texts` list.
"""
from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import requests

from .errors import GenerationError


@runtime_checkable
class GenerationClient(Protocol):
    def describe_image(self, image_ref: str, exclude_label: str) -> str: ...

    def similar_labels(self, class_name: str, count: int) -> list[str]: ...

    def embed_texts(self, texts: list[str]) -> np.ndarray: ...


def request_key(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class HttpGenerationClient:
    """Task-based JSON client with bounded retries and exponential backoff."""

    def __init__(
        self,
        endpoint: str,
        auth_token: str | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._session = session or requests.Session()
        self._headers = {"Content-Type": "application/json"}
        if auth_token:
            self._headers["Authorization"] = f"Bearer {auth_token}"

    def _post(self, payload: dict, image_id: str | None = None) -> dict:
        last = None
        for attempt in range(self.retries):
            try:
                resp = self._session.post(
                    self.endpoint,
                    json=payload,
                    headers=self._headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise GenerationError(
            f"generation endpoint failed after {self.retries} attempts: {last}",
            image_id=image_id,
        )

    def describe_image(self, image_ref: str, exclude_label: str) -> str:
        out = self._post(
            {"task": "describe", "text": image_ref, "exclude": exclude_label},
            image_id=image_ref,
        )
        texts = out.get("texts") or []
        if not texts:
            raise GenerationError("describe returned no text", image_id=image_ref)
        return texts[0]

    def similar_labels(self, class_name: str, count: int) -> list[str]:
        out = self._post(
            {"task": "similar", "text": class_name, "count": count}
        )
        return list(out.get("texts") or [])

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        out = self._post({"task": "embed", "texts": list(texts)})
        vectors = out.get("vectors")
        if not vectors or len(vectors) != len(texts):
            raise GenerationError("embed returned wrong vector count")
        return np.asarray(vectors, dtype=np.float64)


class ChatCompletionShim:
    """Adapter for OpenAI-style chat-completion + embedding endpoints.

    Formats describe/similar tasks as chat prompts and parses one item per
    line from the completion; embeddings go through `/embeddings`.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        embedding_model: str,
        auth_token: str | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.embedding_model = embedding_model
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._session = session or requests.Session()
        self._headers = {"Content-Type": "application/json"}
        if auth_token:
            self._headers["Authorization"] = f"Bearer {auth_token}"

    def _post(self, path: str, payload: dict, image_id: str | None = None) -> dict:
        last = None
        for attempt in range(self.retries):
            try:
                resp = self._session.post(
                    f"{self.base_url}{path}",
                    json=payload,
                    headers=self._headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise GenerationError(
            f"chat endpoint failed after {self.retries} attempts: {last}",
            image_id=image_id,
        )

    def _chat(self, prompt: str, image_id: str | None = None) -> str:
        out = self._post(
            "/chat/completions",
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0,
            },
            image_id=image_id,
        )
        try:
            return out["choices"][0]["message"]["content"]
        except (KeyError, IndexError) as exc:
            raise GenerationError(f"malformed chat response: {exc}", image_id)

    def describe_image(self, image_ref: str, exclude_label: str) -> str:
        prompt = (
            f"Describe the distinctive visual content of image {image_ref} "
            f"in one short phrase; do not use the word '{exclude_label}'."
        )
        return self._chat(prompt, image_id=image_ref).strip().splitlines()[0]

    def similar_labels(self, class_name: str, count: int) -> list[str]:
        prompt = (
            f"List {count} object categories that look visually similar to "
            f"'{class_name}' but are different categories. One per line, "
            "no numbering."
        )
        lines = self._chat(prompt).strip().splitlines()
        return [ln.strip(" -*\t") for ln in lines if ln.strip()][:count]

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        out = self._post(
            "/embeddings", {"model": self.embedding_model, "input": list(texts)}
        )
        try:
            data = sorted(out["data"], key=lambda d: d["index"])
            return np.asarray([d["embedding"] for d in data], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise GenerationError(f"malformed embedding response: {exc}")


class ReplayClient:
    """Serves responses verbatim from fixture files keyed by request hash."""

    def __init__(self, fixtures_dir):
        self.fixtures_dir = Path(fixtures_dir)

    def _lookup(self, payload: dict, image_id: str | None = None) -> dict:
        path = self.fixtures_dir / f"{request_key(payload)}.json"
        if not path.exists():
            raise GenerationError(
                f"no fixture for request {payload!r}", image_id=image_id
            )
        return json.loads(path.read_text(encoding="utf-8"))["response"]

    def describe_image(self, image_ref: str, exclude_label: str) -> str:
        out = self._lookup(
            {"task": "describe", "text": image_ref, "exclude": exclude_label},
            image_id=image_ref,
        )
        return out["texts"][0]

    def similar_labels(self, class_name: str, count: int) -> list[str]:
        out = self._lookup({"task": "similar", "text": class_name, "count": count})
        return list(out["texts"])

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        out = self._lookup({"task": "embed", "texts": list(texts)})
        return np.asarray(out["vectors"], dtype=np.float64)


class RecordingClient:
    """Wraps a live client and writes replayable fixtures for each request."""

    def __init__(self, inner: GenerationClient, fixtures_dir):
        self.inner = inner
        self.fixtures_dir = Path(fixtures_dir)
        self.fixtures_dir.mkdir(parents=True, exist_ok=True)

    def _store(self, payload: dict, response: dict) -> None:
        path = self.fixtures_dir / f"{request_key(payload)}.json"
        path.write_text(
            json.dumps({"request": payload, "response": response}, indent=2),
            encoding="utf-8",
        )

    def describe_image(self, image_ref: str, exclude_label: str) -> str:
        text = self.inner.describe_image(image_ref, exclude_label)
        self._store(
            {"task": "describe", "text": image_ref, "exclude": exclude_label},
            {"texts": [text]},
        )
        return text

    def similar_labels(self, class_name: str, count: int) -> list[str]:
        labels = self.inner.similar_labels(class_name, count)
        self._store(
            {"task": "similar", "text": class_name, "count": count},
            {"texts": list(labels)},
        )
        return labels

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        vectors = self.inner.embed_texts(texts)
        self._store(
            {"task": "embed", "texts": list(texts)},
            {"vectors": [list(map(float, row)) for row in vectors]},
        )
        return vectors
