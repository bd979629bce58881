"""Completion backends: an OpenAI-compatible chat client and a replay fixture.

Replay fixtures are JSON lines ``{"role", "prompt_digest", "sample_index",
"completion"}`` where ``prompt_digest`` is the SHA-256 hex digest of the
UTF-8 encoded user prompt.  :class:`RecordingBackend` captures any backend's
traffic in that format so a live run can be replayed exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import httpx

from ..errors import BackendError, ConfigError, FixtureMissError

log = logging.getLogger(__name__)

RETRY_STATUS = {429, 500, 502, 503, 504}


class BackendKind(str, Enum):
    HTTP_CHAT = "HttpChat"
    REPLAY = "Replay"


@dataclass(frozen=True)
class SamplingParams:
    temperature: float | None = None
    top_p: float | None = None
    max_tokens: int | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class BackendSpec:
    kind: BackendKind
    endpoint: str | None = None
    model: str | None = None
    sampling: SamplingParams = field(default_factory=SamplingParams)
    credential_env_var: str | None = "OPENAI_API_KEY"
    replay_fixture: str | None = None
    max_retries: int = 4
    timeout_s: float = 120.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.kind is BackendKind.HTTP_CHAT and not (self.endpoint and self.model):
            raise ConfigError("HttpChat backends need both endpoint and model")
        if self.kind is BackendKind.REPLAY and not self.replay_fixture:
            raise ConfigError("Replay backends need replay_fixture")

    def to_dict(self) -> dict:
        # Never includes credential values, only the variable name.
        return {
            "kind": self.kind.value,
            "endpoint": self.endpoint,
            "model": self.model,
            "sampling": self.sampling.to_dict(),
            "credential_env_var": self.credential_env_var,
            "replay_fixture": self.replay_fixture,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "BackendSpec":
        data = dict(data)
        if "api_key" in data or "credential" in data:
            raise ConfigError("credentials must come from the environment, not the config file")
        sampling = SamplingParams(**data.pop("sampling", {}))
        fixture = data.pop("replay_fixture", None)
        if fixture and base_dir is not None and not os.path.isabs(fixture):
            fixture = str(base_dir / fixture)
        try:
            return cls(sampling=sampling, replay_fixture=fixture, **data)
        except TypeError as exc:
            raise ConfigError(f"bad backend spec: {exc}") from exc

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def system_message(role: str) -> str:
    return f"You are the {role} agent in a multi-agent code generation system."


class ReplayBackend:
    def __init__(self, entries: dict[tuple[str, str, int], str], source: str = "<memory>"):
        self.entries = entries
        self.source = source

    @classmethod
    def load(cls, path) -> "ReplayBackend":
        entries: dict[tuple[str, str, int], str] = {}
        try:
            fh = open(path, encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot open replay fixture {path}: {exc}") from exc
        with fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    key = (row["role"], row["prompt_digest"], int(row["sample_index"]))
                    completion = row["completion"]
                except (ValueError, KeyError, TypeError) as exc:
                    raise ConfigError(f"{path}:{lineno}: malformed replay entry ({exc})") from exc
                if key in entries:
                    raise ConfigError(f"{path}:{lineno}: duplicate replay key {key}")
                entries[key] = completion
        return cls(entries, str(path))

    def complete(self, role: str, prompt: str, n: int, seed: int | None = None,
                 start_index: int = 0) -> list[str]:
        digest = prompt_digest(prompt)
        out = []
        for i in range(start_index, start_index + n):
            try:
                out.append(self.entries[(role, digest, i)])
            except KeyError:
                raise FixtureMissError(role, digest, i) from None
        return out


class HttpChatBackend:
    """Chat-completions client with bounded exponential backoff on 429 and 5xx."""

    def __init__(self, spec: BackendSpec, client: httpx.Client | None = None, sleep=time.sleep):
        self.spec = spec
        self.client = client or httpx.Client(timeout=spec.timeout_s)
        self.sleep = sleep

    @property
    def url(self) -> str:
        endpoint = self.spec.endpoint.rstrip("/")
        return endpoint if endpoint.endswith("/chat/completions") else endpoint + "/chat/completions"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        var = self.spec.credential_env_var
        if var and os.environ.get(var):
            headers["Authorization"] = f"Bearer {os.environ[var]}"
        return headers

    def _post(self, body: dict) -> dict:
        last_error = None
        for attempt in range(self.spec.max_retries + 1):
            try:
                resp = self.client.post(self.url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = exc
            else:
                if resp.status_code in RETRY_STATUS:
                    last_error = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                elif resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise BackendError(f"malformed response body: {exc}") from exc
            if attempt < self.spec.max_retries:
                delay = 0.5 * 2 ** attempt
                log.warning("chat request failed (%s); retrying in %.1fs", last_error, delay)
                self.sleep(delay)
        raise BackendError(f"chat request failed after {self.spec.max_retries + 1} attempts: {last_error}")

    def complete(self, role: str, prompt: str, n: int, seed: int | None = None,
                 start_index: int = 0) -> list[str]:
        out: list[str] = []
        seed = self.spec.sampling.seed if seed is None else seed
        while len(out) < n:
            body = {
                "model": self.spec.model,
                "messages": [
                    {"role": "system", "content": system_message(role)},
                    {"role": "user", "content": prompt},
                ],
                "n": n - len(out),
                **self.spec.sampling.to_dict(),
            }
            if seed is not None:
                body["seed"] = seed + start_index + len(out)
            data = self._post(body)
            try:
                texts = [choice["message"]["content"] or "" for choice in data["choices"]]
            except (KeyError, TypeError) as exc:
                raise BackendError(f"malformed chat response: missing {exc}") from exc
            if not texts:
                raise BackendError("chat response contained no choices")
            out.extend(texts)
        return out[:n]


class RecordingBackend:
    """Wraps a backend and remembers every completion as a replay entry."""

    def __init__(self, inner):
        self.inner = inner
        self.entries: dict[tuple[str, str, int], str] = {}

    def complete(self, role, prompt, n, seed=None, start_index=0):
        texts = self.inner.complete(role, prompt, n, seed, start_index)
        digest = prompt_digest(prompt)
        for i, text in enumerate(texts, start_index):
            self.entries[(role, digest, i)] = text
        return texts

    def dump(self, path) -> int:
        rows = sorted(self.entries.items())
        with open(path, "w", encoding="utf-8") as fh:
            for (role, digest, index), completion in rows:
                fh.write(json.dumps({"role": role, "prompt_digest": digest, "sample_index": index,
                                     "completion": completion}, ensure_ascii=False) + "\n")
        return len(rows)


def make_backend(spec: BackendSpec):
    if spec.kind is BackendKind.REPLAY:
        return ReplayBackend.load(spec.replay_fixture)
    return HttpChatBackend(spec)


def complete(backend, role: str, prompt: str, n: int, seed: int | None = None,
             start_index: int = 0) -> list[str]:
    """Draw ``n`` completions for ``prompt``; sample indices start at ``start_index``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    texts = backend.complete(role, prompt, n, seed, start_index)
    if len(texts) != n:
        raise BackendError(f"backend returned {len(texts)} completions, expected {n}")
    return texts
