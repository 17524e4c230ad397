"""Chat-completion client with a hard in-flight bound and retry with backoff.

Wire format (POST ``{base_url}/chat/completions``)::

    {"model": "<model_name>", "temperature": 0,
     "messages": [{"role": "user", "content": [
         {"type": "text", "text": "<prompt>"},
         {"type": "image_url", "image_url": {"url": "data:image/svg+xml;base64,<...>"}}]}]}

The reply text is read from ``choices[0].message.content``.  A bearer token
is sent when the environment variable named by ``api_key_env`` is set.
"""
from __future__ import annotations

import base64
import configparser
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import httpx

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "DIAGCAP_API_KEY"

_MEDIA_TYPES = {".svg": "image/svg+xml", ".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}


class EndpointConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str = "mock-model"
    timeout_s: float = 60.0
    max_in_flight: int = 4
    retries: int = 3
    backoff_s: float = 0.5
    api_key_env: str = DEFAULT_API_KEY_ENV

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise EndpointConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.timeout_s <= 0:
            raise EndpointConfigError(f"timeout_s must be > 0, got {self.timeout_s}")
        if self.retries < 0 or self.backoff_s < 0:
            raise EndpointConfigError("retries and backoff_s must be non-negative")
        if not self.base_url.startswith(("http://", "https://")):
            raise EndpointConfigError(f"base_url must be an http(s) URL, got {self.base_url!r}")

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) or None


_ENDPOINT_KEYS = {
    "base_url": str, "model_name": str, "timeout_s": float, "max_in_flight": int,
    "retries": int, "backoff_s": float, "api_key_env": str,
}


def load_endpoint_config(source: str) -> EndpointConfig:
    """Accept a bare URL or the path of an INI file with an ``[endpoint]`` section."""
    if source.startswith(("http://", "https://")):
        return EndpointConfig(base_url=source.rstrip("/"))
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(Path(source).read_text(encoding="utf-8"), source=source)
    except OSError as exc:
        raise EndpointConfigError(f"{source}: {exc.strerror or exc}") from None
    except configparser.Error as exc:
        raise EndpointConfigError(f"{source}: {exc}") from None
    if not parser.has_section("endpoint"):
        raise EndpointConfigError(f"{source}: missing [endpoint] section")
    values = {}
    for key, raw in parser.items("endpoint"):
        if key == "api_key":
            raise EndpointConfigError(f"{source}: api keys are read from the environment only; "
                                      f"set api_key_env instead")
        if key not in _ENDPOINT_KEYS:
            raise EndpointConfigError(f"{source}: unknown [endpoint] key {key!r}")
        try:
            values[key] = _ENDPOINT_KEYS[key](raw.strip())
        except ValueError:
            raise EndpointConfigError(f"{source}: {key}: bad value {raw!r}") from None
    if "base_url" not in values:
        raise EndpointConfigError(f"{source}: [endpoint] needs base_url")
    values["base_url"] = values["base_url"].rstrip("/")
    return EndpointConfig(**values)


def image_data_url(path: str | Path) -> str:
    path = Path(path)
    media = _MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream")
    return f"data:{media};base64," + base64.b64encode(path.read_bytes()).decode("ascii")


def chat_payload(model: str, prompt: str, image_url: str) -> dict:
    return {
        "model": model,
        "temperature": 0,
        "messages": [{"role": "user", "content": [
            {"type": "text", "text": prompt},
            {"type": "image_url", "image_url": {"url": image_url}},
        ]}],
    }


@dataclass(frozen=True)
class QueryTask:
    item_id: str
    prompt: str
    image_path: Path


@dataclass(frozen=True)
class QueryResult:
    item_id: str
    ok: bool
    text: str | None
    error: str | None
    attempts: int


class _Retryable(Exception):
    pass


class ChatClient:
    def __init__(self, cfg: EndpointConfig, sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._http = httpx.Client(
            timeout=cfg.timeout_s,
            headers=headers,
            limits=httpx.Limits(max_connections=cfg.max_in_flight, max_keepalive_connections=cfg.max_in_flight),
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _once(self, payload: dict) -> str:
        try:
            resp = self._http.post(f"{self.cfg.base_url}/chat/completions", json=payload)
        except httpx.TransportError as exc:
            raise _Retryable(f"{type(exc).__name__}: {exc}") from None
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Retryable(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise RuntimeError(f"malformed completion response: {resp.text[:200]}") from None
        if isinstance(content, list):  # content-part form
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        if not isinstance(content, str):
            raise RuntimeError("completion content is not text")
        return content

    def ask(self, task: QueryTask) -> QueryResult:
        try:
            payload = chat_payload(self.cfg.model_name, task.prompt, image_data_url(task.image_path))
        except OSError as exc:
            return QueryResult(task.item_id, False, None, f"cannot read image: {exc}", 0)
        last = ""
        for attempt in range(1, self.cfg.retries + 2):
            try:
                return QueryResult(task.item_id, True, self._once(payload), None, attempt)
            except _Retryable as exc:
                last = str(exc)
                if attempt <= self.cfg.retries:
                    delay = self.cfg.backoff_s * 2 ** (attempt - 1)
                    log.debug("%s: %s, retrying in %.2fs", task.item_id, last, delay)
                    self._sleep(delay)
            except RuntimeError as exc:
                return QueryResult(task.item_id, False, None, str(exc), attempt)
        return QueryResult(task.item_id, False, None, f"gave up after {self.cfg.retries + 1} attempts: {last}",
                           self.cfg.retries + 1)


def run_queries(client: ChatClient, tasks: Iterable[QueryTask]) -> Iterator[QueryResult]:
    """Yield results in completion order; at most ``max_in_flight`` requests are outstanding."""
    with ThreadPoolExecutor(max_workers=client.cfg.max_in_flight) as pool:
        futures = [pool.submit(client.ask, t) for t in tasks]
        for fut in as_completed(futures):
            yield fut.result()
