"""Local chat-completion endpoint for tests and offline demos.

The server answers with whatever a *responder* callable returns for the
parsed request body, and records the peak number of concurrent requests.
"""
from __future__ import annotations

import base64
import hashlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable

from .vqa import AnswerKey, read_questions

Responder = Callable[[dict], str]


def request_parts(body: dict) -> tuple[str, bytes]:
    """Return (prompt text, decoded image bytes) of a chat request."""
    text, image = "", b""
    for msg in body.get("messages", []):
        content = msg.get("content")
        if isinstance(content, str):
            text += content
            continue
        for part in content or []:
            if part.get("type") == "text":
                text += part.get("text", "")
            elif part.get("type") == "image_url":
                url = part.get("image_url", {}).get("url", "")
                if ";base64," in url:
                    image = base64.b64decode(url.split(";base64,", 1)[1])
    return text, image


class MockEndpoint:
    """Threaded HTTP server on 127.0.0.1; use as a context manager."""

    def __init__(self, responder: Responder, delay_s: float = 0.0, fail_first: int = 0, status_on_fail: int = 503):
        self.responder = responder
        self.delay_s = delay_s
        self.fail_first = fail_first
        self.status_on_fail = status_on_fail
        self.requests = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self.seen_auth: set[str] = set()
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler_class())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def _handler_class(self):
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):  # keep test output quiet
                pass

            def _reply(self, status: int, payload: dict) -> None:
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_POST(self):
                with endpoint._lock:
                    endpoint.requests += 1
                    n = endpoint.requests
                    endpoint.in_flight += 1
                    endpoint.max_in_flight = max(endpoint.max_in_flight, endpoint.in_flight)
                    endpoint.seen_auth.add(self.headers.get("Authorization", ""))
                try:
                    body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                    if endpoint.delay_s:
                        time.sleep(endpoint.delay_s)
                    if not self.path.endswith("/chat/completions"):
                        self._reply(404, {"error": "not found"})
                    elif n <= endpoint.fail_first:
                        self._reply(endpoint.status_on_fail, {"error": "injected failure"})
                    else:
                        text = endpoint.responder(body)
                        self._reply(200, {"object": "chat.completion", "model": body.get("model"),
                                          "choices": [{"index": 0, "message": {"role": "assistant",
                                                                               "content": text}}]})
                finally:
                    with endpoint._lock:
                        endpoint.in_flight -= 1

        return Handler

    def start(self) -> "MockEndpoint":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "MockEndpoint":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def oracle_responder(corpus_dir: str | Path) -> Responder:
    """Answer with the ground-truth caption or answer key, looked up by (image, prompt)."""
    corpus_dir = Path(corpus_dir)
    captions: dict[str, str] = {}
    for svg in sorted((corpus_dir / "images").glob("*.svg")):
        text = (corpus_dir / "captions" / f"{svg.stem}.txt").read_text(encoding="utf-8").rstrip("\n")
        captions[hashlib.sha256(svg.read_bytes()).hexdigest()] = text
    key = AnswerKey.load(corpus_dir / "answer_key.json")
    answers: dict[tuple[str, str], str] = {}
    for item in read_questions(corpus_dir / "questions.jsonl", key):
        digest = hashlib.sha256((corpus_dir / "images" / f"{item.diagram_id}.svg").read_bytes()).hexdigest()
        answers[(digest, item.prompt())] = "Answer: " + ", ".join(sorted(item.correct))

    def respond(body: dict) -> str:
        prompt, image = request_parts(body)
        digest = hashlib.sha256(image).hexdigest()
        return answers.get((digest, prompt)) or captions.get(digest, "")

    return respond


def constant_responder(text: str) -> Responder:
    return lambda body: text
