"""Deterministic stand-ins for the encoder and generator services.

Vectors are derived from content hashes so the same input always embeds
to the same vector, on any platform. The generator echoes a prefix of the
prompt, which makes end-to-end assertions about prompt plumbing possible
without any model.

``MockModelServer`` implements both wire protocols over stdlib HTTP and is
used by the test suite and by ``casemem serve --mock``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

ECHO_PREFIX = "ECHO:"
ECHO_CHARS = 40


def hash_vector(payload: bytes, dim: int, namespace: str = "") -> np.ndarray:
    """Map bytes to a stable pseudo-random vector with entries in [-1, 1]."""
    seed = hashlib.sha256(namespace.encode("utf-8") + b"\x00" + payload).digest()
    blocks = []
    counter = 0
    while len(blocks) * 4 < dim:
        h = hashlib.sha256(seed + counter.to_bytes(8, "little")).digest()
        blocks.append(np.frombuffer(h, dtype="<u8"))
        counter += 1
    raw = np.concatenate(blocks)[:dim].astype(np.float64)
    return raw / float(2 ** 63) - 1.0


def text_vector(text: str, dim: int) -> np.ndarray:
    return hash_vector(text.encode("utf-8"), dim, namespace="text")


def image_vector(data: bytes, dim: int) -> np.ndarray:
    return hash_vector(data, dim, namespace="image")


def echo_text(prompt: str) -> str:
    return ECHO_PREFIX + prompt[:ECHO_CHARS]


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # keep test output quiet
        pass

    def _reply(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        server: MockModelServer = self.server.owner  # type: ignore[attr-defined]
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._reply(400, {"error": "invalid JSON"})
            return

        with server.state_lock:
            server.requests.append({"path": self.path, "payload": payload})
            if server.fail_requests > 0:
                server.fail_requests -= 1
                self._reply(503, {"error": "injected failure"})
                return
            delay = server.delay_s
        if delay:
            time.sleep(delay)

        if self.path == "/embed":
            self._reply(200, server.embed_response(payload))
        elif self.path == "/generate":
            self._reply(200, server.generate_response(payload))
        else:
            self._reply(404, {"error": f"unknown route {self.path}"})


class MockModelServer:
    """One process-local HTTP server speaking both service protocols.

    /embed with a non-null image returns {"image_vector", "text_vector"}
    (the multimodal schema); with a null image it returns {"vector", "dim"}
    (the text schema). /generate echoes the prompt prefix unless
    ``generator_reply`` overrides it.

    Knobs for failure-path tests: ``fail_requests`` (next N requests get
    503), ``delay_s`` (per-request latency), ``force_nan`` / ``force_dim``
    (corrupt or resize embed responses).
    """

    def __init__(self, dim_img: int = 16, dim_txt: int = 16,
                 generator_reply=None, host: str = "127.0.0.1", port: int = 0):
        self.dim_img = dim_img
        self.dim_txt = dim_txt
        self.generator_reply = generator_reply
        self.fail_requests = 0
        self.delay_s = 0.0
        self.force_nan = False
        self.force_dim = None
        self.requests: list[dict] = []
        self.state_lock = threading.Lock()
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockModelServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "MockModelServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _maybe_corrupt(self, vec: np.ndarray) -> list:
        if self.force_dim is not None:
            vec = hash_vector(vec.tobytes(), self.force_dim)
        values = vec.tolist()
        if self.force_nan:
            values[0] = float("nan")
        return values

    def embed_response(self, payload: dict) -> dict:
        text = payload.get("text") or ""
        image_b64 = payload.get("image")
        if image_b64 is not None:
            image = base64.b64decode(image_b64)
            return {
                "image_vector": self._maybe_corrupt(image_vector(image, self.dim_img)),
                "text_vector": self._maybe_corrupt(text_vector(text, self.dim_txt)),
            }
        vec = self._maybe_corrupt(text_vector(text, self.dim_txt))
        return {"vector": vec, "dim": len(vec)}

    def generate_response(self, payload: dict) -> dict:
        prompt = payload.get("prompt") or ""
        if self.generator_reply is not None:
            reply = self.generator_reply
            return {"text": reply(prompt) if callable(reply) else reply}
        return {"text": echo_text(prompt)}
