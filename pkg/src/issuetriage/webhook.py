"""Webhook gateway: the only ingress for forge events.

The gateway does as little as possible on the request thread: verify
the HMAC signature over the exact raw bytes, parse just enough to see
whether the event is actionable, and persist it to the durable queue
before acknowledging. Processing happens later, off a worker, so a slow
analyzer can never make the forge time out and redeliver.

Acknowledge-after-persist plus the delivery-id ledger gives at-least-
once intake with replay suppression; the poster's comment audit turns
that into exactly-once feedback.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping

from issuetriage.model import utc_now
from issuetriage.store import IssueStore, QueueFullError, StoreUnavailableError

log = logging.getLogger(__name__)

SIGNATURE_HEADER = "X-Hub-Signature-256"
EVENT_HEADER = "X-GitHub-Event"
DELIVERY_HEADER = "X-GitHub-Delivery"
WEBHOOK_PATH = "/webhook"
DEFAULT_QUEUE_LIMIT = 1000
RETRY_AFTER_SECONDS = 30


def sign_body(secret: str, body: bytes) -> str:
    """Signature header value for a payload: sha256= plus lowercase hex."""
    digest = hmac.new(secret.encode("utf-8"), body, hashlib.sha256).hexdigest()
    return f"sha256={digest}"


def verify_signature(secret: str, body: bytes, header_value: str | None) -> bool:
    """Constant-time check; any malformed header is simply a mismatch."""
    if not header_value or not header_value.startswith("sha256="):
        return False
    provided = header_value[len("sha256=") :]
    if len(provided) != 64:
        return False
    expected = hmac.new(secret.encode("utf-8"), body, hashlib.sha256).hexdigest()
    return hmac.compare_digest(expected, provided.lower())


def is_actionable(event: str, payload: dict) -> bool:
    """Only newly opened issues trigger the pipeline."""
    return event == "issues" and payload.get("action") == "opened"


def handle_webhook(
    store: IssueStore,
    secret: str,
    headers: Mapping[str, str],
    raw: bytes,
    queue_limit: int = DEFAULT_QUEUE_LIMIT,
    notify: Callable[[], None] | None = None,
) -> tuple[int, dict]:
    """Full gateway decision for one request: (http status, response body).

    Kept free of HTTP plumbing so tests can drive it directly; nothing
    is acknowledged with 202 "accepted" until the delivery is durable.
    """
    lowered = {k.lower(): v for k, v in headers.items()}
    if not verify_signature(secret, raw, lowered.get(SIGNATURE_HEADER.lower())):
        return (401, {"status": "rejected", "reason": "bad signature"})
    delivery_id = lowered.get(DELIVERY_HEADER.lower())
    event = lowered.get(EVENT_HEADER.lower(), "")
    if not delivery_id:
        return (400, {"status": "bad-request", "reason": "missing delivery id"})
    try:
        payload = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return (400, {"status": "bad-request", "reason": "body is not JSON"})
    if not isinstance(payload, dict) or not is_actionable(event, payload):
        return (202, {"status": "ignored"})
    try:
        queue_id = store.accept_delivery(delivery_id, event, raw, utc_now(), limit=queue_limit)
    except QueueFullError:
        return (503, {"status": "queue-full"})
    except StoreUnavailableError as exc:
        log.error("gateway could not persist delivery %s: %s", delivery_id, exc)
        return (503, {"status": "store-unavailable"})
    if queue_id is None:
        # Same delivery id seen before: already queued or already done.
        return (202, {"status": "duplicate"})
    if notify is not None:
        notify()
    return (202, {"status": "accepted"})


class _Handler(BaseHTTPRequestHandler):
    server: "GatewayServer"  # set by ThreadingHTTPServer machinery

    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args: object) -> None:
        log.debug("gateway: " + format, *args)

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        if status == 503:
            # Both overload answers (queue-full, store-unavailable) are
            # transient; tell the forge when to redeliver.
            self.send_header("Retry-After", str(RETRY_AFTER_SECONDS))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        if self.path == "/healthz":
            self._reply(200, {"status": "ok"})
        else:
            self._reply(404, {"status": "not-found"})

    def do_POST(self) -> None:
        if self.path != WEBHOOK_PATH:
            self._reply(404, {"status": "not-found"})
            return
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        status, payload = handle_webhook(
            self.server.store,
            self.server.secret,
            dict(self.headers.items()),
            raw,
            queue_limit=self.server.queue_limit,
            notify=self.server.notify,
        )
        self._reply(status, payload)


class GatewayServer(ThreadingHTTPServer):
    """HTTP server bound to loopback unless told otherwise."""

    daemon_threads = True

    def __init__(
        self,
        store: IssueStore,
        secret: str,
        host: str = "127.0.0.1",
        port: int = 0,
        queue_limit: int = DEFAULT_QUEUE_LIMIT,
        on_accept: Callable[[], None] | None = None,
    ) -> None:
        super().__init__((host, port), _Handler)
        self.store = store
        self.secret = secret
        self.queue_limit = queue_limit
        self._on_accept = on_accept
        self._thread: threading.Thread | None = None

    def notify(self) -> None:
        if self._on_accept is not None:
            self._on_accept()

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True, name="gateway")
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.server_close()
