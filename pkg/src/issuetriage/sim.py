"""An in-memory forge for tests and demos.

The simulator plays both forge roles: it answers the REST routes the
client uses (repos, issues, trees, labels, comments) and it emits
signed webhook deliveries at the gateway like the real thing. One
implementation serves two transports: direct in-process calls, and a
real loopback HTTP server for end-to-end runs.

A scripted fault list injects failures exactly where a test wants
them: rate limits, server errors, dropped connections on API calls,
and duplicate webhook deliveries on emission. Faults are consumed in
script order, each a fixed number of times.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping
from urllib.parse import parse_qsl, unquote, urlparse

import requests

from issuetriage.forge import DEFAULT_WEB_BASE, ForgeConnectionError
from issuetriage.model import utc_now
from issuetriage.webhook import DELIVERY_HEADER, EVENT_HEADER, SIGNATURE_HEADER, sign_body

log = logging.getLogger(__name__)

FAULT_BEHAVIORS = ("status-429", "status-500", "drop-connection", "deliver-duplicate")


class SimConnectionDrop(Exception):
    """Raised inside the simulator to model a connection cut mid-request."""


@dataclass
class SimFault:
    match: str  # substring of "METHOD /path" or "EMIT <event>"
    behavior: str
    times: int = 1

    def __post_init__(self) -> None:
        if self.behavior not in FAULT_BEHAVIORS:
            raise ValueError(f"unknown fault behavior: {self.behavior}")
        if self.times < 1:
            raise ValueError("times must be >= 1")


@dataclass
class SimDelivery:
    delivery_id: str
    event: str
    headers: dict[str, str]
    body: bytes
    responses: list[int] = field(default_factory=list)


@dataclass
class _SimRepo:
    owner: str
    name: str
    default_branch: str = "main"
    files: list[str] = field(default_factory=list)
    labels: dict[str, str] = field(default_factory=dict)
    issues: dict[int, dict] = field(default_factory=dict)
    comments: dict[int, list[dict]] = field(default_factory=dict)
    next_issue: int = 1
    next_comment: int = 1


def _json_response(status: int, payload: object) -> tuple[int, dict[str, str], bytes]:
    return (status, {"Content-Type": "application/json"}, json.dumps(payload).encode("utf-8"))


class SimForge:
    """State and behavior of the fake forge. Thread-safe."""

    def __init__(
        self,
        token: str = "sim-token",
        webhook_secret: str = "sim-secret",
        web_base: str = DEFAULT_WEB_BASE,
    ) -> None:
        self.token = token
        self.webhook_secret = webhook_secret
        self.web_base = web_base.rstrip("/")
        self._lock = threading.RLock()
        self._repos: dict[str, _SimRepo] = {}
        self._faults: list[SimFault] = []
        self._target: object | None = None
        self._delivery_seq = 0
        self.api_calls: list[tuple[str, str]] = []
        self.deliveries: list[SimDelivery] = []

    # -- seeding ---------------------------------------------------------

    def create_repo(
        self,
        owner: str,
        name: str,
        files: list[str] | None = None,
        default_branch: str = "main",
    ) -> None:
        with self._lock:
            key = f"{owner}/{name}".lower()
            if key in self._repos:
                raise ValueError(f"repo exists: {key}")
            self._repos[key] = _SimRepo(
                owner=owner, name=name, default_branch=default_branch, files=list(files or [])
            )

    def set_files(self, owner: str, name: str, files: list[str]) -> None:
        with self._lock:
            self._repo(owner, name).files = list(files)

    def _repo(self, owner: str, name: str) -> _SimRepo:
        repo = self._repos.get(f"{owner}/{name}".lower())
        if repo is None:
            raise KeyError(f"no such sim repo: {owner}/{name}")
        return repo

    def _issue_payload(self, repo: _SimRepo, issue: dict) -> dict:
        return {
            "number": issue["number"],
            "title": issue["title"],
            "body": issue["body"],
            "state": issue["state"],
            "labels": [{"name": label} for label in sorted(issue["labels"])],
            "html_url": issue["html_url"],
            "created_at": issue["created_at"],
        }

    def seed_issue(
        self,
        owner: str,
        name: str,
        title: str,
        body: str = "",
        state: str = "open",
        created_at: str | None = None,
        labels: tuple[str, ...] = (),
    ) -> int:
        """Add historical data directly; no webhook is emitted."""
        with self._lock:
            repo = self._repo(owner, name)
            number = repo.next_issue
            repo.next_issue += 1
            repo.issues[number] = {
                "number": number,
                "title": title,
                "body": body,
                "state": state,
                "labels": set(labels),
                "html_url": f"{self.web_base}/{owner}/{name}/issues/{number}",
                "created_at": created_at or utc_now().isoformat(),
            }
            repo.comments.setdefault(number, [])
            return number

    # -- webhook emission --------------------------------------------------

    def register_webhook(self, target: object) -> None:
        """Target: an http(s) URL, or a callable(headers, body) -> status."""
        self._target = target

    def open_issue(
        self, owner: str, name: str, title: str, body: str = ""
    ) -> tuple[int, list[int]]:
        """Create a new open issue and deliver the signed webhook event."""
        number = self.seed_issue(owner, name, title, body=body, state="open")
        with self._lock:
            repo = self._repo(owner, name)
            issue = repo.issues[number]
            payload = {
                "action": "opened",
                "issue": self._issue_payload(repo, issue),
                "repository": {
                    "name": repo.name,
                    "owner": {"login": repo.owner},
                    "default_branch": repo.default_branch,
                },
            }
        statuses = self.emit("issues", payload)
        return (number, statuses)

    def emit(self, event: str, payload: dict) -> list[int]:
        """Deliver one signed event, honoring emission faults."""
        with self._lock:
            self._delivery_seq += 1
            delivery_id = f"sim-delivery-{self._delivery_seq:06d}"
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        headers = {
            "Content-Type": "application/json",
            EVENT_HEADER: event,
            DELIVERY_HEADER: delivery_id,
            SIGNATURE_HEADER: sign_body(self.webhook_secret, body),
        }
        record = SimDelivery(delivery_id=delivery_id, event=event, headers=headers, body=body)
        with self._lock:
            self.deliveries.append(record)
        sends = 1
        fault = self._take_fault(f"EMIT {event}")
        if fault is not None and fault.behavior == "deliver-duplicate":
            sends = 2
        for _ in range(sends):
            record.responses.append(self._send(record))
        return list(record.responses)

    def redeliver(self, delivery: SimDelivery | None = None, times: int = 1) -> list[int]:
        """Send a past delivery again, byte for byte, same delivery id."""
        with self._lock:
            if delivery is None:
                if not self.deliveries:
                    raise ValueError("nothing delivered yet")
                delivery = self.deliveries[-1]
        statuses = []
        for _ in range(times):
            status = self._send(delivery)
            delivery.responses.append(status)
            statuses.append(status)
        return statuses

    def _send(self, record: SimDelivery) -> int:
        target = self._target
        if target is None:
            raise RuntimeError("no webhook target registered")
        if callable(target):
            return int(target(dict(record.headers), record.body))
        response = requests.post(
            str(target), data=record.body, headers=record.headers, timeout=10
        )
        return response.status_code

    # -- fault injection ---------------------------------------------------

    def script_fault(self, match: str, behavior: str, times: int = 1) -> None:
        with self._lock:
            self._faults.append(SimFault(match=match, behavior=behavior, times=times))

    def _take_fault(self, key: str) -> SimFault | None:
        with self._lock:
            for fault in self._faults:
                if fault.times > 0 and fault.match in key:
                    fault.times -= 1
                    return fault
        return None

    # -- the REST API --------------------------------------------------------

    def handle_api(
        self,
        method: str,
        path: str,
        query: Mapping[str, str],
        headers: Mapping[str, str],
        body: bytes | None,
    ) -> tuple[int, dict[str, str], bytes]:
        method = method.upper()
        with self._lock:
            self.api_calls.append((method, path))
        fault = self._take_fault(f"{method} {path}")
        if fault is not None:
            if fault.behavior == "status-429":
                return _json_response(429, {"message": "rate limited"})
            if fault.behavior == "status-500":
                return _json_response(500, {"message": "server error"})
            if fault.behavior == "drop-connection":
                raise SimConnectionDrop(f"{method} {path}")
        lowered = {k.lower(): v for k, v in headers.items()}
        if lowered.get("authorization") != f"token {self.token}":
            return _json_response(401, {"message": "bad credentials"})
        parts = [unquote(p) for p in path.strip("/").split("/")]
        try:
            with self._lock:
                return self._route(method, parts, dict(query), body)
        except KeyError:
            return _json_response(404, {"message": "not found"})

    def _route(
        self, method: str, parts: list[str], query: dict[str, str], body: bytes | None
    ) -> tuple[int, dict[str, str], bytes]:
        if len(parts) < 3 or parts[0] != "repos":
            return _json_response(404, {"message": "not found"})
        repo = self._repo(parts[1], parts[2])
        rest = parts[3:]
        payload = json.loads(body.decode("utf-8")) if body else {}

        if not rest and method == "GET":
            return _json_response(
                200,
                {
                    "name": repo.name,
                    "owner": {"login": repo.owner},
                    "default_branch": repo.default_branch,
                },
            )

        if rest == ["issues"] and method == "GET":
            state = query.get("state", "open")
            page = int(query.get("page", "1"))
            per_page = int(query.get("per_page", "30"))
            issues = [repo.issues[n] for n in sorted(repo.issues)]
            if state != "all":
                issues = [i for i in issues if i["state"] == state]
            window = issues[(page - 1) * per_page : page * per_page]
            return _json_response(200, [self._issue_payload(repo, i) for i in window])

        if len(rest) == 3 and rest[0] == "git" and rest[1] == "trees" and method == "GET":
            if rest[2] != repo.default_branch:
                return _json_response(404, {"message": f"no ref {rest[2]}"})
            tree = [{"path": p, "type": "blob"} for p in sorted(repo.files)]
            return _json_response(200, {"tree": tree, "truncated": False})

        if rest == ["labels"] and method == "POST":
            name = str(payload["name"])
            if name in repo.labels:
                return _json_response(422, {"message": "already_exists"})
            repo.labels[name] = str(payload.get("color", "ededed"))
            return _json_response(201, {"name": name, "color": repo.labels[name]})

        if len(rest) == 2 and rest[0] == "labels" and method == "GET":
            color = repo.labels.get(rest[1])
            if color is None:
                return _json_response(404, {"message": "not found"})
            return _json_response(200, {"name": rest[1], "color": color})

        if len(rest) == 3 and rest[0] == "issues" and rest[2] == "labels" and method == "POST":
            issue = repo.issues[int(rest[1])]
            names = [str(n) for n in payload.get("labels", [])]
            undefined = sorted(set(names) - set(repo.labels))
            if undefined:
                return _json_response(422, {"message": f"labels not defined: {undefined}"})
            issue["labels"] = set(issue["labels"]) | set(names)
            return _json_response(
                200, [{"name": n} for n in sorted(issue["labels"])]
            )

        if len(rest) == 3 and rest[0] == "issues" and rest[2] == "comments":
            number = int(rest[1])
            if number not in repo.issues:
                return _json_response(404, {"message": "not found"})
            issue_comments = repo.comments.setdefault(number, [])
            if method == "POST":
                comment = {"id": repo.next_comment, "body": str(payload["body"])}
                repo.next_comment += 1
                issue_comments.append(comment)
                return _json_response(201, comment)
            if method == "GET":
                page = int(query.get("page", "1"))
                per_page = int(query.get("per_page", "30"))
                window = issue_comments[(page - 1) * per_page : page * per_page]
                return _json_response(200, window)

        return _json_response(404, {"message": "not found"})

    # -- inspection helpers for tests ---------------------------------------

    def labels_on(self, owner: str, name: str, number: int) -> set[str]:
        with self._lock:
            return set(self._repo(owner, name).issues[number]["labels"])

    def comments_on(self, owner: str, name: str, number: int) -> list[str]:
        with self._lock:
            return [c["body"] for c in self._repo(owner, name).comments.get(number, [])]

    def issue_count(self, owner: str, name: str) -> int:
        with self._lock:
            return len(self._repo(owner, name).issues)

    def feedback_snapshot(self, owner: str, name: str, number: int) -> dict:
        """Labels plus comment bodies for one issue, for assertions."""
        with self._lock:
            repo = self._repo(owner, name)
            return {
                "labels": sorted(repo.issues[number]["labels"]),
                "comments": [c["body"] for c in repo.comments.get(number, [])],
            }


class InProcessTransport:
    """Transport that calls the simulator directly, no sockets involved."""

    def __init__(self, sim: SimForge) -> None:
        self._sim = sim

    def request(
        self,
        method: str,
        path: str,
        query: Mapping[str, str],
        headers: Mapping[str, str],
        body: bytes | None,
    ) -> tuple[int, Mapping[str, str], bytes]:
        try:
            return self._sim.handle_api(method, path, query, headers, body)
        except SimConnectionDrop as exc:
            raise ForgeConnectionError(str(exc)) from exc


class _SimHandler(BaseHTTPRequestHandler):
    server: "SimServer"

    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args: object) -> None:
        log.debug("sim: " + format, *args)

    def _handle(self, method: str) -> None:
        parsed = urlparse(self.path)
        query = dict(parse_qsl(parsed.query))
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else None
        try:
            status, headers, content = self.server.sim.handle_api(
                method, parsed.path, query, dict(self.headers.items()), body
            )
        except SimConnectionDrop:
            # Cut the connection without an HTTP response.
            self.close_connection = True
            return
        self.send_response(status)
        for key, value in headers.items():
            self.send_header(key, value)
        self.send_header("Content-Length", str(len(content)))
        self.end_headers()
        self.wfile.write(content)

    def do_GET(self) -> None:
        self._handle("GET")

    def do_POST(self) -> None:
        self._handle("POST")


class SimServer(ThreadingHTTPServer):
    """The simulator behind a real loopback HTTP listener."""

    daemon_threads = True

    def __init__(self, sim: SimForge, host: str = "127.0.0.1", port: int = 0) -> None:
        super().__init__((host, port), _SimHandler)
        self.sim = sim
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True, name="sim-forge")
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.server_close()
