"""Client for the forge's REST API.

The client speaks GitHub-shaped routes through a Transport, which is
either real HTTP (requests) or a direct in-process call into a fake
forge. Everything above the transport line, pagination, retries,
payload parsing, is identical in production and in tests.

Retriable conditions (connection failures, 403/429 rate limiting, 5xx)
back off exponentially: 1s doubling to a 60s cap, six attempts by
default. The sleeper is injectable so tests run the real policy without
waiting.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Mapping, Protocol

import requests

from issuetriage.model import CodeFileRef, IssueRecord, RepoRef, parse_timestamp

DEFAULT_WEB_BASE = "https://forge.example"
DEFAULT_PAGE_SIZE = 100  # the forge maximum
MAX_PAGE_SIZE = 100
# 403 doubles as the rate-limit status on the big forges, so it backs off
# like 429 instead of failing fast.
_RETRIABLE_STATUSES = frozenset({403, 429, 500, 502, 503})


class ForgeError(Exception):
    pass


class ForgeConnectionError(ForgeError):
    """The transport could not complete the exchange at all."""


class ForgeApiError(ForgeError):
    def __init__(self, status: int, path: str, message: str) -> None:
        super().__init__(f"{status} on {path}: {message}")
        self.status = status
        self.path = path


class ForgeUnavailableError(ForgeError):
    """Every retry attempt failed; the caller may try again later."""


class Transport(Protocol):
    def request(
        self,
        method: str,
        path: str,
        query: Mapping[str, str],
        headers: Mapping[str, str],
        body: bytes | None,
    ) -> tuple[int, Mapping[str, str], bytes]: ...


class HttpTransport:
    def __init__(self, base_url: str, session: requests.Session | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self._session = session or requests.Session()

    def request(
        self,
        method: str,
        path: str,
        query: Mapping[str, str],
        headers: Mapping[str, str],
        body: bytes | None,
    ) -> tuple[int, Mapping[str, str], bytes]:
        try:
            response = self._session.request(
                method,
                self.base_url + path,
                params=dict(query),
                headers=dict(headers),
                data=body,
                timeout=30,
            )
        except requests.RequestException as exc:
            raise ForgeConnectionError(str(exc)) from exc
        return (response.status_code, dict(response.headers), response.content)


@dataclass(frozen=True)
class RetryPolicy:
    initial_delay: float = 1.0
    multiplier: float = 2.0
    max_delay: float = 60.0
    max_attempts: int = 6

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.initial_delay <= 0 or self.multiplier < 1 or self.max_delay < self.initial_delay:
            raise ValueError("bad retry policy")


def parse_issue(payload: Mapping[str, Any], repo: RepoRef) -> IssueRecord:
    labels = []
    for label in payload.get("labels", ()):
        labels.append(label["name"] if isinstance(label, Mapping) else str(label))
    return IssueRecord(
        repo=repo,
        number=int(payload["number"]),
        title=str(payload.get("title", "")),
        body=str(payload.get("body") or ""),
        state=str(payload.get("state", "open")),
        labels=frozenset(labels),
        url=str(payload.get("html_url") or payload.get("url") or ""),
        created_at=parse_timestamp(str(payload["created_at"])),
        indexed_at=parse_timestamp(str(payload["created_at"])),
    )


class ForgeClient:
    def __init__(
        self,
        transport: Transport,
        token: str,
        retry: RetryPolicy = RetryPolicy(),
        sleeper: Callable[[float], None] = time.sleep,
        web_base: str = DEFAULT_WEB_BASE,
    ) -> None:
        self._transport = transport
        self._token = token
        self._retry = retry
        self._sleep = sleeper
        self.web_base = web_base.rstrip("/")

    def _headers(self) -> dict[str, str]:
        return {
            "Authorization": f"token {self._token}",
            "Accept": "application/json",
            "Content-Type": "application/json",
        }

    def _request(
        self,
        method: str,
        path: str,
        query: Mapping[str, str] | None = None,
        payload: Any | None = None,
        none_on_404: bool = False,
    ) -> Any:
        body = None if payload is None else json.dumps(payload).encode("utf-8")
        delay = self._retry.initial_delay
        attempt = 1
        while True:
            failure: str
            try:
                status, _headers, content = self._transport.request(
                    method, path, query or {}, self._headers(), body
                )
            except ForgeConnectionError as exc:
                failure = f"connection error: {exc}"
            else:
                if 200 <= status < 300:
                    if not content:
                        return None
                    return json.loads(content.decode("utf-8"))
                if status == 404 and none_on_404:
                    return None
                if status not in _RETRIABLE_STATUSES:
                    raise ForgeApiError(status, path, content.decode("utf-8", "replace")[:200])
                failure = f"status {status}"
            if attempt >= self._retry.max_attempts:
                raise ForgeUnavailableError(
                    f"{method} {path} failed after {attempt} attempts ({failure})"
                )
            self._sleep(delay)
            delay = min(delay * self._retry.multiplier, self._retry.max_delay)
            attempt += 1

    def get_repo(self, owner: str, name: str) -> RepoRef:
        payload = self._request("GET", f"/repos/{owner}/{name}")
        return RepoRef(
            owner=str(payload["owner"]["login"]) if isinstance(payload.get("owner"), dict) else owner,
            name=str(payload.get("name", name)),
            default_branch=str(payload.get("default_branch", "main")),
        )

    def iter_issue_pages(
        self,
        repo: RepoRef,
        page_size: int = DEFAULT_PAGE_SIZE,
        start_page: int = 1,
    ) -> Iterator[tuple[int, list[IssueRecord]]]:
        """Yield (page_number, issues) until a short page ends the listing.

        A page with fewer than page_size entries is the last one; a full
        final page costs one extra request that returns empty.
        """
        if not 1 <= page_size <= MAX_PAGE_SIZE:
            raise ValueError(f"page_size must be in [1, {MAX_PAGE_SIZE}], got {page_size}")
        page = start_page
        while True:
            payload = self._request(
                "GET",
                f"/repos/{repo.owner}/{repo.name}/issues",
                query={"state": "all", "page": str(page), "per_page": str(page_size)},
            )
            issues = [parse_issue(item, repo) for item in payload]
            yield (page, issues)
            if len(issues) < page_size:
                return
            page += 1

    def list_files(self, repo: RepoRef) -> list[CodeFileRef]:
        """Files of the latest default-branch snapshot, via the recursive tree."""
        payload = self._request(
            "GET",
            f"/repos/{repo.owner}/{repo.name}/git/trees/{repo.default_branch}",
            query={"recursive": "1"},
        )
        files = [
            CodeFileRef(
                repo=repo,
                path=str(entry["path"]),
                url=self.file_url(repo, str(entry["path"])),
            )
            for entry in payload.get("tree", ())
            if entry.get("type") == "blob"
        ]
        files.sort(key=lambda ref: ref.path)
        return files

    def ensure_label(self, repo: RepoRef, name: str, color: str) -> None:
        """Create the label unless the repo already has it."""
        existing = self._request(
            "GET", f"/repos/{repo.owner}/{repo.name}/labels/{name}", none_on_404=True
        )
        if existing is not None:
            return
        self._request(
            "POST",
            f"/repos/{repo.owner}/{repo.name}/labels",
            payload={"name": name, "color": color},
        )

    def add_labels(self, repo: RepoRef, issue_number: int, names: list[str]) -> None:
        self._request(
            "POST",
            f"/repos/{repo.owner}/{repo.name}/issues/{issue_number}/labels",
            payload={"labels": names},
        )

    def create_comment(self, repo: RepoRef, issue_number: int, body: str) -> None:
        self._request(
            "POST",
            f"/repos/{repo.owner}/{repo.name}/issues/{issue_number}/comments",
            payload={"body": body},
        )

    def list_comments(self, repo: RepoRef, issue_number: int) -> list[dict]:
        """Every comment on the issue, paged like the issue listing."""
        comments: list[dict] = []
        page = 1
        page_size = 100
        while True:
            payload = self._request(
                "GET",
                f"/repos/{repo.owner}/{repo.name}/issues/{issue_number}/comments",
                query={"page": str(page), "per_page": str(page_size)},
            )
            comments.extend(payload)
            if len(payload) < page_size:
                return comments
            page += 1

    def issue_url(self, repo: RepoRef, issue_number: int) -> str:
        return f"{self.web_base}/{repo.owner}/{repo.name}/issues/{issue_number}"

    def file_url(self, repo: RepoRef, path: str) -> str:
        return f"{self.web_base}/{repo.owner}/{repo.name}/blob/{repo.default_branch}/{path}"
