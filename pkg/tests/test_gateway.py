"""Webhook gateway: signatures, intake decisions, HTTP behavior."""

from __future__ import annotations

import json

import pytest
import requests
from hypothesis import given
from hypothesis import strategies as st

from issuetriage.store import IssueStore
from issuetriage.webhook import (
    DELIVERY_HEADER,
    EVENT_HEADER,
    RETRY_AFTER_SECONDS,
    SIGNATURE_HEADER,
    GatewayServer,
    handle_webhook,
    sign_body,
    verify_signature,
)

SECRET = "s3cret"

# HMAC-SHA256 test case from RFC 4231 (key "Jefe").
JEFE_KEY = "Jefe"
JEFE_MESSAGE = b"what do ya want for nothing?"
JEFE_DIGEST = "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"

HEX_DIGITS = "0123456789abcdef"


def opened_body(number: int = 1) -> bytes:
    return json.dumps({"action": "opened", "issue": {"number": number}}).encode("utf-8")


def signed_headers(
    body: bytes,
    secret: str = SECRET,
    delivery: str | None = "delivery-1",
    event: str | None = "issues",
) -> dict[str, str]:
    headers = {SIGNATURE_HEADER: sign_body(secret, body)}
    if delivery is not None:
        headers[DELIVERY_HEADER] = delivery
    if event is not None:
        headers[EVENT_HEADER] = event
    return headers


class TestSignature:
    def test_matches_published_test_vector(self):
        assert sign_body(JEFE_KEY, JEFE_MESSAGE) == f"sha256={JEFE_DIGEST}"

    def test_vector_verifies(self):
        assert verify_signature(JEFE_KEY, JEFE_MESSAGE, f"sha256={JEFE_DIGEST}")

    def test_every_single_digit_mutation_is_rejected(self):
        for position in range(64):
            original = JEFE_DIGEST[position]
            flipped = HEX_DIGITS[(HEX_DIGITS.index(original) + 1) % 16]
            mutated = JEFE_DIGEST[:position] + flipped + JEFE_DIGEST[position + 1 :]
            assert not verify_signature(JEFE_KEY, JEFE_MESSAGE, f"sha256={mutated}")

    def test_uppercase_hex_accepted(self):
        assert verify_signature(JEFE_KEY, JEFE_MESSAGE, f"sha256={JEFE_DIGEST.upper()}")

    @pytest.mark.parametrize(
        "header",
        [
            None,
            "",
            JEFE_DIGEST,
            f"sha1={JEFE_DIGEST}",
            f"sha256={JEFE_DIGEST[:-1]}",
            f"sha256={JEFE_DIGEST}0",
            "sha256=" + "z" * 64,
        ],
    )
    def test_malformed_headers_rejected(self, header):
        assert not verify_signature(JEFE_KEY, JEFE_MESSAGE, header)

    def test_wrong_secret_rejected(self):
        signature = sign_body("right", b"payload")
        assert not verify_signature("wrong", b"payload", signature)

    @given(body=st.binary(max_size=256), secret=st.text(min_size=1, max_size=32))
    def test_verify_accepts_whatever_sign_produced(self, body, secret):
        assert verify_signature(secret, body, sign_body(secret, body))


class TestIntakeDecision:
    def test_valid_opened_issue_accepted(self, store):
        body = opened_body()
        notifications: list[bool] = []
        status, payload = handle_webhook(
            store, SECRET, signed_headers(body), body, notify=lambda: notifications.append(True)
        )
        assert (status, payload) == (202, {"status": "accepted"})
        assert store.pending_count() == 1
        assert notifications == [True]

    def test_tampered_body_rejected(self, store):
        body = opened_body()
        headers = signed_headers(body)
        status, payload = handle_webhook(store, SECRET, headers, body + b" ")
        assert status == 401
        assert payload["status"] == "rejected"
        assert store.pending_count() == 0

    def test_unsigned_request_rejected(self, store):
        body = opened_body()
        status, _ = handle_webhook(store, SECRET, {DELIVERY_HEADER: "d", EVENT_HEADER: "issues"}, body)
        assert status == 401

    def test_missing_delivery_id_is_bad_request(self, store):
        body = opened_body()
        status, payload = handle_webhook(store, SECRET, signed_headers(body, delivery=None), body)
        assert (status, payload["reason"]) == (400, "missing delivery id")

    def test_non_json_body_is_bad_request(self, store):
        body = b"not json {{"
        status, payload = handle_webhook(store, SECRET, signed_headers(body), body)
        assert (status, payload["reason"]) == (400, "body is not JSON")

    @pytest.mark.parametrize(
        ("event", "body"),
        [
            ("push", opened_body()),
            ("issues", json.dumps({"action": "closed"}).encode("utf-8")),
            ("issues", json.dumps([1, 2, 3]).encode("utf-8")),
        ],
    )
    def test_non_actionable_deliveries_ignored(self, store, event, body):
        status, payload = handle_webhook(store, SECRET, signed_headers(body, event=event), body)
        assert (status, payload) == (202, {"status": "ignored"})
        assert store.pending_count() == 0

    def test_replayed_delivery_id_reported_as_duplicate(self, store):
        body = opened_body()
        notifications: list[bool] = []
        headers = signed_headers(body, delivery="dup-1")
        notify = lambda: notifications.append(True)
        first = handle_webhook(store, SECRET, headers, body, notify=notify)
        second = handle_webhook(store, SECRET, headers, body, notify=notify)
        assert first == (202, {"status": "accepted"})
        assert second == (202, {"status": "duplicate"})
        assert store.pending_count() == 1
        assert notifications == [True]

    def test_full_queue_does_not_burn_the_delivery_id(self, store):
        first = opened_body(1)
        second = opened_body(2)
        accepted = handle_webhook(
            store, SECRET, signed_headers(first, delivery="d-1"), first, queue_limit=1
        )
        rejected = handle_webhook(
            store, SECRET, signed_headers(second, delivery="d-2"), second, queue_limit=1
        )
        assert accepted == (202, {"status": "accepted"})
        assert rejected == (503, {"status": "queue-full"})

        claimed = store.claim_pending()
        store.mark_done(claimed.queue_id)
        retried = handle_webhook(
            store, SECRET, signed_headers(second, delivery="d-2"), second, queue_limit=1
        )
        assert retried == (202, {"status": "accepted"})

    def test_closed_store_reports_unavailable(self, tmp_path):
        local = IssueStore(tmp_path / "gone.sqlite")
        local.close()
        body = opened_body()
        status, payload = handle_webhook(local, SECRET, signed_headers(body), body)
        assert (status, payload) == (503, {"status": "store-unavailable"})

    def test_raw_bytes_preserved_exactly(self, store):
        body = b'{\n  "action":\t"opened",\r\n  "note": "caf\\u00e9"  }\n\n'
        status, _ = handle_webhook(store, SECRET, signed_headers(body), body)
        assert status == 202
        queued = store.claim_pending()
        assert queued.raw_body == body
        assert queued.event == "issues"
        assert queued.delivery_id == "delivery-1"

    def test_header_name_case_does_not_matter(self, store):
        body = opened_body()
        headers = {
            "x-hub-signature-256": sign_body(SECRET, body),
            "X-GITHUB-DELIVERY": "d-case",
            "x-github-event": "issues",
        }
        status, payload = handle_webhook(store, SECRET, headers, body)
        assert (status, payload) == (202, {"status": "accepted"})


@pytest.fixture
def gateway(store):
    server = GatewayServer(store, SECRET)
    server.start()
    try:
        yield server
    finally:
        server.stop()


class TestHttpGateway:
    def test_health_endpoint(self, gateway):
        reply = requests.get(f"http://127.0.0.1:{gateway.port}/healthz", timeout=5)
        assert reply.status_code == 200
        assert reply.json() == {"status": "ok"}

    def test_unknown_paths_are_404(self, gateway):
        base = f"http://127.0.0.1:{gateway.port}"
        assert requests.get(f"{base}/nope", timeout=5).status_code == 404
        assert requests.post(f"{base}/nope", data=b"x", timeout=5).status_code == 404

    def test_accepts_a_signed_delivery(self, gateway, store):
        body = opened_body()
        reply = requests.post(
            f"http://127.0.0.1:{gateway.port}/webhook",
            data=body,
            headers=signed_headers(body),
            timeout=5,
        )
        assert reply.status_code == 202
        assert reply.json() == {"status": "accepted"}
        assert store.pending_count() == 1

    def test_rejects_a_bad_signature(self, gateway):
        body = opened_body()
        headers = signed_headers(body, secret="not-the-secret")
        reply = requests.post(
            f"http://127.0.0.1:{gateway.port}/webhook", data=body, headers=headers, timeout=5
        )
        assert reply.status_code == 401

    def test_full_queue_advertises_retry_after(self, store):
        server = GatewayServer(store, SECRET, queue_limit=1)
        server.start()
        try:
            base = f"http://127.0.0.1:{server.port}/webhook"
            first = opened_body(1)
            requests.post(
                base, data=first, headers=signed_headers(first, delivery="q-1"), timeout=5
            )
            second = opened_body(2)
            reply = requests.post(
                base, data=second, headers=signed_headers(second, delivery="q-2"), timeout=5
            )
            assert reply.status_code == 503
            assert reply.json() == {"status": "queue-full"}
            assert reply.headers["Retry-After"] == str(RETRY_AFTER_SECONDS)
        finally:
            server.stop()

    def test_accept_callback_fires(self, store):
        seen: list[bool] = []
        server = GatewayServer(store, SECRET, on_accept=lambda: seen.append(True))
        server.start()
        try:
            body = opened_body()
            requests.post(
                f"http://127.0.0.1:{server.port}/webhook",
                data=body,
                headers=signed_headers(body),
                timeout=5,
            )
            assert seen == [True]
        finally:
            server.stop()
