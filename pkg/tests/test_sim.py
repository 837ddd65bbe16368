"""The fake forge itself: seeding, emission, faults, and the HTTP face."""

from __future__ import annotations

import json

import pytest
import requests

from issuetriage.sim import SimForge, SimServer
from issuetriage.webhook import (
    DELIVERY_HEADER,
    EVENT_HEADER,
    SIGNATURE_HEADER,
    verify_signature,
)


def make_sim() -> SimForge:
    sim = SimForge()
    sim.create_repo("acme", "shop", files=["src/app.py"])
    return sim


class CapturingTarget:
    """Webhook target that records every (headers, body) it receives."""

    def __init__(self, status: int = 202):
        self.status = status
        self.received: list[tuple[dict, bytes]] = []

    def __call__(self, headers: dict, body: bytes) -> int:
        self.received.append((headers, body))
        return self.status


class TestSeeding:
    def test_issue_numbers_count_up_from_one(self):
        sim = make_sim()
        numbers = [sim.seed_issue("acme", "shop", f"title {i}") for i in range(3)]
        assert numbers == [1, 2, 3]
        assert sim.issue_count("acme", "shop") == 3

    def test_seeding_never_emits_webhooks(self):
        sim = make_sim()
        target = CapturingTarget()
        sim.register_webhook(target)
        sim.seed_issue("acme", "shop", "quiet history")
        assert target.received == []

    def test_duplicate_repo_rejected(self):
        sim = make_sim()
        with pytest.raises(ValueError):
            sim.create_repo("acme", "shop")

    def test_set_files_replaces_the_tree(self):
        sim = make_sim()
        sim.set_files("acme", "shop", ["only/this.py"])
        status, _, content = sim.handle_api(
            "GET",
            "/repos/acme/shop/git/trees/main",
            {"recursive": "1"},
            {"Authorization": f"token {sim.token}"},
            None,
        )
        assert status == 200
        tree = json.loads(content)["tree"]
        assert [entry["path"] for entry in tree] == ["only/this.py"]


class TestEmission:
    def test_open_issue_delivers_a_signed_opened_event(self):
        sim = make_sim()
        target = CapturingTarget()
        sim.register_webhook(target)
        number, statuses = sim.open_issue("acme", "shop", "new bug", body="details")
        assert number == 1
        assert statuses == [202]
        [(headers, body)] = target.received
        assert headers[EVENT_HEADER] == "issues"
        assert headers[DELIVERY_HEADER] == "sim-delivery-000001"
        assert verify_signature(sim.webhook_secret, body, headers[SIGNATURE_HEADER])
        payload = json.loads(body)
        assert payload["action"] == "opened"
        assert payload["issue"]["number"] == 1
        assert payload["issue"]["title"] == "new bug"
        assert payload["repository"]["owner"]["login"] == "acme"

    def test_delivery_ids_are_sequential(self):
        sim = make_sim()
        target = CapturingTarget()
        sim.register_webhook(target)
        sim.open_issue("acme", "shop", "first")
        sim.open_issue("acme", "shop", "second")
        ids = [headers[DELIVERY_HEADER] for headers, _ in target.received]
        assert ids == ["sim-delivery-000001", "sim-delivery-000002"]

    def test_emitting_without_a_target_fails_loudly(self):
        sim = make_sim()
        with pytest.raises(RuntimeError):
            sim.open_issue("acme", "shop", "nowhere to go")

    def test_duplicate_delivery_fault_sends_twice_with_one_id(self):
        sim = make_sim()
        target = CapturingTarget()
        sim.register_webhook(target)
        sim.script_fault("EMIT issues", "deliver-duplicate")
        _, statuses = sim.open_issue("acme", "shop", "flaky network")
        assert statuses == [202, 202]
        assert len(target.received) == 2
        first_headers, first_body = target.received[0]
        second_headers, second_body = target.received[1]
        assert first_headers[DELIVERY_HEADER] == second_headers[DELIVERY_HEADER]
        assert first_body == second_body
        assert len(sim.deliveries) == 1
        assert sim.deliveries[0].responses == [202, 202]

    def test_redeliver_repeats_the_last_delivery_byte_for_byte(self):
        sim = make_sim()
        target = CapturingTarget()
        sim.register_webhook(target)
        sim.open_issue("acme", "shop", "original")
        sim.redeliver(times=2)
        bodies = {body for _, body in target.received}
        ids = {headers[DELIVERY_HEADER] for headers, _ in target.received}
        assert len(target.received) == 3
        assert len(bodies) == 1 and len(ids) == 1

    def test_redeliver_with_nothing_sent_fails(self):
        sim = make_sim()
        sim.register_webhook(CapturingTarget())
        with pytest.raises(ValueError):
            sim.redeliver()


class TestFaultScript:
    def test_faults_consume_their_budget_then_stop(self):
        sim = make_sim()
        sim.script_fault("GET /repos/acme/shop/issues", "status-429", times=2)
        auth = {"Authorization": f"token {sim.token}"}
        statuses = [
            sim.handle_api("GET", "/repos/acme/shop/issues", {}, auth, None)[0] for _ in range(3)
        ]
        assert statuses == [429, 429, 200]

    def test_faults_match_by_substring(self):
        sim = make_sim()
        sim.script_fault("issues", "status-500")
        auth = {"Authorization": f"token {sim.token}"}
        ok, _, _ = sim.handle_api("GET", "/repos/acme/shop", {}, auth, None)
        broken, _, _ = sim.handle_api("GET", "/repos/acme/shop/issues", {}, auth, None)
        assert (ok, broken) == (200, 500)

    def test_unknown_behavior_rejected(self):
        sim = make_sim()
        with pytest.raises(ValueError):
            sim.script_fault("GET /x", "explode")

    def test_faults_fire_before_auth(self):
        sim = make_sim()
        sim.script_fault("GET /repos/acme/shop", "status-429")
        status, _, _ = sim.handle_api("GET", "/repos/acme/shop", {}, {}, None)
        assert status == 429


class TestRestRoutes:
    def test_requests_need_the_token(self):
        sim = make_sim()
        status, _, _ = sim.handle_api(
            "GET", "/repos/acme/shop", {}, {"Authorization": "token nope"}, None
        )
        assert status == 401

    def test_unknown_routes_are_404(self):
        sim = make_sim()
        auth = {"Authorization": f"token {sim.token}"}
        assert sim.handle_api("GET", "/teapot", {}, auth, None)[0] == 404
        assert sim.handle_api("GET", "/repos/acme/ghost", {}, auth, None)[0] == 404

    def test_adding_a_label_twice_keeps_one_copy(self):
        sim = make_sim()
        sim.seed_issue("acme", "shop", "needs triage")
        auth = {"Authorization": f"token {sim.token}"}
        sim.handle_api(
            "POST", "/repos/acme/shop/labels", {}, auth, json.dumps({"name": "bug"}).encode()
        )
        add = json.dumps({"labels": ["bug"]}).encode()
        sim.handle_api("POST", "/repos/acme/shop/issues/1/labels", {}, auth, add)
        sim.handle_api("POST", "/repos/acme/shop/issues/1/labels", {}, auth, add)
        assert sim.labels_on("acme", "shop", 1) == {"bug"}

    def test_creating_an_existing_label_is_422(self):
        sim = make_sim()
        auth = {"Authorization": f"token {sim.token}"}
        body = json.dumps({"name": "bug", "color": "ff0000"}).encode()
        first, _, _ = sim.handle_api("POST", "/repos/acme/shop/labels", {}, auth, body)
        second, _, _ = sim.handle_api("POST", "/repos/acme/shop/labels", {}, auth, body)
        assert (first, second) == (201, 422)

    def test_comments_paginate(self):
        sim = make_sim()
        sim.seed_issue("acme", "shop", "busy thread")
        auth = {"Authorization": f"token {sim.token}"}
        for i in range(5):
            sim.handle_api(
                "POST",
                "/repos/acme/shop/issues/1/comments",
                {},
                auth,
                json.dumps({"body": f"c{i}"}).encode(),
            )
        status, _, content = sim.handle_api(
            "GET", "/repos/acme/shop/issues/1/comments", {"page": "2", "per_page": "2"}, auth, None
        )
        assert status == 200
        assert [c["body"] for c in json.loads(content)] == ["c2", "c3"]


class TestHttpFace:
    def test_round_trip_over_loopback(self):
        sim = make_sim()
        sim.seed_issue("acme", "shop", "over the wire")
        server = SimServer(sim)
        server.start()
        try:
            reply = requests.get(
                f"{server.base_url}/repos/acme/shop/issues",
                params={"state": "all", "page": "1", "per_page": "10"},
                headers={"Authorization": f"token {sim.token}"},
                timeout=5,
            )
            assert reply.status_code == 200
            assert [issue["title"] for issue in reply.json()] == ["over the wire"]
        finally:
            server.stop()

    def test_drop_connection_fault_cuts_the_socket(self):
        sim = make_sim()
        sim.script_fault("GET /repos/acme/shop", "drop-connection", times=1)
        server = SimServer(sim)
        server.start()
        try:
            with pytest.raises(requests.RequestException):
                requests.get(
                    f"{server.base_url}/repos/acme/shop",
                    headers={"Authorization": f"token {sim.token}"},
                    timeout=5,
                )
            recovered = requests.get(
                f"{server.base_url}/repos/acme/shop",
                headers={"Authorization": f"token {sim.token}"},
                timeout=5,
            )
            assert recovered.status_code == 200
        finally:
            server.stop()
