"""HTTP service tests: ingress behavior, acknowledge-then-process, overflow."""

from __future__ import annotations

import hashlib
import hmac
import json
import threading
import time

from fastapi.testclient import TestClient

from forgebot.engine import Engine, PostComment, Workflow
from forgebot.gateway.base import Gateway
from forgebot.model import EventKind
from forgebot.service import create_app

from conftest import REPO

SECRET = b"s3cret"


def signed_github_headers(body: bytes, delivery: str, event: str) -> dict[str, str]:
    mac = hmac.new(SECRET, body, hashlib.sha256).hexdigest()
    return {
        "X-Hub-Signature-256": f"sha256={mac}",
        "X-GitHub-Delivery": delivery,
        "X-GitHub-Event": event,
        "Content-Type": "application/json",
    }


def pr_opened_body(number: int = 1) -> bytes:
    return json.dumps(
        {
            "action": "opened",
            "repository": {"full_name": str(REPO)},
            "pull_request": {"number": number},
        }
    ).encode()


class RecordingGateway(Gateway):
    def __init__(self):
        self.comments: list[str] = []
        self.release = threading.Event()
        self.release.set()

    def post_comment(self, repo, number, body, *, key):
        self.release.wait(timeout=5)
        self.comments.append(body)
        return len(self.comments)


def make_app(queue_size=16, workers=2):
    engine = Engine()
    engine.register(
        Workflow(
            "on-open",
            lambda e: e.kind is EventKind.PR_OPENED,
            (),
            lambda ctx: ctx.run(PostComment(REPO, ctx.event.payload.number, "seen")),
        )
    )
    gateway = RecordingGateway()
    app = create_app(engine, gateway, SECRET, queue_size=queue_size, workers=workers)
    return app, gateway


class TestIngress:
    def test_health(self):
        app, _ = make_app()
        with TestClient(app) as client:
            response = client.get("/health")
            assert response.status_code == 200
            assert response.text == "ok"

    def test_valid_delivery_is_queued_and_dispatched(self):
        app, gateway = make_app()
        body = pr_opened_body()
        with TestClient(app) as client:
            response = client.post(
                "/webhook", content=body, headers=signed_github_headers(body, "d1", "pull_request")
            )
            assert response.status_code == 200
            assert response.json() == {"status": "queued", "delivery_id": "d1"}
            app.state.events.join()
        assert gateway.comments == ["seen"]

    def test_bad_signature_never_reaches_engine(self):
        app, gateway = make_app()
        body = pr_opened_body()
        headers = signed_github_headers(body + b"tampered", "d1", "pull_request")
        with TestClient(app) as client:
            response = client.post("/webhook", content=body, headers=headers)
            assert response.status_code == 401
        assert gateway.comments == []

    def test_missing_signature_is_401(self):
        app, _ = make_app()
        with TestClient(app) as client:
            assert client.post("/webhook", content=b"{}").status_code == 401

    def test_unsupported_event_is_acknowledged_and_ignored(self):
        app, gateway = make_app()
        body = b'{"action": "started"}'
        with TestClient(app) as client:
            response = client.post(
                "/webhook", content=body, headers=signed_github_headers(body, "d2", "watch")
            )
            assert response.status_code == 200
            assert response.json()["status"] == "ignored"
        assert gateway.comments == []

    def test_malformed_payload_is_400(self):
        app, _ = make_app()
        body = b'{"action": "opened"}'  # missing repository/pull_request
        with TestClient(app) as client:
            response = client.post(
                "/webhook", content=body, headers=signed_github_headers(body, "d3", "pull_request")
            )
            assert response.status_code == 400

    def test_gitlab_token_path(self):
        app, _ = make_app()
        body = json.dumps(
            {
                "project": {"path_with_namespace": "acme-ci/widgets"},
                "object_attributes": {
                    "id": 1,
                    "ref": "pr-1",
                    "sha": "c" * 40,
                    "status": "success",
                },
            }
        ).encode()
        headers = {
            "X-Gitlab-Token": SECRET.decode(),
            "X-Gitlab-Event-UUID": "g1",
            "X-Gitlab-Event": "Pipeline Hook",
            "Content-Type": "application/json",
        }
        with TestClient(app) as client:
            assert client.post("/webhook", content=body, headers=headers).status_code == 200
            bad = dict(headers, **{"X-Gitlab-Token": "wrong"})
            assert client.post("/webhook", content=body, headers=bad).status_code == 401

    def test_queue_overflow_returns_503(self):
        app, _ = make_app(queue_size=1, workers=0)  # nothing drains the queue
        with TestClient(app) as client:
            for delivery, expected in (("d1", 200), ("d2", 503)):
                body = pr_opened_body()
                response = client.post(
                    "/webhook",
                    content=body,
                    headers=signed_github_headers(body, delivery, "pull_request"),
                )
                assert response.status_code == expected

    def test_acknowledge_before_processing(self):
        """The HTTP answer must not wait for workflow execution."""
        app, gateway = make_app(workers=1)
        gateway.release.clear()  # block the workflow action
        body = pr_opened_body()
        with TestClient(app) as client:
            start = time.monotonic()
            response = client.post(
                "/webhook", content=body, headers=signed_github_headers(body, "d1", "pull_request")
            )
            elapsed = time.monotonic() - start
            assert response.status_code == 200
            assert gateway.comments == []  # action still pending
            assert elapsed < 1.0
            gateway.release.set()
            app.state.events.join()
        assert gateway.comments == ["seen"]
