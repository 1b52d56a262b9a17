"""Signature verification vectors and payload normalization."""

from __future__ import annotations

import json
import random

import pytest

from forgebot.model import EventKind, JobStatus, RepoRef, Sha
from forgebot.webhook import (
    Delivery,
    ForgeSource,
    MalformedPayloadError,
    normalize,
    verify_signature,
    verify_token,
)

# HMAC-SHA256("key", "hello"), computed independently with the stdlib before
# this module existed; the implementation must reproduce it.
KNOWN_VECTOR = "sha256=9307b3b915efb5171ff14d8cb55fbcc798c6c0ef1456d66ded1a6aa723a58b7b"

SHA_A = "a" * 40
SHA_B = "b" * 40


class TestVerifySignature:
    def test_known_vector_accepts(self):
        assert verify_signature(b"hello", b"key", KNOWN_VECTOR)

    def test_flipped_body_byte_rejects(self):
        assert not verify_signature(b"hellp", b"key", KNOWN_VECTOR)

    def test_empty_header_rejects(self):
        assert not verify_signature(b"hello", b"key", "")

    def test_malformed_header_rejects(self):
        assert not verify_signature(b"hello", b"key", "sha1=deadbeef")
        assert not verify_signature(b"hello", b"key", KNOWN_VECTOR[len("sha256="):])

    def test_random_corruptions_reject(self):
        rng = random.Random(1234)
        body = b"hello"
        for _ in range(100):
            pos = rng.randrange(len(body))
            replacement = rng.randrange(256)
            if body[pos] == replacement:
                replacement = (replacement + 1) % 256
            corrupted = body[:pos] + bytes([replacement]) + body[pos + 1:]
            assert not verify_signature(corrupted, b"key", KNOWN_VECTOR)

    def test_token_comparison(self):
        assert verify_token("s3cret", b"s3cret")
        assert not verify_token("s3cret!", b"s3cret")
        assert not verify_token("", b"s3cret")


def github_delivery(event_name: str, payload: dict, delivery_id: str = "d1") -> Delivery:
    return Delivery(
        source=ForgeSource.GITHUB_LIKE,
        delivery_id=delivery_id,
        event_name=event_name,
        signature_header="sha256=unchecked-here",
        raw_body=json.dumps(payload).encode(),
    )


def gitlab_delivery(event_name: str, payload: dict, delivery_id: str = "g1") -> Delivery:
    return Delivery(
        source=ForgeSource.GITLAB_LIKE,
        delivery_id=delivery_id,
        event_name=event_name,
        signature_header="token",
        raw_body=json.dumps(payload).encode(),
    )


class TestNormalizeGithubLike:
    def test_pull_request_opened(self):
        event = normalize(
            github_delivery(
                "pull_request",
                {
                    "action": "opened",
                    "repository": {"full_name": "acme/widgets"},
                    "pull_request": {"number": 12},
                },
            )
        )
        assert event.kind is EventKind.PR_OPENED
        assert event.payload.repo == RepoRef("acme", "widgets")
        assert event.payload.number == 12
        assert event.delivery_id == "d1"

    def test_pull_request_synchronize(self):
        event = normalize(
            github_delivery(
                "pull_request",
                {
                    "action": "synchronize",
                    "repository": {"full_name": "acme/widgets"},
                    "pull_request": {"number": 12},
                },
            )
        )
        assert event.kind is EventKind.PR_SYNCHRONIZED

    def test_pull_request_closed_carries_merged_flag(self):
        event = normalize(
            github_delivery(
                "pull_request",
                {
                    "action": "closed",
                    "repository": {"full_name": "acme/widgets"},
                    "pull_request": {"number": 12, "merged": True},
                },
            )
        )
        assert event.kind is EventKind.PR_CLOSED
        assert event.payload.merged is True

    def test_issue_comment_created_carries_body(self):
        event = normalize(
            github_delivery(
                "issue_comment",
                {
                    "action": "created",
                    "repository": {"full_name": "acme/widgets"},
                    "issue": {"number": 510},
                    "comment": {
                        "id": 77,
                        "user": {"login": "alice"},
                        "body": "@mergebot: merge now",
                        "created_at": "2024-03-01T10:00:00Z",
                    },
                },
            )
        )
        assert event.kind is EventKind.COMMENT_CREATED
        assert event.payload.comment.body == "@mergebot: merge now"
        assert event.payload.comment.author == "alice"

    def test_push_to_branch(self):
        event = normalize(
            github_delivery(
                "push",
                {
                    "ref": "refs/heads/v1.0",
                    "repository": {"full_name": "acme/widgets"},
                    "commits": [{"id": SHA_A, "message": "Merge PR #510: Fix"}],
                },
            )
        )
        assert event.kind is EventKind.PUSH_TO_BRANCH
        assert event.payload.branch == "v1.0"
        assert event.payload.commits[0].sha == Sha(SHA_A)

    def test_card_deleted(self):
        event = normalize(
            github_delivery(
                "project_card",
                {
                    "action": "deleted",
                    "repository": {"full_name": "acme/widgets"},
                    "card": {"board": "Backports: v1.0", "column": "Backport requested", "number": 510},
                    "sender": {"login": "rm"},
                },
            )
        )
        assert event.kind is EventKind.CARD_REMOVED
        assert event.payload.actor == "rm"

    def test_unsupported_event_names_map_to_none(self):
        assert normalize(github_delivery("watch", {"action": "started"})) is None
        assert normalize(github_delivery("star", {})) is None

    def test_uninteresting_actions_map_to_none(self):
        delivery = github_delivery(
            "pull_request",
            {"action": "labeled", "repository": {"full_name": "a/b"},
             "pull_request": {"number": 1}},
        )
        assert normalize(delivery) is None

    def test_malformed_supported_payload_raises(self):
        with pytest.raises(MalformedPayloadError):
            normalize(github_delivery("pull_request", {"action": "opened"}))
        with pytest.raises(MalformedPayloadError):
            normalize(
                Delivery(
                    ForgeSource.GITHUB_LIKE, "d", "pull_request", "sig", b"not json"
                )
            )


class TestNormalizeGitlabLike:
    def test_pipeline_completed(self):
        event = normalize(
            gitlab_delivery(
                "Pipeline Hook",
                {
                    "project": {"path_with_namespace": "acme-ci/widgets"},
                    "object_attributes": {"id": 9, "ref": "pr-510", "sha": SHA_B, "status": "failed"},
                },
            )
        )
        assert event.kind is EventKind.PIPELINE_COMPLETED
        assert event.payload.status is JobStatus.FAILED
        assert event.payload.sha == Sha(SHA_B)

    def test_running_pipeline_ignored(self):
        delivery = gitlab_delivery(
            "Pipeline Hook",
            {
                "project": {"path_with_namespace": "acme-ci/widgets"},
                "object_attributes": {"id": 9, "ref": "pr-510", "sha": SHA_B, "status": "running"},
            },
        )
        assert normalize(delivery) is None

    def test_job_completed(self):
        event = normalize(
            gitlab_delivery(
                "Job Hook",
                {
                    "project": {"path_with_namespace": "acme-ci/widgets"},
                    "build_id": 123,
                    "build_name": "ci-mathcomp",
                    "build_status": "failed",
                    "pipeline_id": 9,
                    "ref": "pr-510",
                    "sha": SHA_B,
                    "artifacts": [{"path": "doc/index.html", "url": "https://x/1"}],
                },
            )
        )
        assert event.kind is EventKind.JOB_COMPLETED
        assert event.payload.job.name == "ci-mathcomp"
        assert event.payload.job.log_ref == "123"
        assert event.payload.job.artifacts[0].url == "https://x/1"

    def test_unsupported_gitlab_event(self):
        assert normalize(gitlab_delivery("Note Hook", {})) is None
