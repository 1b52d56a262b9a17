"""Webhook ingress plumbing: signature verification and payload normalization.

Verification is constant-time in both styles: HMAC-SHA256 over the exact raw
body ("sha256=<hex>" header) for github-like sources, shared-token equality
for gitlab-like sources. Normalization turns verified payloads into the
engine's Event values; event names the bot does not care about map to None.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Optional

from forgebot.model import (
    Artifact,
    CardRemovedPayload,
    CiJob,
    Comment,
    CommentPayload,
    Event,
    EventKind,
    JobPayload,
    JobStatus,
    PipelinePayload,
    PrPayload,
    PushedCommit,
    PushPayload,
    RepoRef,
    Sha,
)

logger = logging.getLogger(__name__)

SIGNATURE_HEADER = "x-hub-signature-256"
TOKEN_HEADER = "x-gitlab-token"


class ForgeSource(str, Enum):
    GITHUB_LIKE = "github_like"
    GITLAB_LIKE = "gitlab_like"


@dataclass(frozen=True)
class Delivery:
    """One raw webhook delivery; raw_body is the exact signed byte string."""

    source: ForgeSource
    delivery_id: str
    event_name: str
    signature_header: str
    raw_body: bytes


class MalformedPayloadError(ValueError):
    """A supported event whose payload cannot be understood."""


def verify_signature(raw_body: bytes, secret: bytes, signature_header: str) -> bool:
    """Check a "sha256=<hex>" HMAC header against the raw body."""
    if not signature_header.startswith("sha256="):
        return False
    expected = hmac.new(secret, raw_body, hashlib.sha256).hexdigest()
    return hmac.compare_digest("sha256=" + expected, signature_header)


def verify_token(token_header: str, secret: bytes) -> bool:
    """Constant-time comparison of a shared-token header with the secret."""
    return hmac.compare_digest(token_header.encode("utf-8"), secret)


def verify_delivery(delivery: Delivery, secret: bytes) -> bool:
    if delivery.source is ForgeSource.GITHUB_LIKE:
        return verify_signature(delivery.raw_body, secret, delivery.signature_header)
    return verify_token(delivery.signature_header, secret)


_TERMINAL = {
    "success": JobStatus.SUCCESS,
    "failed": JobStatus.FAILED,
    "canceled": JobStatus.CANCELED,
}


def _timestamp(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00"))


def _normalize_github(delivery: Delivery, data: dict, received_at: datetime) -> Optional[Event]:
    name = delivery.event_name
    if name == "pull_request":
        repo = RepoRef.parse(data["repository"]["full_name"])
        pr = data["pull_request"]
        action = data["action"]
        if action == "opened":
            kind = EventKind.PR_OPENED
            payload = PrPayload(repo, pr["number"])
        elif action == "synchronize":
            kind = EventKind.PR_SYNCHRONIZED
            payload = PrPayload(repo, pr["number"])
        elif action == "closed":
            kind = EventKind.PR_CLOSED
            payload = PrPayload(repo, pr["number"], merged=bool(pr.get("merged")))
        else:
            return None
        return Event(delivery.delivery_id, kind, payload, received_at)
    if name == "issue_comment":
        if data["action"] != "created":
            return None
        repo = RepoRef.parse(data["repository"]["full_name"])
        number = data["issue"]["number"]
        c = data["comment"]
        comment = Comment(
            id=c["id"],
            author=c["user"]["login"],
            body=c["body"],
            created_at=_timestamp(c["created_at"]),
            target=(repo, number),
        )
        return Event(
            delivery.delivery_id,
            EventKind.COMMENT_CREATED,
            CommentPayload(repo, number, comment),
            received_at,
        )
    if name == "push":
        repo = RepoRef.parse(data["repository"]["full_name"])
        ref = data["ref"]
        if not ref.startswith("refs/heads/"):
            return None
        branch = ref[len("refs/heads/"):]
        commits = tuple(
            PushedCommit(Sha(c["id"]), c["message"]) for c in data["commits"]
        )
        return Event(
            delivery.delivery_id,
            EventKind.PUSH_TO_BRANCH,
            PushPayload(repo, branch, commits),
            received_at,
        )
    if name == "project_card":
        if data["action"] != "deleted":
            return None
        repo = RepoRef.parse(data["repository"]["full_name"])
        card = data["card"]
        return Event(
            delivery.delivery_id,
            EventKind.CARD_REMOVED,
            CardRemovedPayload(
                repo,
                board=card["board"],
                column=card["column"],
                number=card["number"],
                actor=data["sender"]["login"],
            ),
            received_at,
        )
    return None


def _normalize_gitlab(delivery: Delivery, data: dict, received_at: datetime) -> Optional[Event]:
    name = delivery.event_name
    if name == "Pipeline Hook":
        attrs = data["object_attributes"]
        status = _TERMINAL.get(attrs["status"])
        if status is None:
            return None
        repo = RepoRef.parse(data["project"]["path_with_namespace"])
        return Event(
            delivery.delivery_id,
            EventKind.PIPELINE_COMPLETED,
            PipelinePayload(repo, attrs["id"], attrs["ref"], Sha(attrs["sha"]), status),
            received_at,
        )
    if name == "Job Hook":
        status = _TERMINAL.get(data["build_status"])
        if status is None:
            return None
        repo = RepoRef.parse(data["project"]["path_with_namespace"])
        job = CiJob(
            pipeline_id=data["pipeline_id"],
            name=data["build_name"],
            status=status,
            log_ref=str(data["build_id"]),
            artifacts=tuple(
                Artifact(a["path"], a["url"]) for a in data.get("artifacts", [])
            ),
            tested_sha=Sha(data["sha"]),
        )
        return Event(
            delivery.delivery_id,
            EventKind.JOB_COMPLETED,
            JobPayload(repo, data["ref"], job),
            received_at,
        )
    return None


def normalize(delivery: Delivery, received_at: Optional[datetime] = None) -> Optional[Event]:
    """Turn a verified delivery into an Event; None means "unsupported, ignore".

    Raises MalformedPayloadError when a supported event name arrives with a
    payload that does not carry what it must.
    """
    if received_at is None:
        received_at = datetime.now(timezone.utc)
    try:
        data = json.loads(delivery.raw_body)
    except ValueError as exc:
        raise MalformedPayloadError(f"body is not JSON: {exc}") from exc
    try:
        if delivery.source is ForgeSource.GITHUB_LIKE:
            return _normalize_github(delivery, data, received_at)
        return _normalize_gitlab(delivery, data, received_at)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedPayloadError(
            f"bad {delivery.event_name!r} payload: {exc}"
        ) from exc
