"""Forge-agnostic domain types shared by workflows, gateways, and the simulator.

Everything here is an immutable value; instances can be shared freely across
threads. The only behavior living in this module is the merge-commit message
format, which other components rely on being able to parse back.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Mapping, Optional, Union

MAX_SUMMARY_BYTES = 64 * 1024
TRUNCATION_MARKER = "[... truncated ...]"

# Labels that ask the author for action share this prefix; the conflict label
# is the one the CI mirror maintains and the stale policy watches.
REQUEST_LABEL_PREFIX = "needs: "
CONFLICT_LABEL = "needs: rebase"

_SHA_RE = re.compile(r"^[0-9a-f]{40}$")
_MERGE_SUBJECT_RE = re.compile(r"^Merge PR #([0-9]+): ")


class PrState(str, Enum):
    OPEN = "open"
    CLOSED = "closed"
    MERGED = "merged"


class ReviewDecision(str, Enum):
    APPROVED = "approved"
    CHANGES_REQUESTED = "changes_requested"
    COMMENTED = "commented"


class JobStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    SUCCESS = "success"
    FAILED = "failed"
    CANCELED = "canceled"

    @property
    def terminal(self) -> bool:
        return self in (JobStatus.SUCCESS, JobStatus.FAILED, JobStatus.CANCELED)


class CheckConclusion(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    NEUTRAL = "neutral"


class ChecksRollup(str, Enum):
    """Combined state of the required checks for a commit."""

    SUCCESS = "success"
    PENDING = "pending"
    FAILURE = "failure"


@dataclass(frozen=True)
class RepoRef:
    """A repository coordinate; renders as "owner/name"."""

    owner: str
    name: str

    def __post_init__(self) -> None:
        for part in (self.owner, self.name):
            if not part or "/" in part:
                raise ValueError(f"invalid repo reference: {self.owner!r}/{self.name!r}")

    def __str__(self) -> str:
        return f"{self.owner}/{self.name}"

    @classmethod
    def parse(cls, text: str) -> "RepoRef":
        owner, sep, name = text.partition("/")
        if not sep:
            raise ValueError(f"expected owner/name, got {text!r}")
        return cls(owner, name)


@dataclass(frozen=True)
class Sha:
    """A 40-character lowercase hexadecimal commit id."""

    value: str

    def __post_init__(self) -> None:
        if not _SHA_RE.match(self.value):
            raise ValueError(f"not a 40-char lowercase hex sha: {self.value!r}")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class MilestoneRef:
    id: int
    title: str
    description: str = ""


@dataclass(frozen=True)
class PullRequest:
    """Point-in-time snapshot of a pull request."""

    repo: RepoRef
    number: int
    title: str
    body: str
    author: str
    base_branch: str
    head_sha: Sha
    head_repo: RepoRef
    draft: bool
    state: PrState
    labels: frozenset[str] = frozenset()
    milestone: Optional[MilestoneRef] = None
    assignees: frozenset[str] = frozenset()
    reviews: Mapping[str, ReviewDecision] = field(default_factory=dict)


@dataclass(frozen=True)
class Comment:
    id: int
    author: str
    body: str
    created_at: datetime
    target: tuple[RepoRef, int]


@dataclass(frozen=True)
class Artifact:
    path: str
    url: str


@dataclass(frozen=True)
class CiJob:
    pipeline_id: int
    name: str
    status: JobStatus
    log_ref: str
    artifacts: tuple[Artifact, ...]
    tested_sha: Sha


@dataclass(frozen=True)
class CheckReport:
    """A rich per-commit test outcome. Summaries are clipped to the forge limit,
    dropping head lines and keeping the tail."""

    name: str
    conclusion: CheckConclusion
    title: str
    summary: str
    target_sha: Sha

    def __post_init__(self) -> None:
        object.__setattr__(self, "summary", clip_to_tail(self.summary))


@dataclass(frozen=True)
class BoardCard:
    board: str
    column: str
    pr: tuple[RepoRef, int]


class EventKind(str, Enum):
    PR_OPENED = "pr_opened"
    PR_SYNCHRONIZED = "pr_synchronized"
    PR_CLOSED = "pr_closed"
    COMMENT_CREATED = "comment_created"
    PIPELINE_COMPLETED = "pipeline_completed"
    JOB_COMPLETED = "job_completed"
    PUSH_TO_BRANCH = "push_to_branch"
    CARD_REMOVED = "card_removed"
    SCHEDULED_TICK = "scheduled_tick"


@dataclass(frozen=True)
class PrPayload:
    repo: RepoRef
    number: int
    merged: bool = False


@dataclass(frozen=True)
class CommentPayload:
    repo: RepoRef
    number: int
    comment: Comment


@dataclass(frozen=True)
class PipelinePayload:
    repo: RepoRef
    pipeline_id: int
    ref: str
    sha: Sha
    status: JobStatus


@dataclass(frozen=True)
class JobPayload:
    repo: RepoRef
    ref: str
    job: CiJob


@dataclass(frozen=True)
class PushedCommit:
    sha: Sha
    message: str


@dataclass(frozen=True)
class PushPayload:
    repo: RepoRef
    branch: str
    commits: tuple[PushedCommit, ...]


@dataclass(frozen=True)
class CardRemovedPayload:
    repo: RepoRef
    board: str
    column: str
    number: int
    actor: str


@dataclass(frozen=True)
class TickPayload:
    repo: RepoRef
    scheduled_for: datetime


EventPayload = Union[
    PrPayload,
    CommentPayload,
    PipelinePayload,
    JobPayload,
    PushPayload,
    CardRemovedPayload,
    TickPayload,
]

_PAYLOAD_TYPES: dict[EventKind, type] = {
    EventKind.PR_OPENED: PrPayload,
    EventKind.PR_SYNCHRONIZED: PrPayload,
    EventKind.PR_CLOSED: PrPayload,
    EventKind.COMMENT_CREATED: CommentPayload,
    EventKind.PIPELINE_COMPLETED: PipelinePayload,
    EventKind.JOB_COMPLETED: JobPayload,
    EventKind.PUSH_TO_BRANCH: PushPayload,
    EventKind.CARD_REMOVED: CardRemovedPayload,
    EventKind.SCHEDULED_TICK: TickPayload,
}


@dataclass(frozen=True)
class Event:
    """A normalized webhook or scheduler occurrence."""

    delivery_id: str
    kind: EventKind
    payload: EventPayload
    received_at: datetime

    def __post_init__(self) -> None:
        expected = _PAYLOAD_TYPES[self.kind]
        if not isinstance(self.payload, expected):
            raise TypeError(
                f"{self.kind.value} events carry {expected.__name__}, "
                f"got {type(self.payload).__name__}"
            )


def clip_to_tail(
    text: str, max_bytes: int = MAX_SUMMARY_BYTES, marker: str = TRUNCATION_MARKER
) -> str:
    """Clip text to at most max_bytes of UTF-8, keeping the tail.

    The result is the original text, or a single marker line followed by a
    contiguous suffix of it; the final line always survives.
    """
    if len(text.encode("utf-8")) <= max_bytes:
        return text
    budget = max_bytes - len(marker.encode("utf-8")) - 1
    lines = text.split("\n")
    kept: list[str] = []
    size = 0
    for line in reversed(lines):
        cost = len(line.encode("utf-8")) + (1 if kept else 0)
        if size + cost > budget:
            break
        kept.append(line)
        size += cost
    if not kept:
        # The final line alone busts the budget; keep its tail bytes.
        tail = text.encode("utf-8")[-budget:]
        return marker + "\n" + tail.decode("utf-8", errors="ignore")
    kept.reverse()
    return marker + "\n" + "\n".join(kept)


def render_merge_message(pr: PullRequest) -> str:
    """Render the merge-commit message for a PR.

    Subject is "Merge PR #<number>: <title>"; when reviewers approved, a blank
    line and one "Reviewed-by:" trailer per approver follow, sorted by login.
    """
    subject = f"Merge PR #{pr.number}: {pr.title}"
    approvers = sorted(
        login
        for login, decision in pr.reviews.items()
        if decision is ReviewDecision.APPROVED
    )
    if not approvers:
        return subject
    trailers = "\n".join(f"Reviewed-by: {login}" for login in approvers)
    return subject + "\n\n" + trailers


def parse_merge_subject(subject: str) -> Optional[int]:
    """Extract the PR number from a merge-commit subject, or None."""
    match = _MERGE_SUBJECT_RE.match(subject)
    return int(match.group(1)) if match else None
