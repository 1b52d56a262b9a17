"""Gateway capability interface: state-trigger queries and action mutations.

Queries never change forge state. Mutations are idempotent under their
idempotency key: replaying a mutation with a key that was already applied
must change nothing and return the original result.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Optional

from forgebot.model import (
    BoardCard,
    CheckReport,
    ChecksRollup,
    CiJob,
    Comment,
    JobStatus,
    MilestoneRef,
    PullRequest,
    RepoRef,
    Sha,
)


class GatewayError(Exception):
    """Base for every failure surfaced by a gateway implementation."""


class TransientGatewayError(GatewayError):
    """Network trouble, throttling past the retry budget, 5xx responses.

    Workflows treat these as "skip this run"; webhook redelivery recovers.
    """


class MergeConflictError(GatewayError):
    """The requested merge cannot be performed because the sides conflict."""


class PermissionDeniedError(GatewayError):
    """The bot's credentials lack the rights for a mutation."""


class UnknownTeamError(GatewayError):
    """Membership was asked for a team the forge does not know."""


class NotFoundError(GatewayError):
    """A referenced entity (PR, milestone, log, ...) does not exist."""


@dataclass(frozen=True)
class MirrorTarget:
    """Where PR content gets mirrored for CI runs."""

    ci_repo: RepoRef
    branch_prefix: str = "pr-"

    def branch_for(self, number: int) -> str:
        return f"{self.branch_prefix}{number}"

    def pr_number_for(self, branch: str) -> Optional[int]:
        """Inverse of branch_for; None when the branch is not a mirror branch."""
        if not branch.startswith(self.branch_prefix):
            return None
        suffix = branch[len(self.branch_prefix):]
        return int(suffix) if suffix.isdigit() else None


@dataclass(frozen=True)
class CommitInfo:
    sha: Sha
    parents: tuple[Sha, ...]
    message: str
    signed_by: Optional[str] = None


def synthetic_merge_message(pr: PullRequest) -> str:
    """Message for bot-created CI merge commits.

    Deliberately distinct from the real merge-commit subject format so that
    release-branch scans never mistake a CI merge for a shipped PR.
    """
    return f"CI merge: PR #{pr.number} ({pr.head_sha} into {pr.base_branch})"


class Gateway:
    """Capability surface every forge backend implements.

    Implementations must be safe for concurrent calls.
    """

    # -- queries (read-only) ------------------------------------------------

    def get_pull_request(self, repo: RepoRef, number: int) -> PullRequest:
        raise NotImplementedError

    def is_team_member(self, team: str, login: str) -> bool:
        raise NotImplementedError

    def list_open_prs_with_label(self, repo: RepoRef, label: str) -> list[int]:
        raise NotImplementedError

    def label_applied_since(
        self, repo: RepoRef, number: int, label: str
    ) -> Optional[datetime]:
        raise NotImplementedError

    def bot_comments(self, repo: RepoRef, number: int, marker: str) -> list[Comment]:
        raise NotImplementedError

    def get_job_log(self, repo: RepoRef, log_ref: str) -> str:
        raise NotImplementedError

    def list_board_cards(self, repo: RepoRef, board: str) -> list[BoardCard]:
        raise NotImplementedError

    def get_milestone(self, repo: RepoRef, milestone_id: int) -> MilestoneRef:
        raise NotImplementedError

    def required_checks_status(self, repo: RepoRef, sha: Sha) -> ChecksRollup:
        raise NotImplementedError

    def get_commit(self, repo: RepoRef, sha: Sha) -> Optional[CommitInfo]:
        raise NotImplementedError

    def list_check_reports(self, repo: RepoRef, sha: Sha) -> list[CheckReport]:
        raise NotImplementedError

    def base_job_status(
        self, repo: RepoRef, branch: str, job_name: str
    ) -> Optional[JobStatus]:
        raise NotImplementedError

    def list_pipeline_jobs(self, repo: RepoRef, ref: str) -> list[CiJob]:
        raise NotImplementedError

    # -- mutations (idempotent under key) -----------------------------------

    def post_comment(self, repo: RepoRef, number: int, body: str, *, key: str) -> int:
        raise NotImplementedError

    def add_label(self, repo: RepoRef, number: int, label: str, *, key: str) -> None:
        raise NotImplementedError

    def remove_label(self, repo: RepoRef, number: int, label: str, *, key: str) -> None:
        raise NotImplementedError

    def set_milestone(
        self, repo: RepoRef, number: int, milestone_title: str, *, key: str
    ) -> None:
        raise NotImplementedError

    def close_pr(self, repo: RepoRef, number: int, *, key: str) -> None:
        raise NotImplementedError

    def merge_pull_request(
        self, repo: RepoRef, number: int, message: str, *, key: str
    ) -> Sha:
        raise NotImplementedError

    def push_merged_branch(
        self, pr: PullRequest, target: MirrorTarget, *, key: str
    ) -> Sha:
        raise NotImplementedError

    def delete_branch(self, repo: RepoRef, branch: str, *, key: str) -> None:
        raise NotImplementedError

    def report_check(self, repo: RepoRef, report: CheckReport, *, key: str) -> None:
        raise NotImplementedError

    def report_status(
        self,
        repo: RepoRef,
        sha: Sha,
        state: str,
        context: str,
        description: str,
        *,
        key: str,
    ) -> None:
        raise NotImplementedError

    def create_card(
        self, repo: RepoRef, board: str, column: str, number: int, *, key: str
    ) -> None:
        raise NotImplementedError

    def move_card(
        self, repo: RepoRef, board: str, number: int, to_column: str, *, key: str
    ) -> None:
        raise NotImplementedError

    def delete_card(self, repo: RepoRef, board: str, number: int, *, key: str) -> None:
        raise NotImplementedError

    def trigger_pipeline(self, repo: RepoRef, ref: str, job: str, *, key: str) -> None:
        raise NotImplementedError


_ZERO_SHA = Sha("0" * 40)


class DryRunGateway(Gateway):
    """Delegates queries to a real gateway, records mutations without executing.

    `planned` accumulates (method name, kwargs) pairs in call order, matching
    the shape produced by forgebot.engine.op_call, so a dry run can be compared
    one-for-one against what a real run would execute.
    """

    def __init__(self, inner: Gateway):
        self.inner = inner
        self.planned: list[tuple[str, dict]] = []

    # queries pass straight through

    def get_pull_request(self, repo, number):
        return self.inner.get_pull_request(repo, number)

    def is_team_member(self, team, login):
        return self.inner.is_team_member(team, login)

    def list_open_prs_with_label(self, repo, label):
        return self.inner.list_open_prs_with_label(repo, label)

    def label_applied_since(self, repo, number, label):
        return self.inner.label_applied_since(repo, number, label)

    def bot_comments(self, repo, number, marker):
        return self.inner.bot_comments(repo, number, marker)

    def get_job_log(self, repo, log_ref):
        return self.inner.get_job_log(repo, log_ref)

    def list_board_cards(self, repo, board):
        return self.inner.list_board_cards(repo, board)

    def get_milestone(self, repo, milestone_id):
        return self.inner.get_milestone(repo, milestone_id)

    def required_checks_status(self, repo, sha):
        return self.inner.required_checks_status(repo, sha)

    def get_commit(self, repo, sha):
        return self.inner.get_commit(repo, sha)

    def list_check_reports(self, repo, sha):
        return self.inner.list_check_reports(repo, sha)

    def base_job_status(self, repo, branch, job_name):
        return self.inner.base_job_status(repo, branch, job_name)

    def list_pipeline_jobs(self, repo, ref):
        return self.inner.list_pipeline_jobs(repo, ref)

    def _record(self, method: str, **kwargs) -> None:
        kwargs.pop("key", None)
        self.planned.append((method, kwargs))

    def post_comment(self, repo, number, body, *, key):
        self._record("post_comment", repo=repo, number=number, body=body, key=key)
        return 0

    def add_label(self, repo, number, label, *, key):
        self._record("add_label", repo=repo, number=number, label=label, key=key)

    def remove_label(self, repo, number, label, *, key):
        self._record("remove_label", repo=repo, number=number, label=label, key=key)

    def set_milestone(self, repo, number, milestone_title, *, key):
        self._record(
            "set_milestone",
            repo=repo,
            number=number,
            milestone_title=milestone_title,
            key=key,
        )

    def close_pr(self, repo, number, *, key):
        self._record("close_pr", repo=repo, number=number, key=key)

    def merge_pull_request(self, repo, number, message, *, key):
        self._record(
            "merge_pull_request", repo=repo, number=number, message=message, key=key
        )
        return _ZERO_SHA

    def push_merged_branch(self, pr, target, *, key):
        self._record("push_merged_branch", pr=pr, target=target, key=key)
        return _ZERO_SHA

    def delete_branch(self, repo, branch, *, key):
        self._record("delete_branch", repo=repo, branch=branch, key=key)

    def report_check(self, repo, report, *, key):
        self._record("report_check", repo=repo, report=report, key=key)

    def report_status(self, repo, sha, state, context, description, *, key):
        self._record(
            "report_status",
            repo=repo,
            sha=sha,
            state=state,
            context=context,
            description=description,
            key=key,
        )

    def create_card(self, repo, board, column, number, *, key):
        self._record(
            "create_card", repo=repo, board=board, column=column, number=number, key=key
        )

    def move_card(self, repo, board, number, to_column, *, key):
        self._record(
            "move_card", repo=repo, board=board, number=number, to_column=to_column, key=key
        )

    def delete_card(self, repo, board, number, *, key):
        self._record("delete_card", repo=repo, board=board, number=number, key=key)

    def trigger_pipeline(self, repo, ref, job, *, key):
        self._record("trigger_pipeline", repo=repo, ref=ref, job=job, key=key)
