"""HTTP-backed gateway: one client per forge kind, composed behind Gateway.

The github-like client serves forge state (PRs, labels, comments, milestones,
boards, statuses, checks); the PR snapshot uses a single batched typed query
so one request fetches exactly the fields the workflows need. The gitlab-like
client serves CI (synthetic merge pushes, job logs, pipeline triggers).

Both clients bound in-flight requests per host and retry throttled responses
(429, or 403 carrying a rate-limit message) with 1 s / 2 s / 4 s backoff, at
most three times. Mutations carry their idempotency key in a header so the
forge can deduplicate replays.
"""

from __future__ import annotations

import logging
import threading
import time
from datetime import datetime
from typing import Any, Callable, Optional
from urllib.parse import quote

import httpx

from forgebot.gateway.base import (
    CommitInfo,
    Gateway,
    GatewayError,
    MergeConflictError,
    MirrorTarget,
    NotFoundError,
    PermissionDeniedError,
    TransientGatewayError,
    UnknownTeamError,
    synthetic_merge_message,
)
from forgebot.model import (
    Artifact,
    BoardCard,
    CheckConclusion,
    CheckReport,
    ChecksRollup,
    CiJob,
    Comment,
    JobStatus,
    MilestoneRef,
    PrState,
    PullRequest,
    RepoRef,
    ReviewDecision,
    Sha,
)

logger = logging.getLogger(__name__)

MAX_INFLIGHT_PER_HOST = 8
_BACKOFF_SECONDS = (1.0, 2.0, 4.0)
IDEMPOTENCY_HEADER = "Idempotency-Key"

PR_SNAPSHOT_QUERY = """\
query PullRequestSnapshot($owner: String!, $name: String!, $number: Int!) {
  repository(owner: $owner, name: $name) {
    pullRequest(number: $number) {
      number
      title
      body
      author { login }
      baseRefName
      headRefOid
      isDraft
      state
      headRepository { nameWithOwner }
      labels { name }
      milestone { id title description }
      assignees { login }
      latestReviews { author { login } state }
    }
  }
}
"""


def _is_throttle(response: httpx.Response) -> bool:
    if response.status_code == 429:
        return True
    if response.status_code != 403:
        return False
    try:
        message = response.json().get("message", "")
    except ValueError:
        return False
    return "rate limit" in message.lower()


class _HttpClient:
    """Shared request plumbing: auth, throttle retry, host concurrency bound."""

    def __init__(
        self,
        base_url: str,
        headers: dict[str, str],
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        max_inflight: int = MAX_INFLIGHT_PER_HOST,
    ):
        self._client = httpx.Client(
            base_url=base_url, headers=headers, transport=transport, timeout=30.0
        )
        self._sleep = sleep
        self._inflight = threading.BoundedSemaphore(max_inflight)

    def close(self) -> None:
        self._client.close()

    def request(
        self,
        method: str,
        path: str,
        *,
        json_body: Any = None,
        params: Optional[dict] = None,
        key: Optional[str] = None,
        allow: frozenset[int] = frozenset(),
    ) -> httpx.Response:
        headers = {IDEMPOTENCY_HEADER: key} if key else None
        response: Optional[httpx.Response] = None
        for attempt in range(len(_BACKOFF_SECONDS) + 1):
            with self._inflight:
                try:
                    response = self._client.request(
                        method, path, json=json_body, params=params, headers=headers
                    )
                except httpx.TransportError as exc:
                    raise TransientGatewayError(f"{method} {path}: {exc}") from exc
            if not _is_throttle(response) or attempt == len(_BACKOFF_SECONDS):
                break
            delay = _BACKOFF_SECONDS[attempt]
            logger.info("throttled on %s %s, retrying in %.0fs", method, path, delay)
            self._sleep(delay)
        assert response is not None
        status = response.status_code
        if _is_throttle(response):
            raise TransientGatewayError(f"{method} {path}: still throttled after retries")
        if 200 <= status < 300 or status in allow:
            return response
        if status == 404:
            raise NotFoundError(f"{method} {path}: 404")
        if status in (401, 403):
            raise PermissionDeniedError(f"{method} {path}: {status}")
        if status >= 500:
            raise TransientGatewayError(f"{method} {path}: {status}")
        raise GatewayError(f"{method} {path}: unexpected status {status}")


def _parse_commit(data: dict) -> CommitInfo:
    return CommitInfo(
        sha=Sha(data["sha"]),
        parents=tuple(Sha(p["sha"]) for p in data["parents"]),
        message=data["message"],
        signed_by=data.get("signed_by"),
    )


class GithubLikeClient:
    """Forge-state half of the HTTP gateway."""

    def __init__(
        self,
        base_url: str,
        token: str,
        bot_login: str,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        membership_ttl: float = 60.0,
        time_fn: Callable[[], float] = time.monotonic,
    ):
        self._http = _HttpClient(
            base_url,
            {"Authorization": f"Bearer {token}", "Accept": "application/json"},
            transport=transport,
            sleep=sleep,
        )
        self.bot_login = bot_login
        self._membership_ttl = membership_ttl
        self._time = time_fn
        self._membership_cache: dict[tuple[str, str], tuple[float, bool]] = {}
        self._cache_lock = threading.Lock()

    def close(self) -> None:
        self._http.close()

    # -- queries --

    def get_pull_request(self, repo: RepoRef, number: int) -> PullRequest:
        response = self._http.request(
            "POST",
            "/graphql",
            json_body={
                "query": PR_SNAPSHOT_QUERY,
                "operationName": "PullRequestSnapshot",
                "variables": {"owner": repo.owner, "name": repo.name, "number": number},
            },
        )
        node = response.json()["data"]["repository"]["pullRequest"]
        if node is None:
            raise NotFoundError(f"no PR #{number} in {repo}")
        milestone = None
        if node["milestone"] is not None:
            milestone = MilestoneRef(
                node["milestone"]["id"],
                node["milestone"]["title"],
                node["milestone"].get("description", ""),
            )
        return PullRequest(
            repo=repo,
            number=node["number"],
            title=node["title"],
            body=node["body"],
            author=node["author"]["login"],
            base_branch=node["baseRefName"],
            head_sha=Sha(node["headRefOid"]),
            head_repo=RepoRef.parse(node["headRepository"]["nameWithOwner"]),
            draft=node["isDraft"],
            state=PrState(node["state"].lower()),
            labels=frozenset(label["name"] for label in node["labels"]),
            milestone=milestone,
            assignees=frozenset(a["login"] for a in node["assignees"]),
            reviews={
                r["author"]["login"]: ReviewDecision(r["state"].lower())
                for r in node["latestReviews"]
            },
        )

    def is_team_member(self, team: str, login: str) -> bool:
        cache_key = (team, login)
        now = self._time()
        with self._cache_lock:
            cached = self._membership_cache.get(cache_key)
            if cached and cached[0] > now:
                return cached[1]
        try:
            response = self._http.request(
                "GET", f"/teams/{quote(team)}/members/{quote(login)}"
            )
        except NotFoundError as exc:
            raise UnknownTeamError(f"no team {team!r}") from exc
        member = bool(response.json()["member"])
        with self._cache_lock:
            self._membership_cache[cache_key] = (now + self._membership_ttl, member)
        return member

    def list_open_prs_with_label(self, repo: RepoRef, label: str) -> list[int]:
        response = self._http.request(
            "GET",
            f"/repos/{repo.owner}/{repo.name}/issues",
            params={"label": label, "state": "open"},
        )
        return sorted(item["number"] for item in response.json())

    def label_applied_since(
        self, repo: RepoRef, number: int, label: str
    ) -> Optional[datetime]:
        response = self._http.request(
            "GET", f"/repos/{repo.owner}/{repo.name}/issues/{number}/labels"
        )
        for item in response.json():
            if item["name"] == label:
                return datetime.fromisoformat(item["applied_at"].replace("Z", "+00:00"))
        return None

    def bot_comments(self, repo: RepoRef, number: int, marker: str) -> list[Comment]:
        response = self._http.request(
            "GET",
            f"/repos/{repo.owner}/{repo.name}/issues/{number}/comments",
            params={"author": self.bot_login},
        )
        comments = []
        for item in response.json():
            if item["user"]["login"] != self.bot_login or marker not in item["body"]:
                continue
            comments.append(
                Comment(
                    id=item["id"],
                    author=item["user"]["login"],
                    body=item["body"],
                    created_at=datetime.fromisoformat(
                        item["created_at"].replace("Z", "+00:00")
                    ),
                    target=(repo, number),
                )
            )
        return comments

    def list_board_cards(self, repo: RepoRef, board: str) -> list[BoardCard]:
        response = self._http.request(
            "GET",
            f"/repos/{repo.owner}/{repo.name}/boards/{quote(board)}/cards",
            allow=frozenset({404}),
        )
        if response.status_code == 404:
            return []
        return [
            BoardCard(board, item["column"], (repo, item["number"]))
            for item in response.json()
        ]

    def get_milestone(self, repo: RepoRef, milestone_id: int) -> MilestoneRef:
        response = self._http.request(
            "GET", f"/repos/{repo.owner}/{repo.name}/milestones/{milestone_id}"
        )
        data = response.json()
        return MilestoneRef(data["id"], data["title"], data.get("description", ""))

    def required_checks_status(self, repo: RepoRef, sha: Sha) -> ChecksRollup:
        response = self._http.request(
            "GET", f"/repos/{repo.owner}/{repo.name}/commits/{sha}/status"
        )
        return ChecksRollup(response.json()["state"])

    def get_commit(self, repo: RepoRef, sha: Sha) -> Optional[CommitInfo]:
        response = self._http.request(
            "GET",
            f"/repos/{repo.owner}/{repo.name}/commits/{sha}",
            allow=frozenset({404}),
        )
        if response.status_code == 404:
            return None
        return _parse_commit(response.json())

    def list_check_reports(self, repo: RepoRef, sha: Sha) -> list[CheckReport]:
        response = self._http.request(
            "GET", f"/repos/{repo.owner}/{repo.name}/commits/{sha}/check-runs"
        )
        return [
            CheckReport(
                name=item["name"],
                conclusion=CheckConclusion(item["conclusion"]),
                title=item["title"],
                summary=item["summary"],
                target_sha=sha,
            )
            for item in response.json()["check_runs"]
        ]

    # -- mutations --

    def post_comment(self, repo: RepoRef, number: int, body: str, *, key: str) -> int:
        response = self._http.request(
            "POST",
            f"/repos/{repo.owner}/{repo.name}/issues/{number}/comments",
            json_body={"body": body},
            key=key,
        )
        return response.json()["id"]

    def add_label(self, repo: RepoRef, number: int, label: str, *, key: str) -> None:
        self._http.request(
            "POST",
            f"/repos/{repo.owner}/{repo.name}/issues/{number}/labels",
            json_body={"labels": [label]},
            key=key,
        )

    def remove_label(self, repo: RepoRef, number: int, label: str, *, key: str) -> None:
        self._http.request(
            "DELETE",
            f"/repos/{repo.owner}/{repo.name}/issues/{number}/labels/{quote(label)}",
            key=key,
        )

    def set_milestone(
        self, repo: RepoRef, number: int, milestone_title: str, *, key: str
    ) -> None:
        self._http.request(
            "PATCH",
            f"/repos/{repo.owner}/{repo.name}/issues/{number}",
            json_body={"milestone_title": milestone_title},
            key=key,
        )

    def close_pr(self, repo: RepoRef, number: int, *, key: str) -> None:
        self._http.request(
            "PATCH",
            f"/repos/{repo.owner}/{repo.name}/pulls/{number}",
            json_body={"state": "closed"},
            key=key,
        )

    def merge_pull_request(
        self, repo: RepoRef, number: int, message: str, *, key: str
    ) -> Sha:
        response = self._http.request(
            "PUT",
            f"/repos/{repo.owner}/{repo.name}/pulls/{number}/merge",
            json_body={"commit_message": message},
            key=key,
            allow=frozenset({405, 409}),
        )
        if response.status_code in (405, 409):
            raise MergeConflictError(f"PR #{number} is not mergeable")
        return Sha(response.json()["sha"])

    def report_check(self, repo: RepoRef, report: CheckReport, *, key: str) -> None:
        self._http.request(
            "POST",
            f"/repos/{repo.owner}/{repo.name}/check-runs",
            json_body={
                "name": report.name,
                "head_sha": report.target_sha.value,
                "conclusion": report.conclusion.value,
                "title": report.title,
                "summary": report.summary,
            },
            key=key,
        )

    def report_status(
        self, repo: RepoRef, sha: Sha, state: str, context: str, description: str, *, key: str
    ) -> None:
        self._http.request(
            "POST",
            f"/repos/{repo.owner}/{repo.name}/statuses/{sha}",
            json_body={"state": state, "context": context, "description": description},
            key=key,
        )

    def create_card(
        self, repo: RepoRef, board: str, column: str, number: int, *, key: str
    ) -> None:
        self._http.request(
            "POST",
            f"/repos/{repo.owner}/{repo.name}/boards/{quote(board)}/cards",
            json_body={"column": column, "number": number},
            key=key,
        )

    def move_card(
        self, repo: RepoRef, board: str, number: int, to_column: str, *, key: str
    ) -> None:
        self._http.request(
            "PATCH",
            f"/repos/{repo.owner}/{repo.name}/boards/{quote(board)}/cards/{number}",
            json_body={"column": to_column},
            key=key,
        )

    def delete_card(self, repo: RepoRef, board: str, number: int, *, key: str) -> None:
        self._http.request(
            "DELETE",
            f"/repos/{repo.owner}/{repo.name}/boards/{quote(board)}/cards/{number}",
            key=key,
        )


class GitlabLikeClient:
    """CI half of the HTTP gateway."""

    def __init__(
        self,
        base_url: str,
        token: str,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._http = _HttpClient(
            base_url, {"Private-Token": token}, transport=transport, sleep=sleep
        )

    def close(self) -> None:
        self._http.close()

    @staticmethod
    def _project(repo: RepoRef) -> str:
        return quote(str(repo), safe="")

    def push_merged_branch(
        self, pr: PullRequest, target: MirrorTarget, *, key: str
    ) -> Sha:
        response = self._http.request(
            "POST",
            f"/projects/{self._project(target.ci_repo)}/merge-branch",
            json_body={
                "branch": target.branch_for(pr.number),
                "base_branch": pr.base_branch,
                "head_sha": pr.head_sha.value,
                "message": synthetic_merge_message(pr),
            },
            key=key,
            allow=frozenset({409}),
        )
        if response.status_code == 409:
            raise MergeConflictError(
                f"PR #{pr.number} head conflicts with {pr.base_branch}"
            )
        return Sha(response.json()["sha"])

    def get_job_log(self, repo: RepoRef, log_ref: str) -> str:
        response = self._http.request(
            "GET", f"/projects/{self._project(repo)}/jobs/{log_ref}/log"
        )
        return response.text

    def trigger_pipeline(self, repo: RepoRef, ref: str, job: str, *, key: str) -> None:
        self._http.request(
            "POST",
            f"/projects/{self._project(repo)}/pipeline-trigger",
            json_body={"ref": ref, "job": job},
            key=key,
        )

    def delete_branch(self, repo: RepoRef, branch: str, *, key: str) -> None:
        self._http.request(
            "DELETE",
            f"/projects/{self._project(repo)}/branches/{quote(branch, safe='')}",
            key=key,
        )

    def base_job_status(
        self, repo: RepoRef, branch: str, job_name: str
    ) -> Optional[JobStatus]:
        response = self._http.request(
            "GET",
            f"/projects/{self._project(repo)}/jobs/latest",
            params={"ref": branch, "name": job_name},
            allow=frozenset({404}),
        )
        if response.status_code == 404:
            return None
        return JobStatus(response.json()["status"])

    def list_pipeline_jobs(self, repo: RepoRef, ref: str) -> list[CiJob]:
        response = self._http.request(
            "GET",
            f"/projects/{self._project(repo)}/pipelines/latest",
            params={"ref": ref},
            allow=frozenset({404}),
        )
        if response.status_code == 404:
            return []
        data = response.json()
        return [
            CiJob(
                pipeline_id=data["id"],
                name=job["name"],
                status=JobStatus(job["status"]),
                log_ref=str(job["id"]),
                artifacts=tuple(
                    Artifact(a["path"], a["url"]) for a in job.get("artifacts", [])
                ),
                tested_sha=Sha(data["sha"]),
            )
            for job in data["jobs"]
        ]

    def get_commit(self, repo: RepoRef, sha: Sha) -> Optional[CommitInfo]:
        response = self._http.request(
            "GET",
            f"/projects/{self._project(repo)}/commits/{sha}",
            allow=frozenset({404}),
        )
        if response.status_code == 404:
            return None
        return _parse_commit(response.json())


class HttpForgeGateway(Gateway):
    """Composite gateway: forge state via the github-like client, CI via the
    gitlab-like client, commits routed by which forge owns the repo."""

    def __init__(
        self, forge: GithubLikeClient, ci: GitlabLikeClient, ci_repos: frozenset[str]
    ):
        self.forge = forge
        self.ci = ci
        self._ci_repos = ci_repos

    def close(self) -> None:
        self.forge.close()
        self.ci.close()

    # -- queries --

    def get_pull_request(self, repo, number):
        return self.forge.get_pull_request(repo, number)

    def is_team_member(self, team, login):
        return self.forge.is_team_member(team, login)

    def list_open_prs_with_label(self, repo, label):
        return self.forge.list_open_prs_with_label(repo, label)

    def label_applied_since(self, repo, number, label):
        return self.forge.label_applied_since(repo, number, label)

    def bot_comments(self, repo, number, marker):
        return self.forge.bot_comments(repo, number, marker)

    def get_job_log(self, repo, log_ref):
        return self.ci.get_job_log(repo, log_ref)

    def list_board_cards(self, repo, board):
        return self.forge.list_board_cards(repo, board)

    def get_milestone(self, repo, milestone_id):
        return self.forge.get_milestone(repo, milestone_id)

    def required_checks_status(self, repo, sha):
        return self.forge.required_checks_status(repo, sha)

    def get_commit(self, repo, sha):
        if str(repo) in self._ci_repos:
            return self.ci.get_commit(repo, sha)
        return self.forge.get_commit(repo, sha)

    def list_check_reports(self, repo, sha):
        return self.forge.list_check_reports(repo, sha)

    def base_job_status(self, repo, branch, job_name):
        return self.ci.base_job_status(repo, branch, job_name)

    def list_pipeline_jobs(self, repo, ref):
        return self.ci.list_pipeline_jobs(repo, ref)

    # -- mutations --

    def post_comment(self, repo, number, body, *, key):
        return self.forge.post_comment(repo, number, body, key=key)

    def add_label(self, repo, number, label, *, key):
        return self.forge.add_label(repo, number, label, key=key)

    def remove_label(self, repo, number, label, *, key):
        return self.forge.remove_label(repo, number, label, key=key)

    def set_milestone(self, repo, number, milestone_title, *, key):
        return self.forge.set_milestone(repo, number, milestone_title, key=key)

    def close_pr(self, repo, number, *, key):
        return self.forge.close_pr(repo, number, key=key)

    def merge_pull_request(self, repo, number, message, *, key):
        return self.forge.merge_pull_request(repo, number, message, key=key)

    def push_merged_branch(self, pr, target, *, key):
        return self.ci.push_merged_branch(pr, target, key=key)

    def delete_branch(self, repo, branch, *, key):
        return self.ci.delete_branch(repo, branch, key=key)

    def report_check(self, repo, report, *, key):
        return self.forge.report_check(repo, report, key=key)

    def report_status(self, repo, sha, state, context, description, *, key):
        return self.forge.report_status(repo, sha, state, context, description, key=key)

    def create_card(self, repo, board, column, number, *, key):
        return self.forge.create_card(repo, board, column, number, key=key)

    def move_card(self, repo, board, number, to_column, *, key):
        return self.forge.move_card(repo, board, number, to_column, key=key)

    def delete_card(self, repo, board, number, *, key):
        return self.forge.delete_card(repo, board, number, key=key)

    def trigger_pipeline(self, repo, ref, job, *, key):
        return self.ci.trigger_pipeline(repo, ref, job, key=key)
