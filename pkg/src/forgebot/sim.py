"""Deterministic in-memory forge + CI implementing the gateway capabilities.

One SimulatedForge instance plays both the main forge and the CI forge:
repositories, commit DAG, PRs, comments, labels with application times,
milestones, boards, teams, pipelines with logs, and a controllable clock.

Every state change funnels through one mutation log. Bot mutations arrive via
the Gateway methods (attributed to the bot login, carrying their idempotency
key); user-driven happenings arrive via drive methods like open_pr and
user_comment, which also emit normalized events for the engine. Replaying the
log onto a fresh instance reproduces the final state, which is what makes the
log usable as a test oracle.

Merge conflicts are declared fixtures: a set of (sha, sha) pairs that refuse
to merge. Nothing here does content-level merging.
"""

from __future__ import annotations

import copy
import hashlib
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Any, Iterable, Optional, Sequence

from forgebot.engine import Action, Engine
from forgebot.gateway.base import (
    Gateway,
    GatewayError,
    MergeConflictError,
    MirrorTarget,
    NotFoundError,
    UnknownTeamError,
    CommitInfo,
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
    Event,
    EventKind,
    JobStatus,
    MilestoneRef,
    PrPayload,
    PrState,
    PullRequest,
    PushPayload,
    PushedCommit,
    PipelinePayload,
    JobPayload,
    CardRemovedPayload,
    CommentPayload,
    TickPayload,
    RepoRef,
    ReviewDecision,
    Sha,
)

SIM_START = datetime(2024, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class JobSpec:
    """Scripted outcome of one CI job."""

    name: str
    status: JobStatus
    log: str = ""
    artifacts: tuple[Artifact, ...] = ()


class ScriptError(ValueError):
    """A fixture line could not be applied."""


def _iso(ts: datetime) -> str:
    return ts.isoformat()


def _from_iso(text: str) -> datetime:
    return datetime.fromisoformat(text)


class SimulatedForge(Gateway):
    """In-memory forge; all calls serialize on one internal lock."""

    def __init__(
        self,
        bot_login: str = "forgebot",
        start: datetime = SIM_START,
        tick_interval: timedelta = timedelta(days=1),
    ):
        self.bot_login = bot_login
        self.start = start
        self.tick_interval = tick_interval
        self._lock = threading.RLock()
        self._state: dict[str, Any] = {
            "clock": _iso(start),
            "seq": 0,
            "repos": {},
            "commits": {},
            "teams": {},
            "conflicts": [],
        }
        self._log: list[dict[str, Any]] = []
        self._applied: dict[str, Any] = {}
        self._pending: list[Event] = []
        self._delivery_seq = 0

    # -- introspection -------------------------------------------------------

    @property
    def now(self) -> datetime:
        with self._lock:
            return _from_iso(self._state["clock"])

    def action_log(self) -> list[dict[str, Any]]:
        """Ordered record of every mutation with actor attribution."""
        with self._lock:
            return copy.deepcopy(self._log)

    def bot_actions(self) -> list[dict[str, Any]]:
        return [e for e in self.action_log() if e["actor"] == self.bot_login]

    def state_digest(self) -> str:
        """Canonical serialization of the full forge state."""
        with self._lock:
            return json.dumps(self._state, sort_keys=True, separators=(",", ":"))

    def drain_events(self) -> list[Event]:
        with self._lock:
            events, self._pending = self._pending, []
            return events

    def replay_log(self, entries: Iterable[dict[str, Any]]) -> None:
        """Apply a recorded mutation log onto this (fresh) instance."""
        with self._lock:
            for entry in entries:
                self._log.append(copy.deepcopy(entry))
                self._apply(entry["op"], entry["args"])

    # -- internals -------------------------------------------------------------

    def _emit(self, kind: EventKind, payload) -> Event:
        self._delivery_seq += 1
        event = Event(
            delivery_id=f"sim-{self._delivery_seq:06d}",
            kind=kind,
            payload=payload,
            received_at=_from_iso(self._state["clock"]),
        )
        self._pending.append(event)
        return event

    def _commit_entry(self, actor: str, op: str, args: dict, key: Optional[str] = None):
        entry = {"actor": actor, "op": op, "args": args}
        if key is not None:
            entry["key"] = key
        self._log.append(entry)
        return self._apply(op, args)

    def _mutate(self, op: str, args: dict, *, key: str):
        """Bot-attributed mutation with idempotency-key memory."""
        if key in self._applied:
            return self._applied[key]
        result = self._commit_entry(self.bot_login, op, args, key=key)
        self._applied[key] = result
        return result

    def _repo(self, repo: RepoRef) -> dict:
        try:
            return self._state["repos"][str(repo)]
        except KeyError:
            raise NotFoundError(f"unknown repo {repo}") from None

    def _pr(self, repo: RepoRef, number: int) -> dict:
        pr = self._repo(repo)["prs"].get(number)
        if pr is None:
            raise NotFoundError(f"no PR #{number} in {repo}")
        return pr

    def _new_sha(self) -> str:
        self._state["seq"] += 1
        return hashlib.sha1(str(self._state["seq"]).encode()).hexdigest()

    def _new_commit(
        self, parents: list[str], message: str, signed_by: Optional[str] = None
    ) -> str:
        sha = self._new_sha()
        self._state["commits"][sha] = {
            "parents": parents,
            "message": message,
            "signed_by": signed_by,
        }
        return sha

    def _conflicted(self, a: str, b: str) -> bool:
        return sorted((a, b)) in self._state["conflicts"]

    def _declare_conflict(self, a: str, b: str) -> None:
        pair = sorted((a, b))
        if pair not in self._state["conflicts"]:
            self._state["conflicts"].append(pair)
            self._state["conflicts"].sort()

    def _board(self, repo: dict, board: str) -> dict:
        return repo["boards"].setdefault(board, {"columns": [], "cards": {}})

    def _ensure_column(self, board_rec: dict, column: str) -> None:
        if column not in board_rec["columns"]:
            board_rec["columns"].append(column)

    def _set_label(self, repo_rec: dict, pr: dict, label: str) -> None:
        if label not in pr["labels"]:
            pr["labels"].append(label)
            pr["labels"].sort()
            repo_rec["label_applied"][f"{pr['number']}|{label}"] = self._state["clock"]

    def _unset_label(self, repo_rec: dict, pr: dict, label: str) -> None:
        if label in pr["labels"]:
            pr["labels"].remove(label)
            repo_rec["label_applied"].pop(f"{pr['number']}|{label}", None)

    def _apply(self, op: str, a: dict):
        """Apply one mutation to state. Deterministic; no events, no checks."""
        state = self._state
        if op == "create_repo":
            root = self._new_commit([], f"root of {a['repo']}")
            state["repos"][a["repo"]] = {
                "default_branch": a["default_branch"],
                "branches": {a["default_branch"]: root},
                "prs": {},
                "comments": {},
                "next_comment_id": 1,
                "label_applied": {},
                "milestones": {},
                "boards": {},
                "statuses": {},
                "checks": {},
                "pipelines": {},
                "logs": {},
                "triggered": [],
                "next_pipeline_id": 1,
                "next_job_id": 1,
            }
            return root
        if op == "create_team":
            state["teams"][a["team"]] = sorted(a["members"])
            return None
        if op == "create_milestone":
            repo = state["repos"][a["repo"]]
            repo["milestones"][a["id"]] = {
                "id": a["id"],
                "title": a["title"],
                "description": a.get("description", ""),
            }
            return None
        if op == "declare_conflict":
            self._declare_conflict(a["sha_a"], a["sha_b"])
            return None
        if op == "advance_clock":
            state["clock"] = _iso(_from_iso(state["clock"]) + timedelta(seconds=a["seconds"]))
            return None
        if op == "open_pr":
            repo = state["repos"][a["repo"]]
            base_head = repo["branches"][a["base_branch"]]
            head = self._new_commit([base_head], f"head of PR #{a['number']}")
            repo["prs"][a["number"]] = {
                "number": a["number"],
                "title": a["title"],
                "body": a.get("body", ""),
                "author": a["author"],
                "base_branch": a["base_branch"],
                "head_sha": head,
                "head_repo": a.get("head_repo", a["repo"]),
                "draft": a.get("draft", False),
                "state": "open",
                "labels": [],
                "milestone_id": a.get("milestone_id"),
                "assignees": sorted(a.get("assignees", [])),
                "reviews": {},
            }
            if a.get("conflicted"):
                self._declare_conflict(base_head, head)
            return head
        if op == "update_pr":
            repo = state["repos"][a["repo"]]
            pr = repo["prs"][a["number"]]
            head = self._new_commit([pr["head_sha"]], f"update of PR #{a['number']}")
            pr["head_sha"] = head
            if a.get("conflicted"):
                base_head = repo["branches"][pr["base_branch"]]
                self._declare_conflict(base_head, head)
            return head
        if op == "set_pr_milestone":
            self._state["repos"][a["repo"]]["prs"][a["number"]]["milestone_id"] = a[
                "milestone_id"
            ]
            return None
        if op == "add_review":
            pr = state["repos"][a["repo"]]["prs"][a["number"]]
            pr["reviews"][a["reviewer"]] = a["decision"]
            return None
        if op == "push_commits":
            repo = state["repos"][a["repo"]]
            head = repo["branches"].get(a["branch"])
            if head is None:
                head = repo["branches"][repo["default_branch"]]
            created = []
            for message in a["messages"]:
                head = self._new_commit([head], message)
                created.append(head)
            repo["branches"][a["branch"]] = head
            return created
        if op == "run_pipeline":
            repo = state["repos"][a["repo"]]
            pid = repo["next_pipeline_id"]
            repo["next_pipeline_id"] += 1
            jobs = []
            for spec in a["jobs"]:
                jid = repo["next_job_id"]
                repo["next_job_id"] += 1
                log_ref = f"job-{jid}"
                if spec.get("log"):
                    repo["logs"][log_ref] = spec["log"]
                jobs.append(
                    {
                        "id": jid,
                        "name": spec["name"],
                        "status": spec["status"],
                        "log_ref": log_ref,
                        "artifacts": [list(x) for x in spec.get("artifacts", [])],
                    }
                )
            statuses = [j["status"] for j in jobs]
            overall = (
                "failed"
                if "failed" in statuses
                else ("canceled" if "canceled" in statuses else "success")
            )
            repo["pipelines"][pid] = {
                "id": pid,
                "ref": a["ref"],
                "sha": a["sha"],
                "status": overall,
                "jobs": jobs,
            }
            return pid
        if op == "post_comment":
            repo = state["repos"][a["repo"]]
            cid = repo["next_comment_id"]
            repo["next_comment_id"] += 1
            repo["comments"].setdefault(a["number"], []).append(
                {
                    "id": cid,
                    "author": a["author"],
                    "body": a["body"],
                    "created_at": state["clock"],
                }
            )
            return cid
        if op == "add_label":
            repo = state["repos"][a["repo"]]
            self._set_label(repo, repo["prs"][a["number"]], a["label"])
            return None
        if op == "remove_label":
            repo = state["repos"][a["repo"]]
            self._unset_label(repo, repo["prs"][a["number"]], a["label"])
            return None
        if op == "set_milestone":
            state["repos"][a["repo"]]["prs"][a["number"]]["milestone_id"] = a[
                "milestone_id"
            ]
            return None
        if op == "close_pr":
            state["repos"][a["repo"]]["prs"][a["number"]]["state"] = "closed"
            return None
        if op == "merge_pr":
            repo = state["repos"][a["repo"]]
            pr = repo["prs"][a["number"]]
            base_head = repo["branches"][pr["base_branch"]]
            merged = self._new_commit(
                [base_head, pr["head_sha"]], a["message"], signed_by="simulator"
            )
            repo["branches"][pr["base_branch"]] = merged
            pr["state"] = "merged"
            return merged
        if op == "push_merged_branch":
            base_repo = state["repos"][a["base_repo"]]
            ci_repo = state["repos"][a["ci_repo"]]
            base_head = base_repo["branches"][a["base_branch"]]
            merged = self._new_commit([base_head, a["head_sha"]], a["message"])
            ci_repo["branches"][a["branch"]] = merged
            return merged
        if op == "new_merge_commit":
            return self._new_commit(a["parents"], a["message"], a.get("signed_by"))
        if op == "delete_branch":
            del state["repos"][a["repo"]]["branches"][a["branch"]]
            return None
        if op == "report_check":
            repo = state["repos"][a["repo"]]
            repo["checks"].setdefault(a["sha"], {})[a["name"]] = {
                "conclusion": a["conclusion"],
                "title": a["title"],
                "summary": a["summary"],
            }
            return None
        if op == "report_status":
            repo = state["repos"][a["repo"]]
            repo["statuses"].setdefault(a["sha"], {})[a["context"]] = {
                "state": a["state"],
                "description": a["description"],
            }
            return None
        if op == "create_card":
            repo = state["repos"][a["repo"]]
            board = self._board(repo, a["board"])
            self._ensure_column(board, a["column"])
            board["cards"][a["number"]] = a["column"]
            return None
        if op == "move_card":
            repo = state["repos"][a["repo"]]
            board = repo["boards"][a["board"]]
            self._ensure_column(board, a["to_column"])
            board["cards"][a["number"]] = a["to_column"]
            return None
        if op == "delete_card":
            del state["repos"][a["repo"]]["boards"][a["board"]]["cards"][a["number"]]
            return None
        if op == "trigger_pipeline":
            state["repos"][a["repo"]]["triggered"].append({"ref": a["ref"], "job": a["job"]})
            return None
        raise ScriptError(f"unknown mutation op {op!r}")

    # -- drive API: user-visible happenings that also emit events -------------

    def create_repo(self, repo: RepoRef, default_branch: str = "master") -> None:
        with self._lock:
            self._commit_entry(
                "setup", "create_repo", {"repo": str(repo), "default_branch": default_branch}
            )

    def create_team(self, team: str, members: Sequence[str]) -> None:
        with self._lock:
            self._commit_entry("setup", "create_team", {"team": team, "members": list(members)})

    def create_milestone(
        self, repo: RepoRef, milestone_id: int, title: str, description: str = ""
    ) -> None:
        with self._lock:
            self._repo(repo)
            self._commit_entry(
                "setup",
                "create_milestone",
                {"repo": str(repo), "id": milestone_id, "title": title, "description": description},
            )

    def declare_conflict(self, sha_a: Sha, sha_b: Sha) -> None:
        with self._lock:
            self._commit_entry(
                "setup", "declare_conflict", {"sha_a": sha_a.value, "sha_b": sha_b.value}
            )

    def open_pr(
        self,
        repo: RepoRef,
        number: int,
        title: str,
        author: str,
        base_branch: str = "master",
        body: str = "",
        draft: bool = False,
        conflicted: bool = False,
        milestone_id: Optional[int] = None,
        assignees: Sequence[str] = (),
        head_repo: Optional[str] = None,
    ) -> Event:
        with self._lock:
            repo_rec = self._repo(repo)
            if number in repo_rec["prs"]:
                raise ScriptError(f"PR #{number} already exists in {repo}")
            if base_branch not in repo_rec["branches"]:
                raise ScriptError(f"no branch {base_branch!r} in {repo}")
            self._commit_entry(
                author,
                "open_pr",
                {
                    "repo": str(repo),
                    "number": number,
                    "title": title,
                    "body": body,
                    "author": author,
                    "base_branch": base_branch,
                    "draft": draft,
                    "conflicted": conflicted,
                    "milestone_id": milestone_id,
                    "assignees": list(assignees),
                    "head_repo": head_repo or str(repo),
                },
            )
            return self._emit(EventKind.PR_OPENED, PrPayload(repo, number))

    def update_pr(self, repo: RepoRef, number: int, conflicted: bool = False) -> Event:
        with self._lock:
            author = self._pr(repo, number)["author"]
            self._commit_entry(
                author,
                "update_pr",
                {"repo": str(repo), "number": number, "conflicted": conflicted},
            )
            return self._emit(EventKind.PR_SYNCHRONIZED, PrPayload(repo, number))

    def set_pr_milestone(self, repo: RepoRef, number: int, milestone_id: int) -> None:
        with self._lock:
            repo_rec = self._repo(repo)
            if milestone_id not in repo_rec["milestones"]:
                raise ScriptError(f"no milestone {milestone_id} in {repo}")
            self._pr(repo, number)
            self._commit_entry(
                "maintainer",
                "set_pr_milestone",
                {"repo": str(repo), "number": number, "milestone_id": milestone_id},
            )

    def add_review(
        self, repo: RepoRef, number: int, reviewer: str, decision: ReviewDecision
    ) -> None:
        with self._lock:
            self._pr(repo, number)
            self._commit_entry(
                reviewer,
                "add_review",
                {
                    "repo": str(repo),
                    "number": number,
                    "reviewer": reviewer,
                    "decision": decision.value,
                },
            )

    def user_add_label(self, repo: RepoRef, number: int, label: str, actor: str = "maintainer") -> None:
        with self._lock:
            self._pr(repo, number)
            self._commit_entry(
                actor, "add_label", {"repo": str(repo), "number": number, "label": label}
            )

    def user_remove_label(self, repo: RepoRef, number: int, label: str, actor: str = "maintainer") -> None:
        with self._lock:
            self._pr(repo, number)
            self._commit_entry(
                actor, "remove_label", {"repo": str(repo), "number": number, "label": label}
            )

    def user_comment(self, repo: RepoRef, number: int, author: str, body: str) -> Event:
        with self._lock:
            self._pr(repo, number)
            cid = self._commit_entry(
                author,
                "post_comment",
                {"repo": str(repo), "number": number, "author": author, "body": body},
            )
            comment = Comment(
                id=cid,
                author=author,
                body=body,
                created_at=_from_iso(self._state["clock"]),
                target=(repo, number),
            )
            return self._emit(EventKind.COMMENT_CREATED, CommentPayload(repo, number, comment))

    def push_commits(self, repo: RepoRef, branch: str, messages: Sequence[str]) -> Event:
        with self._lock:
            self._repo(repo)
            shas = self._commit_entry(
                "maintainer",
                "push_commits",
                {"repo": str(repo), "branch": branch, "messages": list(messages)},
            )
            commits = tuple(
                PushedCommit(Sha(sha), message)
                for sha, message in zip(shas, messages)
            )
            return self._emit(EventKind.PUSH_TO_BRANCH, PushPayload(repo, branch, commits))

    def run_pipeline(self, repo: RepoRef, ref: str, jobs: Sequence[JobSpec]) -> list[Event]:
        """Script a finished pipeline on the current head of `ref`."""
        with self._lock:
            repo_rec = self._repo(repo)
            sha = repo_rec["branches"].get(ref)
            if sha is None:
                raise ScriptError(f"no branch {ref!r} in {repo}")
            pid = self._commit_entry(
                "ci",
                "run_pipeline",
                {
                    "repo": str(repo),
                    "ref": ref,
                    "sha": sha,
                    "jobs": [
                        {
                            "name": j.name,
                            "status": j.status.value,
                            "log": j.log,
                            "artifacts": [[x.path, x.url] for x in j.artifacts],
                        }
                        for j in jobs
                    ],
                },
            )
            pipeline = repo_rec["pipelines"][pid]
            events = []
            for job in pipeline["jobs"]:
                events.append(
                    self._emit(
                        EventKind.JOB_COMPLETED,
                        JobPayload(
                            repo,
                            ref,
                            CiJob(
                                pipeline_id=pid,
                                name=job["name"],
                                status=JobStatus(job["status"]),
                                log_ref=job["log_ref"],
                                artifacts=tuple(Artifact(p, u) for p, u in job["artifacts"]),
                                tested_sha=Sha(sha),
                            ),
                        ),
                    )
                )
            events.append(
                self._emit(
                    EventKind.PIPELINE_COMPLETED,
                    PipelinePayload(repo, pid, ref, Sha(sha), JobStatus(pipeline["status"])),
                )
            )
            return events

    def user_remove_card(
        self, repo: RepoRef, board: str, number: int, actor: str
    ) -> Event:
        with self._lock:
            repo_rec = self._repo(repo)
            board_rec = repo_rec["boards"].get(board)
            if board_rec is None or number not in board_rec["cards"]:
                raise ScriptError(f"no card for #{number} on board {board!r}")
            column = board_rec["cards"][number]
            self._commit_entry(
                actor, "delete_card", {"repo": str(repo), "board": board, "number": number}
            )
            return self._emit(
                EventKind.CARD_REMOVED,
                CardRemovedPayload(repo, board, column, number, actor),
            )

    def advance_clock(self, delta: timedelta) -> datetime:
        """Advance the clock, emitting any ScheduledTick that became due."""
        if delta < timedelta(0):
            raise ValueError("clock only moves forward")
        with self._lock:
            old = _from_iso(self._state["clock"])
            self._commit_entry(
                "clock", "advance_clock", {"seconds": delta.total_seconds()}
            )
            new = _from_iso(self._state["clock"])
            elapsed = old - self.start
            ticks_done = elapsed // self.tick_interval
            due = self.start + (ticks_done + 1) * self.tick_interval
            repos = sorted(self._state["repos"])
            while due <= new:
                for name in repos:
                    self._emit(
                        EventKind.SCHEDULED_TICK,
                        TickPayload(RepoRef.parse(name), due),
                    )
                due += self.tick_interval
            return new

    def simulate_merge(self, base_head: Sha, pr_head: Sha, message: str) -> Sha:
        """Create a merge commit of two existing commits (no branch moves)."""
        with self._lock:
            for sha in (base_head, pr_head):
                if sha.value not in self._state["commits"]:
                    raise GatewayError(f"unknown commit {sha}")
            if self._conflicted(base_head.value, pr_head.value):
                raise MergeConflictError(f"{base_head} conflicts with {pr_head}")
            sha = self._commit_entry(
                "simulator",
                "new_merge_commit",
                {
                    "parents": [base_head.value, pr_head.value],
                    "message": message,
                    "signed_by": "simulator",
                },
            )
            return Sha(sha)

    # -- gateway queries -------------------------------------------------------

    def get_pull_request(self, repo: RepoRef, number: int) -> PullRequest:
        with self._lock:
            repo_rec = self._repo(repo)
            pr = self._pr(repo, number)
            milestone = None
            if pr["milestone_id"] is not None:
                m = repo_rec["milestones"][pr["milestone_id"]]
                milestone = MilestoneRef(m["id"], m["title"], m["description"])
            return PullRequest(
                repo=repo,
                number=pr["number"],
                title=pr["title"],
                body=pr["body"],
                author=pr["author"],
                base_branch=pr["base_branch"],
                head_sha=Sha(pr["head_sha"]),
                head_repo=RepoRef.parse(pr["head_repo"]),
                draft=pr["draft"],
                state=PrState(pr["state"]),
                labels=frozenset(pr["labels"]),
                milestone=milestone,
                assignees=frozenset(pr["assignees"]),
                reviews={
                    login: ReviewDecision(decision)
                    for login, decision in pr["reviews"].items()
                },
            )

    def is_team_member(self, team: str, login: str) -> bool:
        with self._lock:
            members = self._state["teams"].get(team)
            if members is None:
                raise UnknownTeamError(f"no team {team!r}")
            return login in members

    def list_open_prs_with_label(self, repo: RepoRef, label: str) -> list[int]:
        with self._lock:
            return sorted(
                pr["number"]
                for pr in self._repo(repo)["prs"].values()
                if pr["state"] == "open" and label in pr["labels"]
            )

    def label_applied_since(
        self, repo: RepoRef, number: int, label: str
    ) -> Optional[datetime]:
        with self._lock:
            ts = self._repo(repo)["label_applied"].get(f"{number}|{label}")
            return _from_iso(ts) if ts else None

    def bot_comments(self, repo: RepoRef, number: int, marker: str) -> list[Comment]:
        with self._lock:
            out = []
            for c in self._repo(repo)["comments"].get(number, []):
                if c["author"] == self.bot_login and marker in c["body"]:
                    out.append(
                        Comment(
                            id=c["id"],
                            author=c["author"],
                            body=c["body"],
                            created_at=_from_iso(c["created_at"]),
                            target=(repo, number),
                        )
                    )
            return out

    def get_job_log(self, repo: RepoRef, log_ref: str) -> str:
        with self._lock:
            log = self._repo(repo)["logs"].get(log_ref)
            if log is None:
                raise NotFoundError(f"no log {log_ref!r} in {repo}")
            return log

    def list_board_cards(self, repo: RepoRef, board: str) -> list[BoardCard]:
        with self._lock:
            board_rec = self._repo(repo)["boards"].get(board)
            if board_rec is None:
                return []
            return [
                BoardCard(board, column, (repo, number))
                for number, column in sorted(board_rec["cards"].items())
            ]

    def get_milestone(self, repo: RepoRef, milestone_id: int) -> MilestoneRef:
        with self._lock:
            m = self._repo(repo)["milestones"].get(milestone_id)
            if m is None:
                raise NotFoundError(f"no milestone {milestone_id} in {repo}")
            return MilestoneRef(m["id"], m["title"], m["description"])

    def required_checks_status(self, repo: RepoRef, sha: Sha) -> ChecksRollup:
        with self._lock:
            repo_rec = self._repo(repo)
            states = [
                s["state"] for s in repo_rec["statuses"].get(sha.value, {}).values()
            ]
            conclusions = [
                c["conclusion"] for c in repo_rec["checks"].get(sha.value, {}).values()
            ]
            if any(s in ("failure", "error") for s in states) or "failure" in conclusions:
                return ChecksRollup.FAILURE
            if "pending" in states:
                return ChecksRollup.PENDING
            return ChecksRollup.SUCCESS

    def get_commit(self, repo: RepoRef, sha: Sha) -> Optional[CommitInfo]:
        with self._lock:
            c = self._state["commits"].get(sha.value)
            if c is None:
                return None
            return CommitInfo(
                sha=sha,
                parents=tuple(Sha(p) for p in c["parents"]),
                message=c["message"],
                signed_by=c["signed_by"],
            )

    def list_check_reports(self, repo: RepoRef, sha: Sha) -> list[CheckReport]:
        with self._lock:
            checks = self._repo(repo)["checks"].get(sha.value, {})
            return [
                CheckReport(
                    name=name,
                    conclusion=CheckConclusion(c["conclusion"]),
                    title=c["title"],
                    summary=c["summary"],
                    target_sha=sha,
                )
                for name, c in sorted(checks.items())
            ]

    def base_job_status(
        self, repo: RepoRef, branch: str, job_name: str
    ) -> Optional[JobStatus]:
        with self._lock:
            pipelines = self._repo(repo)["pipelines"]
            for pid in sorted(pipelines, reverse=True):
                pipeline = pipelines[pid]
                if pipeline["ref"] != branch:
                    continue
                for job in pipeline["jobs"]:
                    if job["name"] == job_name:
                        return JobStatus(job["status"])
            return None

    def list_pipeline_jobs(self, repo: RepoRef, ref: str) -> list[CiJob]:
        with self._lock:
            pipelines = self._repo(repo)["pipelines"]
            for pid in sorted(pipelines, reverse=True):
                pipeline = pipelines[pid]
                if pipeline["ref"] != ref:
                    continue
                return [
                    CiJob(
                        pipeline_id=pid,
                        name=job["name"],
                        status=JobStatus(job["status"]),
                        log_ref=job["log_ref"],
                        artifacts=tuple(Artifact(p, u) for p, u in job["artifacts"]),
                        tested_sha=Sha(pipeline["sha"]),
                    )
                    for job in pipeline["jobs"]
                ]
            return []

    # -- gateway mutations -------------------------------------------------------

    def post_comment(self, repo: RepoRef, number: int, body: str, *, key: str) -> int:
        with self._lock:
            self._pr(repo, number)
            return self._mutate(
                "post_comment",
                {"repo": str(repo), "number": number, "author": self.bot_login, "body": body},
                key=key,
            )

    def add_label(self, repo: RepoRef, number: int, label: str, *, key: str) -> None:
        with self._lock:
            self._pr(repo, number)
            return self._mutate(
                "add_label", {"repo": str(repo), "number": number, "label": label}, key=key
            )

    def remove_label(self, repo: RepoRef, number: int, label: str, *, key: str) -> None:
        with self._lock:
            self._pr(repo, number)
            return self._mutate(
                "remove_label", {"repo": str(repo), "number": number, "label": label}, key=key
            )

    def set_milestone(
        self, repo: RepoRef, number: int, milestone_title: str, *, key: str
    ) -> None:
        with self._lock:
            repo_rec = self._repo(repo)
            self._pr(repo, number)
            for m in repo_rec["milestones"].values():
                if m["title"] == milestone_title:
                    return self._mutate(
                        "set_milestone",
                        {"repo": str(repo), "number": number, "milestone_id": m["id"]},
                        key=key,
                    )
            raise NotFoundError(f"no milestone titled {milestone_title!r} in {repo}")

    def close_pr(self, repo: RepoRef, number: int, *, key: str) -> None:
        with self._lock:
            if key in self._applied:
                return self._applied[key]
            pr = self._pr(repo, number)
            if pr["state"] != "open":
                raise GatewayError(f"PR #{number} is not open")
            return self._mutate("close_pr", {"repo": str(repo), "number": number}, key=key)

    def merge_pull_request(
        self, repo: RepoRef, number: int, message: str, *, key: str
    ) -> Sha:
        with self._lock:
            if key in self._applied:
                return Sha(self._applied[key])
            repo_rec = self._repo(repo)
            pr = self._pr(repo, number)
            if pr["state"] != "open":
                raise GatewayError(f"PR #{number} is not open")
            base_head = repo_rec["branches"][pr["base_branch"]]
            if self._conflicted(base_head, pr["head_sha"]):
                raise MergeConflictError(f"PR #{number} conflicts with {pr['base_branch']}")
            sha = self._mutate(
                "merge_pr", {"repo": str(repo), "number": number, "message": message}, key=key
            )
            return Sha(sha)

    def push_merged_branch(
        self, pr: PullRequest, target: MirrorTarget, *, key: str
    ) -> Sha:
        with self._lock:
            if key in self._applied:
                return Sha(self._applied[key])
            base_repo = self._repo(pr.repo)
            self._repo(target.ci_repo)
            base_head = base_repo["branches"][pr.base_branch]
            if self._conflicted(base_head, pr.head_sha.value):
                raise MergeConflictError(
                    f"PR #{pr.number} head conflicts with {pr.base_branch}"
                )
            sha = self._mutate(
                "push_merged_branch",
                {
                    "ci_repo": str(target.ci_repo),
                    "base_repo": str(pr.repo),
                    "base_branch": pr.base_branch,
                    "head_sha": pr.head_sha.value,
                    "branch": target.branch_for(pr.number),
                    "message": synthetic_merge_message(pr),
                },
                key=key,
            )
            return Sha(sha)

    def delete_branch(self, repo: RepoRef, branch: str, *, key: str) -> None:
        with self._lock:
            if key in self._applied:
                return self._applied[key]
            if branch not in self._repo(repo)["branches"]:
                raise NotFoundError(f"no branch {branch!r} in {repo}")
            return self._mutate(
                "delete_branch", {"repo": str(repo), "branch": branch}, key=key
            )

    def report_check(self, repo: RepoRef, report: CheckReport, *, key: str) -> None:
        with self._lock:
            self._repo(repo)
            return self._mutate(
                "report_check",
                {
                    "repo": str(repo),
                    "sha": report.target_sha.value,
                    "name": report.name,
                    "conclusion": report.conclusion.value,
                    "title": report.title,
                    "summary": report.summary,
                },
                key=key,
            )

    def report_status(
        self, repo: RepoRef, sha: Sha, state: str, context: str, description: str, *, key: str
    ) -> None:
        with self._lock:
            self._repo(repo)
            return self._mutate(
                "report_status",
                {
                    "repo": str(repo),
                    "sha": sha.value,
                    "state": state,
                    "context": context,
                    "description": description,
                },
                key=key,
            )

    def create_card(
        self, repo: RepoRef, board: str, column: str, number: int, *, key: str
    ) -> None:
        with self._lock:
            if key in self._applied:
                return self._applied[key]
            board_rec = self._repo(repo)["boards"].get(board)
            if board_rec and number in board_rec["cards"]:
                raise GatewayError(f"card for #{number} already on board {board!r}")
            return self._mutate(
                "create_card",
                {"repo": str(repo), "board": board, "column": column, "number": number},
                key=key,
            )

    def move_card(
        self, repo: RepoRef, board: str, number: int, to_column: str, *, key: str
    ) -> None:
        with self._lock:
            if key in self._applied:
                return self._applied[key]
            board_rec = self._repo(repo)["boards"].get(board)
            if board_rec is None or number not in board_rec["cards"]:
                raise NotFoundError(f"no card for #{number} on board {board!r}")
            return self._mutate(
                "move_card",
                {"repo": str(repo), "board": board, "number": number, "to_column": to_column},
                key=key,
            )

    def delete_card(self, repo: RepoRef, board: str, number: int, *, key: str) -> None:
        with self._lock:
            if key in self._applied:
                return self._applied[key]
            board_rec = self._repo(repo)["boards"].get(board)
            if board_rec is None or number not in board_rec["cards"]:
                raise NotFoundError(f"no card for #{number} on board {board!r}")
            return self._mutate(
                "delete_card", {"repo": str(repo), "board": board, "number": number}, key=key
            )

    def trigger_pipeline(self, repo: RepoRef, ref: str, job: str, *, key: str) -> None:
        with self._lock:
            self._repo(repo)
            return self._mutate(
                "trigger_pipeline", {"repo": str(repo), "ref": ref, "job": job}, key=key
            )


# -- event scripts -------------------------------------------------------------


def pump(sim: SimulatedForge, engine: Engine) -> list[Action]:
    """Dispatch pending simulator events (and any they cause) until quiet."""
    executed: list[Action] = []
    while True:
        events = sim.drain_events()
        if not events:
            return executed
        for event in events:
            executed.extend(engine.dispatch(event, sim))


def apply_script_line(sim: SimulatedForge, line: dict) -> None:
    """Apply one fixture-script line to the simulator."""
    if not isinstance(line, dict) or "op" not in line:
        raise ScriptError("line must be an object with an 'op' field")
    op = line["op"]
    args = {k: v for k, v in line.items() if k != "op"}
    try:
        if op == "create_repo":
            sim.create_repo(RepoRef.parse(args["repo"]), args.get("default_branch", "master"))
        elif op == "create_team":
            sim.create_team(args["team"], args["members"])
        elif op == "create_milestone":
            sim.create_milestone(
                RepoRef.parse(args["repo"]),
                args["id"],
                args["title"],
                args.get("description", ""),
            )
        elif op == "open_pr":
            sim.open_pr(
                RepoRef.parse(args.pop("repo")),
                args.pop("number"),
                args.pop("title"),
                args.pop("author"),
                **args,
            )
        elif op == "update_pr":
            sim.update_pr(
                RepoRef.parse(args["repo"]), args["number"], args.get("conflicted", False)
            )
        elif op == "set_milestone":
            sim.set_pr_milestone(RepoRef.parse(args["repo"]), args["number"], args["milestone_id"])
        elif op == "add_review":
            sim.add_review(
                RepoRef.parse(args["repo"]),
                args["number"],
                args["reviewer"],
                ReviewDecision(args.get("decision", "approved")),
            )
        elif op == "add_label":
            sim.user_add_label(RepoRef.parse(args["repo"]), args["number"], args["label"])
        elif op == "remove_label":
            sim.user_remove_label(RepoRef.parse(args["repo"]), args["number"], args["label"])
        elif op == "comment":
            sim.user_comment(
                RepoRef.parse(args["repo"]), args["number"], args["author"], args["body"]
            )
        elif op == "push":
            sim.push_commits(RepoRef.parse(args["repo"]), args["branch"], args["messages"])
        elif op == "pipeline":
            sim.run_pipeline(
                RepoRef.parse(args["repo"]),
                args["ref"],
                [
                    JobSpec(
                        name=j["name"],
                        status=JobStatus(j["status"]),
                        log=j.get("log", ""),
                        artifacts=tuple(Artifact(p, u) for p, u in j.get("artifacts", [])),
                    )
                    for j in args["jobs"]
                ],
            )
        elif op == "remove_card":
            sim.user_remove_card(
                RepoRef.parse(args["repo"]), args["board"], args["number"], args["actor"]
            )
        elif op == "advance_clock":
            sim.advance_clock(
                timedelta(days=args.get("days", 0), seconds=args.get("seconds", 0))
            )
        else:
            raise ScriptError(f"unknown script op {op!r}")
    except ScriptError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScriptError(f"bad arguments for {op!r}: {exc}") from exc
