"""Trigger-action core: workflow registry, guard evaluation, action execution.

A workflow is an event filter, an ordered list of state-trigger guards, and a
plan. Guards query the gateway and either produce a fact or refuse (raising
Refusal), which skips the workflow for this event. Plans issue actions through
a PlanContext; each action executes immediately via the gateway and its
outcome is handed back, so a plan can make later actions depend on earlier
ones. Actions are independent by default: a gateway failure is recorded on the
outcome and the plan keeps running unless it chooses to stop.

Dispatch is idempotent per delivery id (bounded LRU memory) and serialized per
SerializationKey; events with distinct keys may run in parallel.
"""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Union

from forgebot.gateway.base import Gateway, GatewayError, MirrorTarget
from forgebot.model import (
    CheckReport,
    Event,
    EventKind,
    PullRequest,
    RepoRef,
    Sha,
)

logger = logging.getLogger(__name__)

DEFAULT_SEEN_CAPACITY = 10_000


class Refusal(Exception):
    """Raised by a guard when the workflow does not apply to this event."""


class DuplicateWorkflowError(ValueError):
    pass


# -- actions ----------------------------------------------------------------


@dataclass(frozen=True)
class PostComment:
    repo: RepoRef
    number: int
    body: str


@dataclass(frozen=True)
class AddLabel:
    repo: RepoRef
    number: int
    label: str


@dataclass(frozen=True)
class RemoveLabel:
    repo: RepoRef
    number: int
    label: str


@dataclass(frozen=True)
class SetMilestone:
    repo: RepoRef
    number: int
    milestone_title: str


@dataclass(frozen=True)
class ClosePr:
    repo: RepoRef
    number: int


@dataclass(frozen=True)
class MergePr:
    repo: RepoRef
    number: int
    message: str


@dataclass(frozen=True)
class PushBranch:
    """Push a fresh synthetic merge of the PR head onto its mirror branch."""

    pr: PullRequest
    target: MirrorTarget


@dataclass(frozen=True)
class DeleteBranch:
    repo: RepoRef
    branch: str


@dataclass(frozen=True)
class ReportCheck:
    repo: RepoRef
    report: CheckReport


@dataclass(frozen=True)
class ReportStatus:
    repo: RepoRef
    sha: Sha
    state: str
    context: str
    description: str


@dataclass(frozen=True)
class CreateCard:
    repo: RepoRef
    board: str
    column: str
    number: int


@dataclass(frozen=True)
class MoveCard:
    repo: RepoRef
    board: str
    number: int
    to_column: str


@dataclass(frozen=True)
class DeleteCard:
    repo: RepoRef
    board: str
    number: int


@dataclass(frozen=True)
class TriggerPipeline:
    repo: RepoRef
    ref: str
    job: str


ActionOp = Union[
    PostComment,
    AddLabel,
    RemoveLabel,
    SetMilestone,
    ClosePr,
    MergePr,
    PushBranch,
    DeleteBranch,
    ReportCheck,
    ReportStatus,
    CreateCard,
    MoveCard,
    DeleteCard,
    TriggerPipeline,
]

_OP_METHODS: dict[type, str] = {
    PostComment: "post_comment",
    AddLabel: "add_label",
    RemoveLabel: "remove_label",
    SetMilestone: "set_milestone",
    ClosePr: "close_pr",
    MergePr: "merge_pull_request",
    PushBranch: "push_merged_branch",
    DeleteBranch: "delete_branch",
    ReportCheck: "report_check",
    ReportStatus: "report_status",
    CreateCard: "create_card",
    MoveCard: "move_card",
    DeleteCard: "delete_card",
    TriggerPipeline: "trigger_pipeline",
}

_OP_KWARG_NAMES: dict[type, tuple[str, ...]] = {
    PostComment: ("repo", "number", "body"),
    AddLabel: ("repo", "number", "label"),
    RemoveLabel: ("repo", "number", "label"),
    SetMilestone: ("repo", "number", "milestone_title"),
    ClosePr: ("repo", "number"),
    MergePr: ("repo", "number", "message"),
    PushBranch: ("pr", "target"),
    DeleteBranch: ("repo", "branch"),
    ReportCheck: ("repo", "report"),
    ReportStatus: ("repo", "sha", "state", "context", "description"),
    CreateCard: ("repo", "board", "column", "number"),
    MoveCard: ("repo", "board", "number", "to_column"),
    DeleteCard: ("repo", "board", "number"),
    TriggerPipeline: ("repo", "ref", "job"),
}

def op_call(op: ActionOp) -> tuple[str, dict[str, Any]]:
    """Map an action op to the gateway method name and keyword arguments."""
    method = _OP_METHODS[type(op)]
    kwargs = {name: getattr(op, name) for name in _OP_KWARG_NAMES[type(op)]}
    return method, kwargs


@dataclass(frozen=True)
class Action:
    """One executed (attempted) mutation, attributable and idempotent."""

    workflow: str
    op: ActionOp
    idempotency_key: str


@dataclass
class ActionOutcome:
    action: Action
    value: Any = None
    error: Optional[Exception] = None

    @property
    def ok(self) -> bool:
        return self.error is None


# -- workflows ---------------------------------------------------------------


@dataclass(frozen=True)
class Guard:
    """A named state trigger: reads forge state, yields a fact or refuses.

    Guards run in order and see the facts produced by earlier guards.
    """

    name: str
    query: Callable[[Gateway, Event, Mapping[str, Any]], Any]


class PlanContext:
    """Hands a plan its event and facts, and executes its actions in order."""

    def __init__(self, workflow: str, event: Event, gateway: Gateway, facts: dict):
        self.workflow = workflow
        self.event = event
        self.gateway = gateway
        self.facts = facts
        self.executed: list[Action] = []
        self.failures: list[ActionOutcome] = []

    def __getitem__(self, fact_name: str) -> Any:
        return self.facts[fact_name]

    def run(self, op: ActionOp) -> ActionOutcome:
        """Execute one action through the gateway.

        Gateway errors never propagate: they come back on the outcome so the
        plan decides whether later actions still make sense.
        """
        index = len(self.executed)
        key = f"{self.workflow}:{self.event.delivery_id}:{index}"
        action = Action(self.workflow, op, key)
        self.executed.append(action)
        method, kwargs = op_call(op)
        outcome = ActionOutcome(action)
        try:
            outcome.value = getattr(self.gateway, method)(**kwargs, key=key)
        except GatewayError as exc:
            outcome.error = exc
            self.failures.append(outcome)
            logger.warning(
                "action %s failed in workflow %s: %s", method, self.workflow, exc
            )
        return outcome


@dataclass(frozen=True)
class Workflow:
    name: str
    event_filter: Callable[[Event], bool]
    guards: tuple[Guard, ...]
    plan: Callable[[PlanContext], None]


# -- dispatch ----------------------------------------------------------------


@dataclass(frozen=True)
class SerializationKey:
    """Unit of mutual exclusion for event handling."""

    repo: RepoRef
    scope: str


def serialization_key(event: Event) -> SerializationKey:
    p = event.payload
    if event.kind in (
        EventKind.PR_OPENED,
        EventKind.PR_SYNCHRONIZED,
        EventKind.PR_CLOSED,
        EventKind.COMMENT_CREATED,
    ):
        return SerializationKey(p.repo, f"pr:{p.number}")
    if event.kind in (EventKind.PIPELINE_COMPLETED, EventKind.JOB_COMPLETED):
        return SerializationKey(p.repo, f"branch:{p.ref}")
    if event.kind is EventKind.PUSH_TO_BRANCH:
        return SerializationKey(p.repo, f"branch:{p.branch}")
    # Card removals and scheduled ticks touch repo-wide state.
    return SerializationKey(p.repo, "repo")


class Engine:
    """Registry plus dispatcher. Safe for concurrent dispatch calls."""

    def __init__(self, seen_capacity: int = DEFAULT_SEEN_CAPACITY):
        self._workflows: "OrderedDict[str, Workflow]" = OrderedDict()
        self._seen: "OrderedDict[str, None]" = OrderedDict()
        self._seen_capacity = seen_capacity
        self._seen_lock = threading.Lock()
        self._key_locks: dict[SerializationKey, threading.Lock] = {}
        self._key_locks_lock = threading.Lock()

    def register(self, workflow: Workflow) -> "Engine":
        if workflow.name in self._workflows:
            raise DuplicateWorkflowError(f"workflow {workflow.name!r} already registered")
        self._workflows[workflow.name] = workflow
        return self

    @property
    def workflows(self) -> list[Workflow]:
        return list(self._workflows.values())

    def _already_seen(self, delivery_id: str) -> bool:
        with self._seen_lock:
            if delivery_id in self._seen:
                self._seen.move_to_end(delivery_id)
                return True
            self._seen[delivery_id] = None
            while len(self._seen) > self._seen_capacity:
                self._seen.popitem(last=False)
            return False

    def _lock_for(self, key: SerializationKey) -> threading.Lock:
        with self._key_locks_lock:
            lock = self._key_locks.get(key)
            if lock is None:
                lock = self._key_locks[key] = threading.Lock()
            return lock

    def dispatch(self, event: Event, gateway: Gateway) -> list[Action]:
        """Run every registered workflow that accepts the event.

        Returns the concatenated actions executed, in order. A delivery id
        seen before executes nothing.
        """
        if self._already_seen(event.delivery_id):
            logger.debug("duplicate delivery %s ignored", event.delivery_id)
            return []
        executed: list[Action] = []
        with self._lock_for(serialization_key(event)):
            for workflow in self._workflows.values():
                if not workflow.event_filter(event):
                    continue
                facts: dict[str, Any] = {}
                try:
                    for guard in workflow.guards:
                        facts[guard.name] = guard.query(gateway, event, facts)
                except Refusal as refusal:
                    logger.debug(
                        "workflow %s refused event %s: %s",
                        workflow.name,
                        event.delivery_id,
                        refusal,
                    )
                    continue
                except GatewayError as exc:
                    logger.warning(
                        "guard failure skips workflow %s for event %s: %s",
                        workflow.name,
                        event.delivery_id,
                        exc,
                    )
                    continue
                ctx = PlanContext(workflow.name, event, gateway, facts)
                try:
                    workflow.plan(ctx)
                except Exception:
                    logger.exception(
                        "plan of workflow %s crashed on event %s",
                        workflow.name,
                        event.delivery_id,
                    )
                executed.extend(ctx.executed)
        return executed
