"""Comment commands, policy-checked merging, and the stale warn-and-close cycle.

The comment grammar is line-local and bit-exact: a command line is
``^\\s*@<bot_name>:\\s+<words>$``. Keywords are matched case-insensitively,
job-name arguments case-sensitively; anything with a valid prefix but
unrecognized words turns into a help request.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from typing import Optional, Sequence, Union

from forgebot.engine import (
    ClosePr,
    Guard,
    MergePr,
    PlanContext,
    PostComment,
    Refusal,
    Workflow,
)
from forgebot.gateway.base import Gateway, GatewayError, MergeConflictError
from forgebot.model import (
    CONFLICT_LABEL,
    ChecksRollup,
    Comment,
    Event,
    EventKind,
    PrState,
    PullRequest,
    RepoRef,
    ReviewDecision,
    render_merge_message,
)
from forgebot.workflows import backport, ci

logger = logging.getLogger(__name__)

STALE_WARNING_MARKER = "<!-- bot:stale-warning -->"


# -- comment commands ---------------------------------------------------------


@dataclass(frozen=True)
class MergeNow:
    pass


@dataclass(frozen=True)
class CiMinimize:
    targets: tuple[str, ...] = ()


@dataclass(frozen=True)
class Help:
    words: str = ""


CommandKind = Union[MergeNow, CiMinimize, Help]


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    issuer: str
    source_comment: Comment


def parse_commands(body: str, bot_name: str) -> list[CommandKind]:
    """Extract bot commands from a comment body, line by line."""
    line_re = re.compile(rf"^\s*@{re.escape(bot_name)}:\s+(\S.*?)\s*$")
    commands: list[CommandKind] = []
    for line in body.split("\n"):
        match = line_re.match(line)
        if not match:
            continue
        words = match.group(1)
        tokens = words.split()
        keywords = [t.lower() for t in tokens]
        if keywords == ["merge", "now"]:
            commands.append(MergeNow())
        elif keywords[:2] == ["ci", "minimize"]:
            commands.append(CiMinimize(tuple(tokens[2:])))
        else:
            commands.append(Help(words))
    return commands


def help_text(bot_name: str) -> str:
    return (
        "Supported commands (one per line):\n"
        f"- `@{bot_name}: merge now` — merge this PR once all policy checks pass\n"
        f"- `@{bot_name}: ci minimize [job ...]` — reduce failing "
        "reverse-dependency jobs to small test cases"
    )


# -- merge policy ---------------------------------------------------------------


class ViolationCode(str, Enum):
    NOT_AUTHORIZED = "not_authorized"
    SELF_MERGE = "self_merge"
    MISSING_MILESTONE = "missing_milestone"
    FORBIDDEN_LABEL = "forbidden_label"
    MISSING_APPROVAL = "missing_approval"
    CHANGES_REQUESTED = "changes_requested"
    CI_NOT_GREEN = "ci_not_green"
    DRAFT = "draft"
    BASE_BRANCH_NOT_ALLOWED = "base_branch_not_allowed"
    CONFLICT = "conflict"
    NOT_OPEN = "not_open"
    MISSING_ASSIGNEE = "missing_assignee"
    POLICY_CHECK_UNAVAILABLE = "policy_check_unavailable"


@dataclass(frozen=True)
class PolicyViolation:
    code: ViolationCode
    human_message: str
    label: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.human_message:
            raise ValueError("human_message must name the remedy")


@dataclass(frozen=True)
class MergePolicy:
    """When the bot may merge, and what it checks first."""

    merge_team: str
    allowed_base_branches: tuple[str, ...] = ()  # empty means any branch
    forbidden_label_prefix: str = "needs: "
    require_milestone: bool = True
    require_approval: bool = True
    forbid_changes_requested: bool = True
    require_ci_success: bool = True
    forbid_draft: bool = True
    forbid_self_merge: bool = True
    require_assignee: bool = False

    def __post_init__(self) -> None:
        if not self.merge_team:
            raise ValueError("merge_team must be non-empty")


def check_merge_policy(
    pr: PullRequest, issuer: str, policy: MergePolicy, gateway: Gateway
) -> list[PolicyViolation]:
    """Evaluate every enabled clause; returns all violations, authorization first.

    A gateway failure refuses the merge with a single "check unavailable"
    outcome rather than guessing.
    """
    try:
        violations: list[PolicyViolation] = []
        if not gateway.is_team_member(policy.merge_team, issuer):
            violations.append(
                PolicyViolation(
                    ViolationCode.NOT_AUTHORIZED,
                    f"@{issuer} is not in the `{policy.merge_team}` team; ask an "
                    f"authorized maintainer to merge.",
                )
            )
        if policy.forbid_self_merge and issuer == pr.author:
            violations.append(
                PolicyViolation(
                    ViolationCode.SELF_MERGE,
                    "Authors cannot merge their own PRs; ask another maintainer.",
                )
            )
        if policy.forbid_draft and pr.draft:
            violations.append(
                PolicyViolation(
                    ViolationCode.DRAFT,
                    "This PR is a draft; mark it ready for review first.",
                )
            )
        if (
            policy.allowed_base_branches
            and pr.base_branch not in policy.allowed_base_branches
        ):
            allowed = ", ".join(policy.allowed_base_branches)
            violations.append(
                PolicyViolation(
                    ViolationCode.BASE_BRANCH_NOT_ALLOWED,
                    f"Base branch `{pr.base_branch}` is not mergeable by the bot; "
                    f"allowed: {allowed}.",
                )
            )
        if policy.require_milestone and pr.milestone is None:
            violations.append(
                PolicyViolation(
                    ViolationCode.MISSING_MILESTONE,
                    "This PR has no milestone; set one before merging.",
                )
            )
        for label in sorted(pr.labels):
            if label.startswith(policy.forbidden_label_prefix):
                violations.append(
                    PolicyViolation(
                        ViolationCode.FORBIDDEN_LABEL,
                        f"Label `{label}` must be resolved and removed before merging.",
                        label=label,
                    )
                )
        approvals = [
            login
            for login, decision in pr.reviews.items()
            if decision is ReviewDecision.APPROVED
        ]
        if policy.require_approval and not approvals:
            violations.append(
                PolicyViolation(
                    ViolationCode.MISSING_APPROVAL,
                    "No approving review; get the PR approved before merging.",
                )
            )
        if policy.forbid_changes_requested and any(
            decision is ReviewDecision.CHANGES_REQUESTED
            for decision in pr.reviews.values()
        ):
            violations.append(
                PolicyViolation(
                    ViolationCode.CHANGES_REQUESTED,
                    "A reviewer requested changes; resolve the review first.",
                )
            )
        if policy.require_assignee and not pr.assignees:
            violations.append(
                PolicyViolation(
                    ViolationCode.MISSING_ASSIGNEE,
                    "This PR has no assignee; assign a shepherd before merging.",
                )
            )
        if policy.require_ci_success:
            rollup = gateway.required_checks_status(pr.repo, pr.head_sha)
            if rollup is not ChecksRollup.SUCCESS:
                violations.append(
                    PolicyViolation(
                        ViolationCode.CI_NOT_GREEN,
                        f"Required checks are {rollup.value} for {pr.head_sha}; "
                        f"wait for CI to pass.",
                    )
                )
        return violations
    except GatewayError as exc:
        logger.warning("merge policy check unavailable for #%s: %s", pr.number, exc)
        return [
            PolicyViolation(
                ViolationCode.POLICY_CHECK_UNAVAILABLE,
                "The policy check could not be completed (forge query failed); "
                "try again later.",
            )
        ]


def violations_comment(violations: Sequence[PolicyViolation]) -> str:
    lines = "\n".join(f"- {v.human_message}" for v in violations)
    return f"I cannot merge this PR yet:\n{lines}"


_NOT_OPEN = PolicyViolation(
    ViolationCode.NOT_OPEN, "This PR is not open; only open PRs can be merged."
)

_MERGE_CONFLICT = PolicyViolation(
    ViolationCode.CONFLICT,
    "The merge failed due to conflicts with the base branch; rebase and retry.",
)


# -- command workflow -----------------------------------------------------------


def commands_workflow(
    repo: RepoRef,
    bot_name: str,
    policy: Optional[MergePolicy],
    ci_settings: Optional[ci.CiSettings],
) -> Workflow:
    """Parse bot commands from new comments and act on them in order."""

    def accepts(event: Event) -> bool:
        return event.kind is EventKind.COMMENT_CREATED and event.payload.repo == repo

    def commands(gateway: Gateway, event: Event, facts) -> list[Command]:
        comment = event.payload.comment
        if comment.author == bot_name:
            raise Refusal("ignoring the bot's own comments")
        kinds = parse_commands(comment.body, bot_name)
        if not kinds:
            raise Refusal("no commands in comment")
        return [Command(kind, comment.author, comment) for kind in kinds]

    def pr(gateway: Gateway, event: Event, facts) -> PullRequest:
        return gateway.get_pull_request(repo, event.payload.number)

    def merge_facts(gateway: Gateway, event: Event, facts) -> Optional[dict]:
        if not any(isinstance(c.kind, MergeNow) for c in facts["commands"]):
            return None
        snapshot: PullRequest = facts["pr"]
        issuer = facts["commands"][0].issuer
        if snapshot.state is not PrState.OPEN:
            return {"violations": [_NOT_OPEN], "directives": [], "cards": {}}
        if policy is None:
            return None
        violations = check_merge_policy(snapshot, issuer, policy, gateway)
        directives = (
            backport.parse_backport_directives(snapshot.milestone.description)
            if snapshot.milestone is not None
            else []
        )
        cards = backport.gather_board_cards(gateway, repo, directives)
        return {"violations": violations, "directives": directives, "cards": cards}

    def minimize_facts(gateway: Gateway, event: Event, facts) -> Optional[dict]:
        if ci_settings is None:
            return None
        if not any(isinstance(c.kind, CiMinimize) for c in facts["commands"]):
            return None
        return {
            "eligible": ci.eligible_minimization_jobs(
                gateway, ci_settings, event.payload.number
            )
        }

    def plan_merge(ctx: PlanContext, snapshot: PullRequest) -> None:
        if policy is None and snapshot.state is PrState.OPEN:
            ctx.run(
                PostComment(
                    repo, snapshot.number, "Merging via the bot is not configured here."
                )
            )
            return
        merge = ctx["merge"]
        if merge["violations"]:
            ctx.run(
                PostComment(
                    repo, snapshot.number, violations_comment(merge["violations"])
                )
            )
            return
        outcome = ctx.run(
            MergePr(repo, snapshot.number, render_merge_message(snapshot))
        )
        if not outcome.ok:
            if isinstance(outcome.error, MergeConflictError):
                body = violations_comment([_MERGE_CONFLICT])
            else:
                body = f"The merge failed ({outcome.error}); try again later."
            ctx.run(PostComment(repo, snapshot.number, body))
            return
        backport.plan_backport_cards(
            ctx, repo, snapshot, merge["directives"], merge["cards"]
        )

    def plan(ctx: PlanContext) -> None:
        snapshot: PullRequest = ctx["pr"]
        for command in ctx["commands"]:
            if isinstance(command.kind, MergeNow):
                plan_merge(ctx, snapshot)
            elif isinstance(command.kind, CiMinimize):
                if ci_settings is None:
                    ctx.run(
                        PostComment(
                            repo,
                            snapshot.number,
                            "CI minimization is not configured for this repository.",
                        )
                    )
                else:
                    ci.plan_minimization(
                        ctx,
                        ci_settings,
                        snapshot.number,
                        command.kind.targets,
                        ctx["minimize"]["eligible"],
                    )
            else:
                ctx.run(PostComment(repo, snapshot.number, help_text(bot_name)))

    return Workflow(
        name=f"commands[{repo}]",
        event_filter=accepts,
        guards=(
            Guard("commands", commands),
            Guard("pr", pr),
            Guard("merge", merge_facts),
            Guard("minimize", minimize_facts),
        ),
        plan=plan,
    )


# -- stale PRs --------------------------------------------------------------------


@dataclass(frozen=True)
class StalePolicy:
    trigger_label: str = CONFLICT_LABEL
    warn_after: timedelta = timedelta(days=30)
    close_after_warning: timedelta = timedelta(days=30)
    warning_marker: str = STALE_WARNING_MARKER

    def __post_init__(self) -> None:
        if self.warn_after <= timedelta(0) or self.close_after_warning <= timedelta(0):
            raise ValueError("stale durations must be positive")


@dataclass(frozen=True)
class StaleDecision:
    number: int
    action: str  # "warn" | "close"
    labeled_at: datetime


def stale_scan_decisions(
    gateway: Gateway, repo: RepoRef, policy: StalePolicy, now: datetime
) -> list[StaleDecision]:
    """Decide, per open PR carrying the trigger label, whether to warn or close.

    The clock starts at the label's latest application; a warning only counts
    if it is newer than that, so removing and re-adding the label resets the
    whole cycle. Gateway trouble on one PR skips just that PR.
    """
    decisions: list[StaleDecision] = []
    for number in gateway.list_open_prs_with_label(repo, policy.trigger_label):
        try:
            labeled_at = gateway.label_applied_since(repo, number, policy.trigger_label)
            if labeled_at is None:
                continue
            warnings = [
                c
                for c in gateway.bot_comments(repo, number, policy.warning_marker)
                if c.created_at >= labeled_at
            ]
            if warnings:
                warned_at = max(c.created_at for c in warnings)
                if now - warned_at >= policy.close_after_warning:
                    decisions.append(StaleDecision(number, "close", labeled_at))
            elif now - labeled_at >= policy.warn_after:
                decisions.append(StaleDecision(number, "warn", labeled_at))
        except GatewayError as exc:
            logger.warning("stale scan skipped #%s in %s: %s", number, repo, exc)
    return decisions


def _stale_warning_body(policy: StalePolicy) -> str:
    warn_days = policy.warn_after.days
    grace_days = policy.close_after_warning.days
    return (
        f"{policy.warning_marker}\n"
        f"This PR has carried the `{policy.trigger_label}` label for more than "
        f"{warn_days} days. Please resolve the conflicts with the base branch; "
        f"otherwise it will be closed after a further {grace_days}-day grace "
        f"period."
    )


def _stale_closing_body(policy: StalePolicy) -> str:
    return (
        f"Closing this PR: the `{policy.trigger_label}` label stayed for the "
        f"whole grace period after the warning. Feel free to reopen once the "
        f"conflicts are resolved."
    )


def stale_workflow(repo: RepoRef, policy: StalePolicy) -> Workflow:
    """Daily scan enforcing the warn-then-close policy for conflicted PRs."""

    def accepts(event: Event) -> bool:
        return event.kind is EventKind.SCHEDULED_TICK and event.payload.repo == repo

    def due(gateway: Gateway, event: Event, facts) -> list[StaleDecision]:
        decisions = stale_scan_decisions(
            gateway, repo, policy, event.payload.scheduled_for
        )
        if not decisions:
            raise Refusal("no stale PRs due")
        return decisions

    def plan(ctx: PlanContext) -> None:
        for decision in ctx["due"]:
            if decision.action == "warn":
                ctx.run(PostComment(repo, decision.number, _stale_warning_body(policy)))
            else:
                ctx.run(PostComment(repo, decision.number, _stale_closing_body(policy)))
                ctx.run(ClosePr(repo, decision.number))

    return Workflow(
        name=f"stale[{repo}]",
        event_filter=accepts,
        guards=(Guard("due", due),),
        plan=plan,
    )
