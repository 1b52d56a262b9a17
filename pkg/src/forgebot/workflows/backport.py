"""Backport tracking driven by milestones and project boards.

A milestone description can carry directives of the form

    backport: <branch>
    backport: <branch>; on-reject: <milestone title>

When a PR with such a milestone merges, a card lands in the "Backport
requested" column of the branch's board. A push to the release branch whose
merge-commit subjects name the PR moves the card to "Shipped". A release
manager removing a card rejects the backport: the PR gets the fallback
milestone and an explanatory comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from forgebot.engine import (
    CreateCard,
    Guard,
    MoveCard,
    PlanContext,
    PostComment,
    Refusal,
    SetMilestone,
    Workflow,
)
from forgebot.gateway.base import Gateway
from forgebot.model import (
    Event,
    EventKind,
    PrState,
    PullRequest,
    RepoRef,
    parse_merge_subject,
)

REQUEST_COLUMN = "Backport requested"
SHIPPED_COLUMN = "Shipped"
BOARD_PREFIX = "Backports: "

_DIRECTIVE_RE = re.compile(r"^\s*backport:\s*(\S+)\s*(?:;\s*on-reject:\s*(\S.*?)\s*)?$")


def board_for_branch(branch: str) -> str:
    return f"{BOARD_PREFIX}{branch}"


@dataclass(frozen=True)
class BackportDirective:
    target_branch: str
    board: str = ""
    request_column: str = REQUEST_COLUMN
    shipped_column: str = SHIPPED_COLUMN
    rejection_milestone: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.target_branch:
            raise ValueError("target_branch must be non-empty")
        if not self.board:
            object.__setattr__(self, "board", board_for_branch(self.target_branch))
        if self.request_column == self.shipped_column:
            raise ValueError("request and shipped columns must differ")


def parse_backport_directives(milestone_description: str) -> list[BackportDirective]:
    """Read directives out of a milestone description; malformed lines are ignored."""
    directives = []
    for line in milestone_description.split("\n"):
        match = _DIRECTIVE_RE.match(line)
        if match:
            directives.append(
                BackportDirective(
                    target_branch=match.group(1), rejection_milestone=match.group(2)
                )
            )
    return directives


def gather_board_cards(
    gateway: Gateway, repo: RepoRef, directives: Sequence[BackportDirective]
) -> dict[str, dict[int, str]]:
    """Current column per PR for each directive's board."""
    return {
        d.board: {
            card.pr[1]: card.column for card in gateway.list_board_cards(repo, d.board)
        }
        for d in directives
    }


def plan_backport_cards(
    ctx: PlanContext,
    repo: RepoRef,
    pr: PullRequest,
    directives: Sequence[BackportDirective],
    cards: Mapping[str, Mapping[int, str]],
) -> None:
    """Request tracking cards for a freshly merged PR, skipping existing ones."""
    for directive in directives:
        if pr.number in cards.get(directive.board, {}):
            continue
        ctx.run(CreateCard(repo, directive.board, directive.request_column, pr.number))


def merged_pr_workflow(repo: RepoRef) -> Workflow:
    """Track backport requests for PRs merged outside the bot's merge command."""

    def accepts(event: Event) -> bool:
        return (
            event.kind is EventKind.PR_CLOSED
            and event.payload.repo == repo
            and event.payload.merged
        )

    def pr(gateway: Gateway, event: Event, facts) -> PullRequest:
        snapshot = gateway.get_pull_request(repo, event.payload.number)
        if snapshot.state is not PrState.MERGED:
            raise Refusal("PR is not merged")
        if snapshot.milestone is None:
            raise Refusal("PR has no milestone")
        return snapshot

    def directives(gateway: Gateway, event: Event, facts) -> list[BackportDirective]:
        parsed = parse_backport_directives(facts["pr"].milestone.description)
        if not parsed:
            raise Refusal("milestone requests no backports")
        return parsed

    def cards(gateway: Gateway, event: Event, facts) -> dict[str, dict[int, str]]:
        return gather_board_cards(gateway, repo, facts["directives"])

    def plan(ctx: PlanContext) -> None:
        plan_backport_cards(ctx, repo, ctx["pr"], ctx["directives"], ctx["cards"])

    return Workflow(
        name=f"backport-track[{repo}]",
        event_filter=accepts,
        guards=(Guard("pr", pr), Guard("directives", directives), Guard("cards", cards)),
        plan=plan,
    )


def shipped_workflow(repo: RepoRef, release_branches: tuple[str, ...]) -> Workflow:
    """Move cards to Shipped when their PR's merge commit reaches the branch."""

    def accepts(event: Event) -> bool:
        return (
            event.kind is EventKind.PUSH_TO_BRANCH
            and event.payload.repo == repo
            and event.payload.branch in release_branches
        )

    def moves(gateway: Gateway, event: Event, facts) -> list[int]:
        board = board_for_branch(event.payload.branch)
        parsed: list[int] = []
        for commit in event.payload.commits:
            subject = commit.message.split("\n", 1)[0]
            number = parse_merge_subject(subject)
            if number is not None and number not in parsed:
                parsed.append(number)
        if not parsed:
            raise Refusal("no merge-commit subjects in push")
        requested = {
            card.pr[1]
            for card in gateway.list_board_cards(repo, board)
            if card.column == REQUEST_COLUMN
        }
        due = [number for number in parsed if number in requested]
        if not due:
            raise Refusal("no requested cards match the pushed commits")
        return due

    def plan(ctx: PlanContext) -> None:
        board = board_for_branch(ctx.event.payload.branch)
        for number in ctx["moves"]:
            ctx.run(MoveCard(repo, board, number, SHIPPED_COLUMN))

    return Workflow(
        name=f"backport-shipped[{repo}]",
        event_filter=accepts,
        guards=(Guard("moves", moves),),
        plan=plan,
    )


def rejection_workflow(
    repo: RepoRef, default_rejection_milestone: Optional[str], bot_login: str
) -> Workflow:
    """Handle a release manager pulling a card off the request column."""

    def accepts(event: Event) -> bool:
        return (
            event.kind is EventKind.CARD_REMOVED
            and event.payload.repo == repo
            and event.payload.board.startswith(BOARD_PREFIX)
            and event.payload.column == REQUEST_COLUMN
            and event.payload.actor != bot_login
        )

    def pr(gateway: Gateway, event: Event, facts) -> PullRequest:
        return gateway.get_pull_request(repo, event.payload.number)

    def new_milestone(gateway: Gateway, event: Event, facts) -> Optional[str]:
        branch = event.payload.board[len(BOARD_PREFIX):]
        snapshot = facts["pr"]
        if snapshot.milestone is not None:
            for d in parse_backport_directives(snapshot.milestone.description):
                if d.target_branch == branch and d.rejection_milestone:
                    return d.rejection_milestone
        return default_rejection_milestone

    def plan(ctx: PlanContext) -> None:
        payload = ctx.event.payload
        branch = payload.board[len(BOARD_PREFIX):]
        title = ctx["milestone"]
        if title:
            ctx.run(SetMilestone(repo, payload.number, title))
            body = (
                f"The backport of this PR to `{branch}` was rejected by the "
                f"release manager; the milestone has been changed to "
                f"`{title}`."
            )
        else:
            body = (
                f"The backport of this PR to `{branch}` was rejected by the "
                f"release manager. No replacement milestone is configured, so "
                f"the milestone was left unchanged."
            )
        ctx.run(PostComment(repo, payload.number, body))

    return Workflow(
        name=f"backport-reject[{repo}]",
        event_filter=accepts,
        guards=(Guard("pr", pr), Guard("milestone", new_milestone)),
        plan=plan,
    )
