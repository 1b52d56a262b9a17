"""Merge policy clause tests against the simulated forge."""

from __future__ import annotations

import pytest

from forgebot.gateway.base import Gateway, GatewayError
from forgebot.model import ReviewDecision
from forgebot.sim import SimulatedForge
from forgebot.workflows.pr_lifecycle import (
    MergePolicy,
    ViolationCode,
    check_merge_policy,
    violations_comment,
)

from conftest import BOT, REPO, TEAM

POLICY = MergePolicy(merge_team=TEAM, allowed_base_branches=("master", "v1.0"))


def compliant_pr(sim: SimulatedForge, number: int = 1, **open_kwargs):
    """An open PR that passes every default clause for issuer 'alice'."""
    kwargs = dict(milestone_id=1, assignees=["carol"])
    kwargs.update(open_kwargs)
    sim.create_milestone(REPO, 1, "1.1.0")
    sim.open_pr(REPO, number, "Fix", "bob", **kwargs)
    sim.add_review(REPO, number, "carol", ReviewDecision.APPROVED)
    return sim.get_pull_request(REPO, number)


def codes(violations) -> list[ViolationCode]:
    return [v.code for v in violations]


@pytest.fixture
def sim():
    forge = SimulatedForge(bot_login=BOT)
    forge.create_repo(REPO)
    forge.create_team(TEAM, ["alice", "carol"])
    return forge


def test_compliant_pr_and_member_pass(sim):
    pr = compliant_pr(sim)
    assert check_merge_policy(pr, "alice", POLICY, sim) == []


def test_missing_milestone_only(sim):
    pr = compliant_pr(sim, milestone_id=None)
    assert codes(check_merge_policy(pr, "alice", POLICY, sim)) == [
        ViolationCode.MISSING_MILESTONE
    ]


def test_non_member_not_authorized(sim):
    pr = compliant_pr(sim)
    assert codes(check_merge_policy(pr, "stranger", POLICY, sim)) == [
        ViolationCode.NOT_AUTHORIZED
    ]


def test_all_violations_reported_in_fixed_order(sim):
    sim.create_milestone(REPO, 1, "1.1.0")
    sim.open_pr(REPO, 2, "Fix", "bob", draft=True, base_branch="master")
    sim.user_add_label(REPO, 2, "needs: rebase")
    sim.user_add_label(REPO, 2, "needs: changelog")
    sim.add_review(REPO, 2, "carol", ReviewDecision.CHANGES_REQUESTED)
    sim.report_status(REPO, sim.get_pull_request(REPO, 2).head_sha, "pending", "ci", "", key="s")
    pr = sim.get_pull_request(REPO, 2)
    violations = check_merge_policy(pr, "bob", POLICY, sim)
    assert codes(violations) == [
        ViolationCode.NOT_AUTHORIZED,  # authorization always first
        ViolationCode.SELF_MERGE,
        ViolationCode.DRAFT,
        ViolationCode.MISSING_MILESTONE,
        ViolationCode.FORBIDDEN_LABEL,
        ViolationCode.FORBIDDEN_LABEL,
        ViolationCode.MISSING_APPROVAL,
        ViolationCode.CHANGES_REQUESTED,
        ViolationCode.CI_NOT_GREEN,
    ]
    labels = [v.label for v in violations if v.code is ViolationCode.FORBIDDEN_LABEL]
    assert labels == ["needs: changelog", "needs: rebase"]
    body = violations_comment(violations)
    assert body.count("\n- ") == len(violations)


def test_base_branch_restriction(sim):
    sim.push_commits(REPO, "experimental", ["seed"])
    sim.drain_events()
    pr = compliant_pr(sim, base_branch="experimental")
    assert codes(check_merge_policy(pr, "alice", POLICY, sim)) == [
        ViolationCode.BASE_BRANCH_NOT_ALLOWED
    ]


def test_ci_failure_blocks(sim):
    pr = compliant_pr(sim)
    sim.report_status(REPO, pr.head_sha, "failure", "ci", "bad", key="s")
    assert codes(check_merge_policy(pr, "alice", POLICY, sim)) == [
        ViolationCode.CI_NOT_GREEN
    ]


def test_pending_counts_as_not_green(sim):
    pr = compliant_pr(sim)
    sim.report_status(REPO, pr.head_sha, "pending", "ci", "running", key="s")
    assert codes(check_merge_policy(pr, "alice", POLICY, sim)) == [
        ViolationCode.CI_NOT_GREEN
    ]


def test_assignee_clause_defaults_off(sim):
    pr = compliant_pr(sim, assignees=[])
    assert check_merge_policy(pr, "alice", POLICY, sim) == []
    strict = MergePolicy(merge_team=TEAM, require_assignee=True)
    assert codes(check_merge_policy(pr, "alice", strict, sim)) == [
        ViolationCode.MISSING_ASSIGNEE
    ]


def test_clauses_can_be_disabled(sim):
    lax = MergePolicy(
        merge_team=TEAM,
        require_milestone=False,
        require_approval=False,
        forbid_self_merge=False,
        forbid_draft=False,
    )
    sim.open_pr(REPO, 3, "Fix", "alice", draft=True)
    pr = sim.get_pull_request(REPO, 3)
    assert check_merge_policy(pr, "alice", lax, sim) == []


def test_milestone_fix_is_monotone(sim):
    """Setting the milestone removes that violation and introduces none."""
    sim.create_milestone(REPO, 7, "1.2.0")
    sim.open_pr(REPO, 4, "Fix", "bob")
    sim.add_review(REPO, 4, "carol", ReviewDecision.APPROVED)
    before = codes(check_merge_policy(sim.get_pull_request(REPO, 4), "alice", POLICY, sim))
    sim.set_pr_milestone(REPO, 4, 7)
    after = codes(check_merge_policy(sim.get_pull_request(REPO, 4), "alice", POLICY, sim))
    assert set(after) <= set(before)
    assert ViolationCode.MISSING_MILESTONE not in after


def test_gateway_failure_refuses_with_single_outcome(sim):
    pr = compliant_pr(sim)

    class BrokenGateway(Gateway):
        def is_team_member(self, team, login):
            raise GatewayError("forge down")

    violations = check_merge_policy(pr, "alice", POLICY, BrokenGateway())
    assert codes(violations) == [ViolationCode.POLICY_CHECK_UNAVAILABLE]


def test_every_violation_names_a_remedy(sim):
    sim.open_pr(REPO, 5, "Fix", "bob", draft=True)
    pr = sim.get_pull_request(REPO, 5)
    for violation in check_merge_policy(pr, "bob", POLICY, sim):
        assert violation.human_message.strip()
