"""Assembles the reference bot: configuration in, registered workflows out."""

from __future__ import annotations

from datetime import timedelta
from typing import Optional

from forgebot.config import BotConfig, RepoConfig
from forgebot.engine import Engine, Workflow
from forgebot.gateway.base import MirrorTarget
from forgebot.model import RepoRef
from forgebot.workflows import backport, ci, pr_lifecycle


def ci_settings_for(repo: RepoRef, rc: RepoConfig) -> Optional[ci.CiSettings]:
    if rc.mirror is None:
        return None
    patterns = (
        tuple(
            ci.ErrorPattern(p.pattern, p.context_before, p.context_after)
            for p in rc.error_patterns
        )
        or ci.DEFAULT_ERROR_PATTERNS
    )
    return ci.CiSettings(
        repo=repo,
        mirror=MirrorTarget(
            ci_repo=RepoRef.parse(rc.mirror.ci_repo),
            branch_prefix=rc.mirror.branch_prefix,
        ),
        error_patterns=patterns,
        always_report=frozenset(rc.always_report_jobs),
        reverse_dep_prefix=rc.reverse_dep_prefix,
        doc_artifact_globs={k: tuple(v) for k, v in rc.doc_artifact_globs.items()},
    )


def merge_policy_for(rc: RepoConfig) -> Optional[pr_lifecycle.MergePolicy]:
    if rc.merge is None:
        return None
    m = rc.merge
    return pr_lifecycle.MergePolicy(
        merge_team=m.merge_team,
        allowed_base_branches=tuple(m.allowed_base_branches),
        forbidden_label_prefix=m.forbidden_label_prefix,
        require_milestone=m.require_milestone,
        require_approval=m.require_approval,
        forbid_changes_requested=m.forbid_changes_requested,
        require_ci_success=m.require_ci_success,
        forbid_draft=m.forbid_draft,
        forbid_self_merge=m.forbid_self_merge,
        require_assignee=m.require_assignee,
    )


def stale_policy_for(rc: RepoConfig) -> pr_lifecycle.StalePolicy:
    return pr_lifecycle.StalePolicy(
        trigger_label=rc.stale.trigger_label,
        warn_after=timedelta(days=rc.stale.warn_after_days),
        close_after_warning=timedelta(days=rc.stale.close_after_warning_days),
    )


def build_workflows(config: BotConfig) -> list[Workflow]:
    workflows: list[Workflow] = []
    for repo_name in sorted(config.repos):
        rc = config.repos[repo_name]
        repo = RepoRef.parse(repo_name)
        settings = ci_settings_for(repo, rc)
        if settings is not None:
            workflows.append(ci.mirror_workflow(settings))
            workflows.append(ci.pipeline_status_workflow(settings))
            workflows.append(ci.job_report_workflow(settings))
            workflows.append(ci.minimize_proposal_workflow(settings, config.bot_name))
        workflows.append(
            pr_lifecycle.commands_workflow(
                repo, config.bot_name, merge_policy_for(rc), settings
            )
        )
        workflows.append(pr_lifecycle.stale_workflow(repo, stale_policy_for(rc)))
        workflows.append(backport.merged_pr_workflow(repo))
        if rc.release_branches:
            workflows.append(
                backport.shipped_workflow(repo, tuple(rc.release_branches))
            )
        workflows.append(
            backport.rejection_workflow(
                repo, rc.default_rejection_milestone, config.bot_name
            )
        )
    return workflows


def build_engine(config: BotConfig) -> Engine:
    engine = Engine()
    for workflow in build_workflows(config):
        engine.register(workflow)
    return engine
