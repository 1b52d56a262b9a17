"""CI lifecycle workflows.

Mirrors PR content to the CI forge as synthetic merge commits, reports
pipeline and job outcomes back on the origin commit, and proposes/triggers
test-case minimization for reverse-dependency failures.

The origin mapping is stateless: every mirror push creates a merge commit
whose second parent is the PR head, so a pipeline result on the CI forge is
traced back by reading that commit's parents.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fnmatch import fnmatch
from typing import Mapping, Optional, Sequence

from forgebot.engine import (
    AddLabel,
    Guard,
    PlanContext,
    PostComment,
    PushBranch,
    Refusal,
    RemoveLabel,
    ReportCheck,
    ReportStatus,
    TriggerPipeline,
    Workflow,
)
from forgebot.gateway.base import Gateway, GatewayError, MergeConflictError, MirrorTarget
from forgebot.model import (
    CONFLICT_LABEL,
    CheckConclusion,
    CheckReport,
    CiJob,
    Event,
    EventKind,
    JobStatus,
    PrState,
    PullRequest,
    RepoRef,
    Sha,
    clip_to_tail,
)

FALLBACK_TAIL_LINES = 40
LOG_UNAVAILABLE = "log unavailable"


@dataclass(frozen=True)
class ErrorPattern:
    """A line regex locating errors in CI logs, with its context window."""

    pattern: str
    context_before: int = 2
    context_after: int = 10

    def __post_init__(self) -> None:
        re.compile(self.pattern)
        if self.context_before < 0 or self.context_after < 0:
            raise ValueError("context bounds must be >= 0")


DEFAULT_ERROR_PATTERNS: tuple[ErrorPattern, ...] = (
    ErrorPattern("^Error"),
    ErrorPattern(r"^.*\bError:"),
    ErrorPattern(r"^File \"[^\"]+\", line [0-9]+"),
)


def extract_error_excerpt(
    log: str, patterns: Sequence[ErrorPattern] = DEFAULT_ERROR_PATTERNS
) -> str:
    """Pull the most relevant slice out of a CI log.

    Patterns are tried in priority order; the window sits around the LAST
    match of the first pattern that matches at all (logs usually end with the
    fatal error; earlier hits tend to be retried steps). No match: the final
    40 lines. Always a contiguous piece of the log, capped at the forge's
    summary limit.
    """
    if not log:
        return ""
    lines = log.split("\n")
    for pattern in patterns:
        rx = re.compile(pattern.pattern)
        last = None
        for i, line in enumerate(lines):
            if rx.search(line):
                last = i
        if last is not None:
            lo = max(0, last - pattern.context_before)
            hi = min(len(lines), last + pattern.context_after + 1)
            return clip_to_tail("\n".join(lines[lo:hi]))
    return clip_to_tail("\n".join(lines[-FALLBACK_TAIL_LINES:]))


@dataclass(frozen=True)
class CiSettings:
    """Everything the CI workflows need to know about one repository."""

    repo: RepoRef
    mirror: MirrorTarget
    error_patterns: tuple[ErrorPattern, ...] = DEFAULT_ERROR_PATTERNS
    always_report: frozenset[str] = frozenset()
    reverse_dep_prefix: str = "ci-"
    doc_artifact_globs: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    status_context: str = "ci/pipeline"

    def __post_init__(self) -> None:
        if not self.reverse_dep_prefix:
            raise ValueError("reverse_dep_prefix must be non-empty")


@dataclass(frozen=True)
class MirrorOrigin:
    """A CI result traced back to the PR and origin commit it tests."""

    number: int
    merge_sha: Sha
    origin_sha: Sha


def resolve_mirror_origin(
    gateway: Gateway, settings: CiSettings, ref: str, sha: Sha
) -> MirrorOrigin:
    """Map a CI ref + tested sha to the PR head it stands for, or refuse."""
    number = settings.mirror.pr_number_for(ref)
    if number is None:
        raise Refusal(f"{ref!r} is not a mirror branch")
    commit = gateway.get_commit(settings.mirror.ci_repo, sha)
    if commit is None or len(commit.parents) != 2:
        raise Refusal(f"{sha} is not a bot-created merge commit")
    return MirrorOrigin(number=number, merge_sha=sha, origin_sha=commit.parents[1])


def doc_artifact_links(settings: CiSettings, job: CiJob) -> list[str]:
    globs = settings.doc_artifact_globs.get(job.name, ())
    return [a.url for a in job.artifacts if any(fnmatch(a.path, g) for g in globs)]


def _with_links(text: str, links: list[str]) -> str:
    if not links:
        return text
    listing = "\n".join(f"- {url}" for url in links)
    return f"{text}\n\nDocumentation artifacts:\n{listing}"


def mirror_workflow(settings: CiSettings) -> Workflow:
    """Push or refresh the synthetic merge branch whenever a PR opens/updates."""

    def accepts(event: Event) -> bool:
        return (
            event.kind in (EventKind.PR_OPENED, EventKind.PR_SYNCHRONIZED)
            and event.payload.repo == settings.repo
        )

    def fetch_pr(gateway: Gateway, event: Event, facts) -> PullRequest:
        pr = gateway.get_pull_request(event.payload.repo, event.payload.number)
        if pr.state is not PrState.OPEN:
            raise Refusal(f"PR #{pr.number} is not open")
        return pr

    def plan(ctx: PlanContext) -> None:
        pr = ctx["pr"]
        outcome = ctx.run(PushBranch(pr, settings.mirror))
        if outcome.ok:
            if CONFLICT_LABEL in pr.labels:
                ctx.run(RemoveLabel(settings.repo, pr.number, CONFLICT_LABEL))
        elif isinstance(outcome.error, MergeConflictError):
            if CONFLICT_LABEL not in pr.labels:
                ctx.run(AddLabel(settings.repo, pr.number, CONFLICT_LABEL))
        # Transient push failures: leave everything alone, redelivery retries.

    return Workflow(
        name=f"ci-mirror[{settings.repo}]",
        event_filter=accepts,
        guards=(Guard("pr", fetch_pr),),
        plan=plan,
    )


def pipeline_status_workflow(settings: CiSettings) -> Workflow:
    """Report the overall pipeline outcome as a status on the origin commit."""

    def accepts(event: Event) -> bool:
        return (
            event.kind is EventKind.PIPELINE_COMPLETED
            and event.payload.repo == settings.mirror.ci_repo
        )

    def origin(gateway: Gateway, event: Event, facts) -> MirrorOrigin:
        p = event.payload
        return resolve_mirror_origin(gateway, settings, p.ref, p.sha)

    def plan(ctx: PlanContext) -> None:
        p = ctx.event.payload
        state = "success" if p.status is JobStatus.SUCCESS else "failure"
        ctx.run(
            ReportStatus(
                repo=settings.repo,
                sha=ctx["origin"].origin_sha,
                state=state,
                context=settings.status_context,
                description=f"pipeline {p.pipeline_id} on {p.ref}: {p.status.value}",
            )
        )

    return Workflow(
        name=f"ci-pipeline-status[{settings.repo}]",
        event_filter=accepts,
        guards=(Guard("origin", origin),),
        plan=plan,
    )


def job_report_workflow(settings: CiSettings) -> Workflow:
    """Create check reports for failed jobs, and for successes worth showing.

    Successes are reported only for jobs on the always-report list or jobs
    flipping to green after a failure already reported on the same origin
    commit; everything else would drown the PR page.
    """

    def accepts(event: Event) -> bool:
        return (
            event.kind is EventKind.JOB_COMPLETED
            and event.payload.repo == settings.mirror.ci_repo
            and event.payload.job.status in (JobStatus.SUCCESS, JobStatus.FAILED)
        )

    def origin(gateway: Gateway, event: Event, facts) -> MirrorOrigin:
        p = event.payload
        return resolve_mirror_origin(gateway, settings, p.ref, p.job.tested_sha)

    def prior_reports(gateway: Gateway, event: Event, facts) -> list[CheckReport]:
        return gateway.list_check_reports(settings.repo, facts["origin"].origin_sha)

    def job_log(gateway: Gateway, event: Event, facts) -> Optional[str]:
        job = event.payload.job
        if job.status is not JobStatus.FAILED:
            return None
        try:
            return gateway.get_job_log(settings.mirror.ci_repo, job.log_ref)
        except GatewayError:
            return None

    def plan(ctx: PlanContext) -> None:
        job = ctx.event.payload.job
        target = ctx["origin"].origin_sha
        links = doc_artifact_links(settings, job)
        if job.status is JobStatus.FAILED:
            log = ctx["log"]
            excerpt = (
                extract_error_excerpt(log, settings.error_patterns)
                if log is not None
                else LOG_UNAVAILABLE
            )
            ctx.run(
                ReportCheck(
                    repo=settings.repo,
                    report=CheckReport(
                        name=job.name,
                        conclusion=CheckConclusion.FAILURE,
                        title=f"{job.name} failed",
                        summary=_with_links(excerpt, links),
                        target_sha=target,
                    ),
                )
            )
            return
        flipped = any(
            r.name == job.name and r.conclusion is CheckConclusion.FAILURE
            for r in ctx["prior"]
        )
        if job.name in settings.always_report or flipped:
            ctx.run(
                ReportCheck(
                    repo=settings.repo,
                    report=CheckReport(
                        name=job.name,
                        conclusion=CheckConclusion.SUCCESS,
                        title=f"{job.name} succeeded",
                        summary=_with_links("Job succeeded.", links),
                        target_sha=target,
                    ),
                )
            )

    return Workflow(
        name=f"ci-job-report[{settings.repo}]",
        event_filter=accepts,
        guards=(
            Guard("origin", origin),
            Guard("prior", prior_reports),
            Guard("log", job_log),
        ),
        plan=plan,
    )


def proposal_marker(pipeline_id: int) -> str:
    return f"<!-- bot:minimize-proposal:{pipeline_id} -->"


def minimize_proposal_workflow(settings: CiSettings, bot_name: str) -> Workflow:
    """Suggest test-case minimization when a reverse-dependency job breaks
    while the same job is green on the base branch."""

    def accepts(event: Event) -> bool:
        return (
            event.kind is EventKind.JOB_COMPLETED
            and event.payload.repo == settings.mirror.ci_repo
            and event.payload.job.status is JobStatus.FAILED
            and event.payload.job.name.startswith(settings.reverse_dep_prefix)
        )

    def origin(gateway: Gateway, event: Event, facts) -> MirrorOrigin:
        p = event.payload
        return resolve_mirror_origin(gateway, settings, p.ref, p.job.tested_sha)

    def pr(gateway: Gateway, event: Event, facts) -> PullRequest:
        snapshot = gateway.get_pull_request(settings.repo, facts["origin"].number)
        if snapshot.state is not PrState.OPEN:
            raise Refusal("PR is not open")
        return snapshot

    def base_green(gateway: Gateway, event: Event, facts) -> bool:
        status = gateway.base_job_status(
            settings.mirror.ci_repo, facts["pr"].base_branch, event.payload.job.name
        )
        if status is not JobStatus.SUCCESS:
            raise Refusal("job is not green on the base branch")
        return True

    def not_yet_proposed(gateway: Gateway, event: Event, facts) -> str:
        marker = proposal_marker(event.payload.job.pipeline_id)
        if gateway.bot_comments(settings.repo, facts["origin"].number, marker):
            raise Refusal("minimization already proposed for this pipeline")
        return marker

    def plan(ctx: PlanContext) -> None:
        job = ctx.event.payload.job
        body = (
            f"{ctx['marker']}\n"
            f"Job `{job.name}` failed here but succeeds on the base branch. "
            f"You can ask me to reduce the failure to a small test case by "
            f"commenting `@{bot_name}: ci minimize` "
            f"(or `@{bot_name}: ci minimize {job.name}` for just this job)."
        )
        ctx.run(PostComment(settings.repo, ctx["origin"].number, body))

    return Workflow(
        name=f"ci-minimize-proposal[{settings.repo}]",
        event_filter=accepts,
        guards=(
            Guard("origin", origin),
            Guard("pr", pr),
            Guard("base_green", base_green),
            Guard("marker", not_yet_proposed),
        ),
        plan=plan,
    )


def eligible_minimization_jobs(
    gateway: Gateway, settings: CiSettings, number: int
) -> list[CiJob]:
    """Failing reverse-dependency jobs of the latest pipeline for a PR's mirror."""
    ref = settings.mirror.branch_for(number)
    jobs = gateway.list_pipeline_jobs(settings.mirror.ci_repo, ref)
    return [
        j
        for j in jobs
        if j.status is JobStatus.FAILED and j.name.startswith(settings.reverse_dep_prefix)
    ]


def plan_minimization(
    ctx: PlanContext,
    settings: CiSettings,
    number: int,
    targets: Sequence[str],
    eligible: Sequence[CiJob],
) -> None:
    """Fan a minimize command out into pipeline triggers plus an acknowledgment."""
    chosen = list(targets) if targets else [j.name for j in eligible]
    if not chosen:
        ctx.run(
            PostComment(
                settings.repo,
                number,
                "There is nothing to minimize: no failing reverse-dependency "
                "jobs on the latest CI run of this PR.",
            )
        )
        return
    ref = settings.mirror.branch_for(number)
    for name in chosen:
        ctx.run(TriggerPipeline(settings.mirror.ci_repo, ref, name))
    listing = ", ".join(f"`{name}`" for name in chosen)
    ctx.run(
        PostComment(
            settings.repo,
            number,
            f"Minimization triggered for {listing}. Results will be reported "
            f"when the runs finish.",
        )
    )
