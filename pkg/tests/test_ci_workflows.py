"""CI workflow tests: log excerpts, mirroring, status mapping, job reports."""

from __future__ import annotations

import random
import re

from forgebot.model import (
    CONFLICT_LABEL,
    MAX_SUMMARY_BYTES,
    TRUNCATION_MARKER,
    Artifact,
    JobStatus,
    Sha,
)
from forgebot.sim import JobSpec, SimulatedForge, pump
from forgebot.workflows.ci import (
    DEFAULT_ERROR_PATTERNS,
    ErrorPattern,
    extract_error_excerpt,
)

from conftest import CI_REPO, REPO, make_config, make_harness


# -- extract_error_excerpt ------------------------------------------------------


def oracle_excerpt(log: str, patterns) -> str:
    """Independent re-derivation: scan ALL matches, keep the max index of the
    first (highest-priority) pattern that matched anywhere."""
    if not log:
        return ""
    lines = log.split("\n")
    for pattern in patterns:
        matches = [i for i, line in enumerate(lines) if re.search(pattern.pattern, line)]
        if matches:
            last = max(matches)
            lo = max(0, last - pattern.context_before)
            hi = min(len(lines), last + pattern.context_after + 1)
            return "\n".join(lines[lo:hi])
    return "\n".join(lines[-40:])


class TestExtractErrorExcerpt:
    def test_default_pattern_hits_error_line(self):
        log = "step 1 ok\nError: The reference foo was not found\nstep 2"
        assert "Error: The reference foo was not found" in extract_error_excerpt(log)

    def test_empty_log(self):
        assert extract_error_excerpt("") == ""

    def test_two_errors_centered_on_second(self):
        filler_a = "\n".join(f"a{i}" for i in range(20))
        filler_b = "\n".join(f"b{i}" for i in range(20))
        log = f"Error: first\n{filler_a}\nError: second\n{filler_b}"
        excerpt = extract_error_excerpt(log)
        assert excerpt == oracle_excerpt(log, DEFAULT_ERROR_PATTERNS)
        assert "Error: second" in excerpt
        assert "Error: first" not in excerpt

    def test_no_match_returns_final_40_lines(self):
        log = "\n".join(f"line {i}" for i in range(100))
        excerpt = extract_error_excerpt(log)
        assert excerpt == "\n".join(f"line {i}" for i in range(60, 100))

    def test_priority_prefers_first_pattern(self):
        # Both patterns match different lines; the first pattern wins even
        # though the second one matches later in the log.
        patterns = (ErrorPattern("^alpha", 0, 0), ErrorPattern("^beta", 0, 0))
        log = "alpha one\nmiddle\nbeta two"
        assert extract_error_excerpt(log, patterns) == "alpha one"

    def test_matches_oracle_on_random_logs(self):
        rng = random.Random(99)
        vocab = ["ok", "building", "Error: boom", "warning", "File \"x.v\", line 3", ""]
        for _ in range(200):
            log = "\n".join(rng.choice(vocab) for _ in range(rng.randint(0, 80)))
            assert extract_error_excerpt(log) == oracle_excerpt(log, DEFAULT_ERROR_PATTERNS)

    def test_output_is_contiguous_substring(self):
        rng = random.Random(5)
        for _ in range(50):
            log = "\n".join(
                rng.choice(["x", "Error: y", "z"]) for _ in range(rng.randint(1, 60))
            )
            excerpt = extract_error_excerpt(log)
            assert excerpt in log

    def test_oversized_window_is_clipped_with_single_marker(self):
        log = "Error: big\n" + "\n".join("x" * 200 for _ in range(1000))
        excerpt = extract_error_excerpt(log, (ErrorPattern("^Error", 0, 1000),))
        assert len(excerpt.encode()) <= MAX_SUMMARY_BYTES
        assert excerpt.count(TRUNCATION_MARKER) == 1
        assert excerpt.split("\n", 1)[1] in log


# -- mirror workflow -------------------------------------------------------------


def mirror_head(sim: SimulatedForge, number: int):
    return sim._state["repos"][str(CI_REPO)]["branches"].get(f"pr-{number}")


class TestMirrorWorkflow:
    def test_mergeable_pr_updates_mirror_without_labels(self, harness):
        sim, engine = harness
        sim.open_pr(REPO, 42, "t", "bob")
        pump(sim, engine)
        pr = sim.get_pull_request(REPO, 42)
        merge_sha = mirror_head(sim, 42)
        assert merge_sha is not None
        info = sim.get_commit(CI_REPO, Sha(merge_sha))
        assert info.parents[1] == pr.head_sha
        assert CONFLICT_LABEL not in pr.labels
        assert [e["op"] for e in sim.bot_actions()] == ["push_merged_branch"]

    def test_conflicting_pr_gets_label_and_no_push(self, harness):
        sim, engine = harness
        sim.open_pr(REPO, 42, "t", "bob", conflicted=True)
        pump(sim, engine)
        assert mirror_head(sim, 42) is None
        assert CONFLICT_LABEL in sim.get_pull_request(REPO, 42).labels

    def test_resolved_conflict_removes_label_and_pushes(self, harness):
        sim, engine = harness
        sim.open_pr(REPO, 42, "t", "bob", conflicted=True)
        pump(sim, engine)
        sim.update_pr(REPO, 42, conflicted=False)
        pump(sim, engine)
        assert CONFLICT_LABEL not in sim.get_pull_request(REPO, 42).labels
        assert mirror_head(sim, 42) is not None


# -- pipeline status -------------------------------------------------------------


def open_and_mirror(sim, engine, number=42, conflicted=False):
    sim.open_pr(REPO, number, "t", "bob", conflicted=conflicted)
    pump(sim, engine)
    return sim.get_pull_request(REPO, number)


def status_entries(sim):
    return [e for e in sim.bot_actions() if e["op"] == "report_status"]


class TestPipelineStatus:
    def test_failed_pipeline_reports_failure_on_origin(self, harness):
        sim, engine = harness
        pr = open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("build", JobStatus.FAILED, log="Error: x")])
        pump(sim, engine)
        entries = status_entries(sim)
        assert len(entries) == 1
        assert entries[0]["args"]["sha"] == pr.head_sha.value
        assert entries[0]["args"]["state"] == "failure"

    def test_success_pipeline_reports_success(self, harness):
        sim, engine = harness
        pr = open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("build", JobStatus.SUCCESS)])
        pump(sim, engine)
        entries = status_entries(sim)
        assert entries[0]["args"]["state"] == "success"
        assert entries[0]["args"]["sha"] == pr.head_sha.value

    def test_pipeline_on_non_bot_commit_is_ignored(self, harness):
        sim, engine = harness
        sim.push_commits(CI_REPO, "pr-7", ["not a merge"])  # single-parent head
        sim.drain_events()
        sim.run_pipeline(CI_REPO, "pr-7", [JobSpec("build", JobStatus.FAILED, log="Error: x")])
        pump(sim, engine)
        assert status_entries(sim) == []

    def test_pipeline_on_non_mirror_ref_is_ignored(self, harness):
        sim, engine = harness
        open_and_mirror(sim, engine)
        sim.push_commits(CI_REPO, "master", ["regular work"])
        sim.drain_events()
        sim.run_pipeline(CI_REPO, "master", [JobSpec("build", JobStatus.FAILED, log="Error")])
        pump(sim, engine)
        assert status_entries(sim) == []


# -- job reports -----------------------------------------------------------------


def check_entries(sim):
    return [e for e in sim.bot_actions() if e["op"] == "report_check"]


class TestJobReports:
    def test_failed_job_report_contains_extracted_error(self, harness):
        sim, engine = harness
        pr = open_and_mirror(sim, engine)
        log = "compiling\nError: The reference foo was not found\ncontext line"
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("build:edge", JobStatus.FAILED, log=log)])
        pump(sim, engine)
        entries = check_entries(sim)
        assert len(entries) == 1
        report = entries[0]["args"]
        assert report["name"] == "build:edge"
        assert report["conclusion"] == "failure"
        assert "Error: The reference foo was not found" in report["summary"]
        assert report["sha"] == pr.head_sha.value

    def test_missing_log_reports_placeholder(self, harness):
        sim, engine = harness
        open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("build", JobStatus.FAILED, log="")])
        pump(sim, engine)
        assert check_entries(sim)[0]["args"]["summary"] == "log unavailable"

    def test_plain_success_is_suppressed(self, harness):
        sim, engine = harness
        open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("build", JobStatus.SUCCESS)])
        pump(sim, engine)
        assert check_entries(sim) == []

    def test_always_report_doc_job_links_artifacts(self):
        config = make_config(
            always_report_jobs=["doc:html"],
            doc_artifact_globs={"doc:html": ["_build/**/*.html", "_build/html*"]},
        )
        sim, engine = make_harness(config)
        open_and_mirror(sim, engine)
        artifacts = (
            Artifact("_build/html/index.html", "https://ci.example/a/1"),
            Artifact("coverage.xml", "https://ci.example/a/2"),
        )
        sim.run_pipeline(
            CI_REPO, "pr-42", [JobSpec("doc:html", JobStatus.SUCCESS, artifacts=artifacts)]
        )
        pump(sim, engine)
        entries = check_entries(sim)
        assert len(entries) == 1
        summary = entries[0]["args"]["summary"]
        assert entries[0]["args"]["conclusion"] == "success"
        assert "https://ci.example/a/1" in summary
        assert "https://ci.example/a/2" not in summary

    def test_flip_to_green_reports_success_once_failed(self, harness):
        sim, engine = harness
        open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("build", JobStatus.FAILED, log="Error: x")])
        pump(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("build", JobStatus.SUCCESS)])
        pump(sim, engine)
        conclusions = [e["args"]["conclusion"] for e in check_entries(sim)]
        assert conclusions == ["failure", "success"]

    def test_no_unprompted_success_report_over_random_pipelines(self):
        """A success report needs the always-report list or an earlier failure."""
        rng = random.Random(17)
        for _ in range(30):
            config = make_config(always_report_jobs=["always"])
            sim, engine = make_harness(config)
            open_and_mirror(sim, engine)
            for _ in range(rng.randint(1, 4)):
                specs = [
                    JobSpec(
                        name,
                        JobStatus.FAILED if rng.random() < 0.4 else JobStatus.SUCCESS,
                        log="Error: x",
                    )
                    for name in ("job-a", "job-b", "always")
                ]
                sim.run_pipeline(CI_REPO, "pr-42", specs)
                pump(sim, engine)
            failed_before: set[str] = set()
            for entry in check_entries(sim):
                name = entry["args"]["name"]
                if entry["args"]["conclusion"] == "failure":
                    failed_before.add(name)
                else:
                    assert name == "always" or name in failed_before


# -- minimization ----------------------------------------------------------------


def proposal_comments(sim):
    return [
        e
        for e in sim.bot_actions()
        if e["op"] == "post_comment" and "minimize-proposal" in e["args"]["body"]
    ]


class TestMinimizeProposal:
    def seed_green_base(self, sim, job="ci-mathcomp"):
        sim.run_pipeline(CI_REPO, "master", [JobSpec(job, JobStatus.SUCCESS)])
        sim.drain_events()

    def test_reverse_dep_failure_with_green_base_proposes(self, harness):
        sim, engine = harness
        self.seed_green_base(sim)
        open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("ci-mathcomp", JobStatus.FAILED, log="Error")])
        pump(sim, engine)
        proposals = proposal_comments(sim)
        assert len(proposals) == 1
        assert "ci minimize" in proposals[0]["args"]["body"]
        assert "ci-mathcomp" in proposals[0]["args"]["body"]

    def test_core_job_failure_does_not_propose(self, harness):
        sim, engine = harness
        open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("build:base", JobStatus.FAILED, log="Error")])
        pump(sim, engine)
        assert proposal_comments(sim) == []

    def test_red_base_does_not_propose(self, harness):
        sim, engine = harness
        sim.run_pipeline(CI_REPO, "master", [JobSpec("ci-mathcomp", JobStatus.FAILED, log="Error")])
        sim.drain_events()
        open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("ci-mathcomp", JobStatus.FAILED, log="Error")])
        pump(sim, engine)
        assert proposal_comments(sim) == []

    def test_second_failure_in_same_pipeline_does_not_duplicate(self, harness):
        sim, engine = harness
        self.seed_green_base(sim, "ci-a")
        self.seed_green_base(sim, "ci-b")
        open_and_mirror(sim, engine)
        sim.run_pipeline(
            CI_REPO,
            "pr-42",
            [
                JobSpec("ci-a", JobStatus.FAILED, log="Error"),
                JobSpec("ci-b", JobStatus.FAILED, log="Error"),
            ],
        )
        pump(sim, engine)
        assert len(proposal_comments(sim)) == 1


class TestTriggerMinimization:
    def triggered(self, sim):
        return sim._state["repos"][str(CI_REPO)]["triggered"]

    def test_bare_command_fans_out_to_all_eligible(self, harness):
        sim, engine = harness
        open_and_mirror(sim, engine)
        sim.run_pipeline(
            CI_REPO,
            "pr-42",
            [
                JobSpec("ci-a", JobStatus.FAILED, log="Error"),
                JobSpec("ci-b", JobStatus.FAILED, log="Error"),
                JobSpec("build", JobStatus.FAILED, log="Error"),  # not reverse-dep
                JobSpec("ci-c", JobStatus.SUCCESS),
            ],
        )
        pump(sim, engine)
        sim.user_comment(REPO, 42, "alice", "@testbot: ci minimize")
        pump(sim, engine)
        assert self.triggered(sim) == [
            {"ref": "pr-42", "job": "ci-a"},
            {"ref": "pr-42", "job": "ci-b"},
        ]
        acks = [
            e
            for e in sim.bot_actions()
            if e["op"] == "post_comment" and "Minimization triggered" in e["args"]["body"]
        ]
        assert len(acks) == 1
        assert "`ci-a`" in acks[0]["args"]["body"]

    def test_explicit_target_triggers_only_that_job(self, harness):
        sim, engine = harness
        open_and_mirror(sim, engine)
        sim.run_pipeline(CI_REPO, "pr-42", [JobSpec("ci-a", JobStatus.FAILED, log="Error")])
        pump(sim, engine)
        sim.user_comment(REPO, 42, "alice", "@testbot: ci minimize ci-foo")
        pump(sim, engine)
        assert self.triggered(sim) == [{"ref": "pr-42", "job": "ci-foo"}]

    def test_nothing_to_minimize_explains(self, harness):
        sim, engine = harness
        open_and_mirror(sim, engine)
        sim.user_comment(REPO, 42, "alice", "@testbot: ci minimize")
        pump(sim, engine)
        assert self.triggered(sim) == []
        bodies = [e["args"]["body"] for e in sim.bot_actions() if e["op"] == "post_comment"]
        assert any("nothing to minimize" in b for b in bodies)
