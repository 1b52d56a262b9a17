"""Bot configuration.

All project-specific knowledge (mirror targets, merge rules, stale windows,
log patterns, release branches) lives here rather than in workflow code, so
the same workflows serve any repository. Loading validates eagerly and
reports every problem at once; unknown keys are rejected.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from forgebot.model import CONFLICT_LABEL, RepoRef


class ConfigError(Exception):
    """Carries every validation problem found in a config file."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MirrorConfig(_Model):
    ci_repo: str
    branch_prefix: str = "pr-"

    @field_validator("ci_repo")
    @classmethod
    def _repo_parses(cls, value: str) -> str:
        RepoRef.parse(value)
        return value

    @field_validator("branch_prefix")
    @classmethod
    def _prefix_non_empty(cls, value: str) -> str:
        if not value:
            raise ValueError("branch_prefix must be non-empty")
        return value


class MergePolicyConfig(_Model):
    merge_team: str = Field(min_length=1)
    allowed_base_branches: list[str] = []
    forbidden_label_prefix: str = "needs: "
    require_milestone: bool = True
    require_approval: bool = True
    forbid_changes_requested: bool = True
    require_ci_success: bool = True
    forbid_draft: bool = True
    forbid_self_merge: bool = True
    require_assignee: bool = False


class StaleConfig(_Model):
    trigger_label: str = Field(CONFLICT_LABEL, min_length=1)
    warn_after_days: int = Field(30, gt=0)
    close_after_warning_days: int = Field(30, gt=0)


class ErrorPatternConfig(_Model):
    pattern: str
    context_before: int = Field(2, ge=0)
    context_after: int = Field(10, ge=0)

    @field_validator("pattern")
    @classmethod
    def _compiles(cls, value: str) -> str:
        try:
            re.compile(value)
        except re.error as exc:
            raise ValueError(f"invalid regex: {exc}") from exc
        return value


class RepoConfig(_Model):
    mirror: Optional[MirrorConfig] = None
    merge: Optional[MergePolicyConfig] = None
    stale: StaleConfig = StaleConfig()
    error_patterns: list[ErrorPatternConfig] = []  # empty -> built-in defaults
    always_report_jobs: list[str] = []
    reverse_dep_prefix: str = Field("ci-", min_length=1)
    doc_artifact_globs: dict[str, list[str]] = {}
    release_branches: list[str] = []
    default_rejection_milestone: Optional[str] = None

    @field_validator("release_branches")
    @classmethod
    def _branches_non_empty(cls, value: list[str]) -> list[str]:
        if any(not branch for branch in value):
            raise ValueError("release branch names must be non-empty")
        return value


class ServerConfig(_Model):
    port: int = Field(8000, gt=0, lt=65536)
    scan_hour: int = Field(6, ge=0, le=23)


class BotConfig(_Model):
    bot_name: str = Field(min_length=1)
    forge_api_base: Optional[str] = None
    ci_api_base: Optional[str] = None
    server: ServerConfig = ServerConfig()
    repos: dict[str, RepoConfig] = {}

    @field_validator("repos")
    @classmethod
    def _repo_keys_parse(cls, value: dict) -> dict:
        for key in value:
            RepoRef.parse(key)
        return value


def _format_problem(error: dict) -> str:
    loc = ".".join(str(part) for part in error["loc"]) or "<root>"
    return f"{loc}: {error['msg']}"


def parse_config(data: object) -> BotConfig:
    if not isinstance(data, dict):
        raise ConfigError(["config must be a mapping at the top level"])
    try:
        return BotConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError([_format_problem(e) for e in exc.errors()]) from exc


def loads_config(text: str) -> BotConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"invalid YAML: {exc}"]) from exc
    return parse_config(data)


def load_config(path: str | Path) -> BotConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    return loads_config(path.read_text(encoding="utf-8"))


def render_config(config: BotConfig) -> str:
    """Serialize a config so that load(render(config)) == config."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True)
