"""Shared test fixtures: a configured bot wired to the simulated forge."""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from forgebot.bot import build_engine
from forgebot.config import BotConfig, parse_config
from forgebot.engine import Engine
from forgebot.model import RepoRef
from forgebot.sim import SimulatedForge

BOT = "testbot"
REPO = RepoRef("acme", "widgets")
CI_REPO = RepoRef("acme-ci", "widgets")
TEAM = "maintainers"


def make_config(**repo_overrides) -> BotConfig:
    """Reference-bot config for one repo; overrides patch the repo section."""
    repo = {
        "mirror": {"ci_repo": str(CI_REPO)},
        "merge": {"merge_team": TEAM},
        "release_branches": ["v1.0"],
        "default_rejection_milestone": None,
    }
    repo.update(repo_overrides)
    return parse_config({"bot_name": BOT, "repos": {str(REPO): repo}})


def make_harness(config: BotConfig | None = None) -> tuple[SimulatedForge, Engine]:
    """Fresh simulator (repos + team seeded) plus an engine built from config."""
    if config is None:
        config = make_config()
    sim = SimulatedForge(bot_login=config.bot_name)
    sim.create_repo(REPO)
    sim.create_repo(CI_REPO)
    sim.create_team(TEAM, ["alice", "carol"])
    return sim, build_engine(config)


@pytest.fixture
def harness():
    return make_harness()
