"""Operator CLI: serve the webhook service, replay event fixtures, run scans.

The CLI stays thin: `serve` wires config + HTTP gateway into the FastAPI app
and hands off to uvicorn; `replay` drives the bundled simulator with a
fixture script; `scan` runs one stale sweep against the real forge, with
--dry-run printing the intended actions instead of executing them.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import threading
from datetime import datetime, timedelta, timezone
from typing import Optional

import click

from forgebot.bot import build_engine, stale_policy_for
from forgebot.config import BotConfig, ConfigError, load_config
from forgebot.engine import Engine, op_call
from forgebot.gateway.base import DryRunGateway, Gateway
from forgebot.gateway.http import GithubLikeClient, GitlabLikeClient, HttpForgeGateway
from forgebot.model import Event, EventKind, RepoRef, TickPayload
from forgebot.sim import ScriptError, SimulatedForge, apply_script_line, pump
from forgebot.workflows.pr_lifecycle import stale_workflow

logger = logging.getLogger(__name__)

ENV_GITHUB_TOKEN = "BOT_GITHUB_TOKEN"
ENV_GITLAB_TOKEN = "BOT_GITLAB_TOKEN"
ENV_WEBHOOK_SECRET = "BOT_WEBHOOK_SECRET"


def _load_config_or_fail(path: str) -> BotConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        for problem in exc.problems:
            click.echo(f"config error: {problem}", err=True)
        sys.exit(1)


def _require_env(names: list[str]) -> dict[str, str]:
    values = {}
    missing = []
    for name in names:
        value = os.environ.get(name)
        if value:
            values[name] = value
        else:
            missing.append(name)
    if missing:
        click.echo(
            "missing required environment variables: " + ", ".join(missing), err=True
        )
        sys.exit(1)
    return values


def _build_http_gateway(config: BotConfig, tokens: dict[str, str]) -> HttpForgeGateway:
    forge = GithubLikeClient(
        base_url=config.forge_api_base,
        token=tokens[ENV_GITHUB_TOKEN],
        bot_login=config.bot_name,
    )
    ci = GitlabLikeClient(base_url=config.ci_api_base, token=tokens[ENV_GITLAB_TOKEN])
    ci_repos = frozenset(
        rc.mirror.ci_repo for rc in config.repos.values() if rc.mirror is not None
    )
    return HttpForgeGateway(forge, ci, ci_repos)


def next_scan_time(now: datetime, hour: int) -> datetime:
    """First moment strictly after `now` whose UTC hour equals `hour`."""
    candidate = now.replace(hour=hour, minute=0, second=0, microsecond=0)
    if candidate <= now:
        candidate += timedelta(days=1)
    return candidate


def _tick_event(repo: RepoRef, ts: datetime) -> Event:
    return Event(
        delivery_id=f"tick-{ts.date().isoformat()}-{repo}",
        kind=EventKind.SCHEDULED_TICK,
        payload=TickPayload(repo, ts),
        received_at=ts,
    )


def _scheduler_loop(config: BotConfig, events_queue, stop: threading.Event) -> None:
    while not stop.is_set():
        now = datetime.now(timezone.utc)
        due = next_scan_time(now, config.server.scan_hour)
        if stop.wait((due - now).total_seconds()):
            return
        for repo_name in sorted(config.repos):
            try:
                events_queue.put_nowait(_tick_event(RepoRef.parse(repo_name), due))
            except Exception:
                logger.warning("scheduler could not enqueue tick for %s", repo_name)


@click.group()
@click.option(
    "--config",
    "config_path",
    default="forgebot.yaml",
    show_default=True,
    help="Path to the bot configuration file.",
)
@click.pass_context
def main(ctx: click.Context, config_path: str) -> None:
    """Forge-automation bot: webhook service, fixture replay, stale scans."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = config_path


@main.command()
@click.option("--host", default="0.0.0.0", show_default=True)
@click.pass_obj
def serve(config_path: str, host: str) -> None:
    """Run the webhook server and the daily scan scheduler."""
    import uvicorn

    from forgebot.service import create_app

    config = _load_config_or_fail(config_path)
    if not config.forge_api_base or not config.ci_api_base:
        click.echo(
            "config error: serve requires forge_api_base and ci_api_base", err=True
        )
        sys.exit(1)
    env = _require_env([ENV_WEBHOOK_SECRET, ENV_GITHUB_TOKEN, ENV_GITLAB_TOKEN])
    gateway = _build_http_gateway(config, env)
    engine = build_engine(config)
    app = create_app(engine, gateway, env[ENV_WEBHOOK_SECRET].encode("utf-8"))
    stop = threading.Event()
    scheduler = threading.Thread(
        target=_scheduler_loop,
        args=(config, app.state.events, stop),
        name="scan-scheduler",
        daemon=True,
    )
    scheduler.start()
    try:
        uvicorn.run(app, host=host, port=config.server.port)
    finally:
        stop.set()


@main.command()
@click.argument("fixture", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def replay(config_path: str, fixture: str) -> None:
    """Run an event script against a fresh simulator and print the action log."""
    config = _load_config_or_fail(config_path)
    sim = SimulatedForge(bot_login=config.bot_name)
    engine = build_engine(config)
    with open(fixture, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            try:
                line = json.loads(text)
                apply_script_line(sim, line)
            except (json.JSONDecodeError, ScriptError) as exc:
                click.echo(f"{fixture}:{lineno}: {exc}", err=True)
                sys.exit(2)
            pump(sim, engine)
    for entry in sim.action_log():
        key = f" key={entry['key']}" if "key" in entry else ""
        click.echo(
            f"{entry['actor']} {entry['op']} "
            f"{json.dumps(entry['args'], sort_keys=True)}{key}"
        )


@main.command()
@click.option("--dry-run", is_flag=True, help="Print intended actions, change nothing.")
@click.option("--now", "now_text", default=None, help="Override the scan clock (ISO timestamp).")
@click.pass_obj
def scan(config_path: str, dry_run: bool, now_text: Optional[str]) -> None:
    """Run one stale-PR scan against the configured forge."""
    config = _load_config_or_fail(config_path)
    if not config.forge_api_base or not config.ci_api_base:
        click.echo("config error: scan requires forge_api_base and ci_api_base", err=True)
        sys.exit(1)
    env = _require_env([ENV_GITHUB_TOKEN, ENV_GITLAB_TOKEN])
    if now_text is not None:
        now = datetime.fromisoformat(now_text)
        if now.tzinfo is None:
            now = now.replace(tzinfo=timezone.utc)
    else:
        now = datetime.now(timezone.utc)
    gateway: Gateway = _build_http_gateway(config, env)
    if dry_run:
        gateway = DryRunGateway(gateway)
    engine = Engine()
    for repo_name in sorted(config.repos):
        repo = RepoRef.parse(repo_name)
        engine.register(stale_workflow(repo, stale_policy_for(config.repos[repo_name])))
    executed = []
    for repo_name in sorted(config.repos):
        event = _tick_event(RepoRef.parse(repo_name), now)
        executed.extend(engine.dispatch(event, gateway))
    if dry_run:
        for method, kwargs in gateway.planned:
            click.echo(f"would {method} {kwargs}")
    else:
        for action in executed:
            method, kwargs = op_call(action.op)
            click.echo(f"did {method} {kwargs}")


if __name__ == "__main__":
    main()
