"""Table-driven command grammar tests.

PARSER_TABLE is shared with the acceptance suite: each row is
(body, bot_name, expected command kinds).
"""

from __future__ import annotations

import random

from forgebot.workflows.pr_lifecycle import (
    CiMinimize,
    Help,
    MergeNow,
    help_text,
    parse_commands,
)

PARSER_TABLE = [
    ("@mergebot: merge now", "mergebot", [MergeNow()]),
    ("Thanks!\nLGTM", "mergebot", []),
    ("@mergebot: ci minimize ci-foo ci-bar", "mergebot", [CiMinimize(("ci-foo", "ci-bar"))]),
    ("  @mergebot: merge now", "mergebot", [MergeNow()]),
    ("@mergebot: merge now   ", "mergebot", [MergeNow()]),
    ("@mergebot: MERGE NOW", "mergebot", [MergeNow()]),
    ("@mergebot: Merge Now", "mergebot", [MergeNow()]),
    ("@mergebot:merge now", "mergebot", []),  # whitespace after the colon is required
    ("@mergebot: ci minimize", "mergebot", [CiMinimize(())]),
    ("@mergebot: CI MINIMIZE CI-foo", "mergebot", [CiMinimize(("CI-foo",))]),  # args keep case
    ("@mergebot: frobnicate", "mergebot", [Help("frobnicate")]),
    ("@mergebot: merge", "mergebot", [Help("merge")]),
    ("@mergebot: merge now please", "mergebot", [Help("merge now please")]),
    ("@otherbot: merge now", "mergebot", []),
    ("Please  @mergebot: merge now", "mergebot", []),  # command must start its line
    ("@MergeBot: merge now", "mergebot", []),  # bot name is exact
    ("@mergebot: merge now\r", "mergebot", [MergeNow()]),  # CRLF bodies
    ("@mergebot: merge now\n@mergebot: ci minimize", "mergebot", [MergeNow(), CiMinimize(())]),
    ("@mergebot:   merge   now", "mergebot", [MergeNow()]),  # any whitespace between words
    ("", "mergebot", []),
    ("@merge.bot: merge now", "merge.bot", [MergeNow()]),  # names are escaped literally
]


def test_parser_table():
    for body, bot, expected in PARSER_TABLE:
        assert parse_commands(body, bot) == expected, f"body={body!r}"


def test_parser_is_line_local():
    rng = random.Random(11)
    command_lines = ["@bot: merge now", "@bot: ci minimize x"]
    noise = ["hello", "  indented", "@other: nope", "", "trailing @bot: merge now"]
    base = parse_commands("\n".join(command_lines + noise), "bot")
    for _ in range(20):
        shuffled = noise[:]
        rng.shuffle(shuffled)
        assert parse_commands("\n".join(command_lines + shuffled), "bot") == base


def test_help_text_names_both_commands():
    text = help_text("mybot")
    assert "@mybot: merge now" in text
    assert "@mybot: ci minimize" in text
