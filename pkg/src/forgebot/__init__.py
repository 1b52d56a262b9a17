"""forgebot: composable trigger-action components for forge automation.

A library of bot building blocks (domain model, trigger-action engine, forge
gateway, workflows) plus a reference bot automating the full PR lifecycle:
CI mirroring and reporting, comment commands, policy-checked merging,
stale-PR closure, and backport tracking. A deterministic in-memory forge
makes the whole stack testable end to end without network access.
"""

__version__ = "0.1.0"
