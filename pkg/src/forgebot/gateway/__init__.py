"""Gateway layer: the single seam between workflows and a forge (real or simulated)."""

from forgebot.gateway.base import (
    CommitInfo,
    DryRunGateway,
    Gateway,
    GatewayError,
    MergeConflictError,
    MirrorTarget,
    NotFoundError,
    PermissionDeniedError,
    TransientGatewayError,
    UnknownTeamError,
    synthetic_merge_message,
)

__all__ = [
    "CommitInfo",
    "DryRunGateway",
    "Gateway",
    "GatewayError",
    "MergeConflictError",
    "MirrorTarget",
    "NotFoundError",
    "PermissionDeniedError",
    "TransientGatewayError",
    "UnknownTeamError",
    "synthetic_merge_message",
]
