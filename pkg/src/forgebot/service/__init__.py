"""HTTP service: FastAPI app exposing the webhook ingress around the engine."""

from forgebot.service.app import create_app

__all__ = ["create_app"]
