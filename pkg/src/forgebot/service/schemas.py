"""Request/response models for the HTTP service."""

from typing import Literal, Optional

from pydantic import BaseModel


class WebhookAck(BaseModel):
    """Answer to a webhook delivery: accepted for processing, or ignored."""

    status: Literal["queued", "ignored"]
    delivery_id: Optional[str] = None
