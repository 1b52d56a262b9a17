"""FastAPI ingress around the engine.

POST /webhook verifies the delivery, normalizes it, puts the event on a
bounded in-memory queue and acknowledges immediately; worker threads drain
the queue and dispatch through the engine. A full queue answers 503 so the
forge redelivers later. GET /health answers "ok".
"""

from __future__ import annotations

import logging
import queue
import threading
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import PlainTextResponse

from forgebot.engine import Engine
from forgebot.gateway.base import Gateway
from forgebot.service.schemas import WebhookAck
from forgebot.webhook import (
    SIGNATURE_HEADER,
    TOKEN_HEADER,
    Delivery,
    ForgeSource,
    MalformedPayloadError,
    normalize,
    verify_delivery,
)

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_SIZE = 1024
_STOP = None  # queue sentinel


class EventPump:
    """Worker threads that drain the event queue into the engine."""

    def __init__(
        self, engine: Engine, gateway: Gateway, events: "queue.Queue", workers: int = 4
    ):
        self.engine = engine
        self.gateway = gateway
        self.events = events
        self.workers = workers
        self._threads: list[threading.Thread] = []

    def _work(self) -> None:
        while True:
            event = self.events.get()
            try:
                if event is _STOP:
                    return
                self.engine.dispatch(event, self.gateway)
            except Exception:
                logger.exception("dispatch failed for %s", getattr(event, "delivery_id", "?"))
            finally:
                self.events.task_done()

    def start(self) -> None:
        for n in range(self.workers):
            thread = threading.Thread(target=self._work, name=f"event-pump-{n}", daemon=True)
            thread.start()
            self._threads.append(thread)

    def stop(self) -> None:
        for _ in self._threads:
            self.events.put(_STOP)
        for thread in self._threads:
            thread.join(timeout=5)
        self._threads.clear()


def create_app(
    engine: Engine,
    gateway: Gateway,
    webhook_secret: bytes,
    queue_size: int = DEFAULT_QUEUE_SIZE,
    workers: int = 4,
) -> FastAPI:
    events: "queue.Queue" = queue.Queue(maxsize=queue_size)
    pump = EventPump(engine, gateway, events, workers=workers)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        pump.start()
        yield
        pump.stop()

    app = FastAPI(title="forgebot", lifespan=lifespan)
    app.state.events = events
    app.state.pump = pump

    @app.get("/health", response_class=PlainTextResponse)
    async def health() -> str:
        return "ok"

    @app.post("/webhook", response_model=WebhookAck, response_model_exclude_none=True)
    async def webhook(request: Request) -> WebhookAck:
        raw_body = await request.body()
        headers = request.headers
        if TOKEN_HEADER in headers:
            delivery = Delivery(
                source=ForgeSource.GITLAB_LIKE,
                delivery_id=headers.get("x-gitlab-event-uuid", ""),
                event_name=headers.get("x-gitlab-event", ""),
                signature_header=headers[TOKEN_HEADER],
                raw_body=raw_body,
            )
        elif SIGNATURE_HEADER in headers:
            delivery = Delivery(
                source=ForgeSource.GITHUB_LIKE,
                delivery_id=headers.get("x-github-delivery", ""),
                event_name=headers.get("x-github-event", ""),
                signature_header=headers[SIGNATURE_HEADER],
                raw_body=raw_body,
            )
        else:
            raise HTTPException(status_code=401, detail="missing signature")
        if not verify_delivery(delivery, webhook_secret):
            raise HTTPException(status_code=401, detail="signature verification failed")
        if not delivery.delivery_id or not delivery.event_name:
            raise HTTPException(status_code=400, detail="missing delivery id or event name")
        try:
            event = normalize(delivery)
        except MalformedPayloadError as exc:
            logger.warning("malformed %s delivery %s: %s", delivery.event_name, delivery.delivery_id, exc)
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        if event is None:
            return WebhookAck(status="ignored", delivery_id=delivery.delivery_id)
        try:
            events.put_nowait(event)
        except queue.Full:
            raise HTTPException(status_code=503, detail="event queue full") from None
        return WebhookAck(status="queued", delivery_id=delivery.delivery_id)

    return app
