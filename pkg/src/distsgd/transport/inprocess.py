"""Thread-per-rank backend: a shared fabric of mailboxes inside one process."""

from __future__ import annotations

import threading
from typing import List, Optional

from .base import DEFAULT_TIMEOUT, Endpoint, Mailbox, TransportError, as_payload
from .wire import Message


class Fabric:
    """Routing layer shared by all in-process endpoints; safe for concurrent use."""

    def __init__(self, world_size: int, timeout: float = DEFAULT_TIMEOUT):
        if world_size < 1:
            raise ValueError("world_size must be >= 1")
        self.world_size = world_size
        self.timeout = timeout
        self.mailboxes = [Mailbox() for _ in range(world_size)]
        self._closed = threading.Event()

    def endpoint(self, rank: int) -> "InProcessEndpoint":
        return InProcessEndpoint(self, rank)

    def endpoints(self) -> List["InProcessEndpoint"]:
        return [self.endpoint(r) for r in range(self.world_size)]

    def deliver(self, msg: Message, to: int) -> None:
        if self._closed.is_set():
            raise TransportError("fabric is closed")
        self.mailboxes[to].put(msg)

    def abort(self, exc: BaseException) -> None:
        """Wake every blocked receiver with an error (used when one rank fails)."""
        for box in self.mailboxes:
            box.abort(exc)

    def close(self) -> None:
        self._closed.set()


class InProcessEndpoint(Endpoint):
    def __init__(self, fabric: Fabric, rank: int, timeout: Optional[float] = None):
        if not 0 <= rank < fabric.world_size:
            raise ValueError(f"rank {rank} outside world of {fabric.world_size}")
        self.fabric = fabric
        self.rank = rank
        self.world_size = fabric.world_size
        self.timeout = fabric.timeout if timeout is None else timeout

    def send(self, to: int, tag: int, payload) -> None:
        self._check_rank(to)
        self.fabric.deliver(Message(int(tag), as_payload(payload), self.rank), to)

    def recv(self, source: int, tag: int, timeout: Optional[float] = None) -> Message:
        self._check_rank(source)
        return self.fabric.mailboxes[self.rank].get(
            source, int(tag), self.timeout if timeout is None else timeout
        )
