from __future__ import annotations

import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .wire import Message

DEFAULT_TIMEOUT = 30.0


class TransportError(RuntimeError):
    pass


class TransportTimeout(TransportError):
    pass


class PeerDisconnected(TransportError):
    pass


class UnknownRank(TransportError):
    pass


class CollectiveError(TransportError):
    pass


@dataclass(frozen=True)
class CommGroup:
    """Ordered member list; ascending ids fix the reduction order."""

    members: tuple
    root: int
    tag_base: int = 0

    def __init__(self, members: Sequence[int], root: Optional[int] = None, tag_base: int = 0):
        members = tuple(sorted(int(m) for m in members))
        if not members:
            raise ValueError("group must have at least one member")
        if len(set(members)) != len(members):
            raise ValueError("group members must be unique")
        root = members[0] if root is None else int(root)
        if root not in members:
            raise ValueError(f"root {root} is not a member of {members}")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "tag_base", int(tag_base))

    def __len__(self):
        return len(self.members)

    def __contains__(self, rank):
        return rank in self.members

    def with_root(self, root: int) -> "CommGroup":
        return CommGroup(self.members, root, self.tag_base)


class Mailbox:
    """Per-rank store of delivered messages keyed by (source, tag), FIFO per key."""

    def __init__(self):
        self._cv = threading.Condition()
        self._queues = defaultdict(deque)
        self._gone = set()
        self._error: Optional[BaseException] = None

    def put(self, msg: Message) -> None:
        with self._cv:
            self._queues[(msg.source, msg.tag)].append(msg)
            self._cv.notify_all()

    def disconnect(self, source: int) -> None:
        with self._cv:
            self._gone.add(source)
            self._cv.notify_all()

    def abort(self, exc: BaseException) -> None:
        with self._cv:
            if self._error is None:
                self._error = exc
            self._cv.notify_all()

    def get(self, source: int, tag: int, timeout: float) -> Message:
        deadline = time.monotonic() + timeout
        key = (source, tag)
        with self._cv:
            while True:
                q = self._queues.get(key)
                if q:
                    return q.popleft()
                if self._error is not None:
                    raise TransportError(f"transport aborted: {self._error}")
                if source in self._gone:
                    raise PeerDisconnected(f"rank {source} disconnected while waiting for tag {tag}")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportTimeout(
                        f"no message from rank {source} with tag {tag} after {timeout:g} s"
                    )
                self._cv.wait(remaining)


class Endpoint:
    """A rank's handle on the transport. Only the owning rank may use it."""

    rank: int
    world_size: int
    timeout: float

    def send(self, to: int, tag: int, payload) -> None:
        raise NotImplementedError

    def recv(self, source: int, tag: int, timeout: Optional[float] = None) -> Message:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.world_size:
            raise UnknownRank(f"rank {rank} does not exist in a world of {self.world_size}")


class JitteredEndpoint(Endpoint):
    """Wraps an endpoint and sleeps a random interval before each send."""

    def __init__(self, inner: Endpoint, max_delay: float, seed: int = 0):
        self.inner = inner
        self.rank = inner.rank
        self.world_size = inner.world_size
        self.timeout = inner.timeout
        self.max_delay = max_delay
        self._rand = random.Random(seed)

    def send(self, to, tag, payload):
        time.sleep(self._rand.uniform(0.0, self.max_delay))
        self.inner.send(to, tag, payload)

    def recv(self, source, tag, timeout=None):
        return self.inner.recv(source, tag, timeout)

    def close(self):
        self.inner.close()


def as_payload(values) -> np.ndarray:
    return np.array(values, dtype=np.float64, copy=True).reshape(-1)
