"""Socket backend: one listening socket per rank, one outgoing connection per peer.

Rendezvous is by a fixed address list indexed by rank. A connecting rank
first sends its id as a little-endian u32, then a stream of frames.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .base import DEFAULT_TIMEOUT, Endpoint, Mailbox, TransportError, TransportTimeout, as_payload
from .wire import HEADER_SIZE, WIRE_DTYPE, Message, decode_header, encode

HELLO = struct.Struct("<I")
Address = Tuple[str, int]


def parse_address(text: str) -> Address:
    host, _, port = str(text).rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad endpoint {text!r}, expected host:port")
    return host, int(port)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    while n:
        try:
            chunk = sock.recv(n)
        except OSError:
            return None
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def open_listener(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(64)
    return sock


class TcpEndpoint(Endpoint):
    def __init__(self, rank: int, addresses: Sequence[Address], timeout: float = DEFAULT_TIMEOUT,
                 listener: Optional[socket.socket] = None):
        self.rank = rank
        self.addresses = [tuple(a) for a in addresses]
        self.world_size = len(self.addresses)
        if not 0 <= rank < self.world_size:
            raise ValueError(f"rank {rank} outside world of {self.world_size}")
        self.timeout = timeout
        self.mailbox = Mailbox()
        self._listener = listener or open_listener(*self.addresses[rank])
        self._out = {}
        self._out_lock = threading.Lock()
        self._incoming: List[socket.socket] = []
        self._closed = threading.Event()
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True,
                                          name=f"tcp-accept-{rank}")
        self._acceptor.start()

    def _accept_loop(self):
        while not self._closed.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._incoming.append(conn)
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True).start()

    def _read_loop(self, conn: socket.socket):
        hello = _recv_exact(conn, HELLO.size)
        if hello is None:
            return
        (peer,) = HELLO.unpack(hello)
        while True:
            header = _recv_exact(conn, HEADER_SIZE)
            if header is None:
                break
            tag, source, n = decode_header(header)
            body = _recv_exact(conn, n * WIRE_DTYPE.itemsize) if n else b""
            if body is None:
                break
            payload = np.frombuffer(body, dtype=WIRE_DTYPE).astype(np.float64)
            self.mailbox.put(Message(tag, payload, source))
        self.mailbox.disconnect(peer)

    def _connection(self, to: int) -> Tuple[socket.socket, threading.Lock]:
        with self._out_lock:
            entry = self._out.get(to)
            if entry is not None:
                return entry
            deadline = time.monotonic() + self.timeout
            delay = 0.005
            while True:
                try:
                    sock = socket.create_connection(self.addresses[to], timeout=self.timeout)
                    break
                except OSError as exc:
                    if time.monotonic() > deadline:
                        raise TransportTimeout(
                            f"rank {self.rank} could not reach rank {to} at {self.addresses[to]}: {exc}"
                        ) from None
                    time.sleep(delay)
                    delay = min(delay * 2, 0.2)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(None)
            sock.sendall(HELLO.pack(self.rank))
            entry = (sock, threading.Lock())
            self._out[to] = entry
            return entry

    def send(self, to: int, tag: int, payload) -> None:
        self._check_rank(to)
        if self._closed.is_set():
            raise TransportError(f"rank {self.rank} endpoint is closed")
        msg = Message(int(tag), as_payload(payload), self.rank)
        if to == self.rank:
            self.mailbox.put(msg)
            return
        frame = encode(msg)
        sock, lock = self._connection(to)
        try:
            with lock:
                sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send from rank {self.rank} to rank {to} failed: {exc}") from None

    def recv(self, source: int, tag: int, timeout: Optional[float] = None) -> Message:
        self._check_rank(source)
        return self.mailbox.get(source, int(tag), self.timeout if timeout is None else timeout)

    def close(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        for sock in [self._listener] + [s for s, _ in self._out.values()] + self._incoming:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()


def local_world(world_size: int, timeout: float = DEFAULT_TIMEOUT,
                host: str = "127.0.0.1") -> List[TcpEndpoint]:
    """Endpoints for every rank on ephemeral localhost ports (one process, many threads)."""
    listeners = [open_listener(host, 0) for _ in range(world_size)]
    addresses = [s.getsockname()[:2] for s in listeners]
    return [TcpEndpoint(r, addresses, timeout, listener=listeners[r]) for r in range(world_size)]


def free_addresses(n: int, host: str = "127.0.0.1") -> List[Address]:
    """Reserve-and-release n ephemeral ports for child processes to bind."""
    socks = [open_listener(host, 0) for _ in range(n)]
    addrs = [s.getsockname()[:2] for s in socks]
    for s in socks:
        s.close()
    return addrs
