from .base import (
    DEFAULT_TIMEOUT,
    CollectiveError,
    CommGroup,
    Endpoint,
    JitteredEndpoint,
    PeerDisconnected,
    TransportError,
    TransportTimeout,
    UnknownRank,
)
from .collectives import allreduce, broadcast, reduce_to_root
from .inprocess import Fabric, InProcessEndpoint
from .tcp import TcpEndpoint, free_addresses, local_world, parse_address
from .wire import Message

__all__ = [
    "DEFAULT_TIMEOUT",
    "CollectiveError",
    "CommGroup",
    "Endpoint",
    "Fabric",
    "InProcessEndpoint",
    "JitteredEndpoint",
    "Message",
    "PeerDisconnected",
    "TcpEndpoint",
    "TransportError",
    "TransportTimeout",
    "UnknownRank",
    "allreduce",
    "broadcast",
    "free_addresses",
    "local_world",
    "parse_address",
    "reduce_to_root",
]
