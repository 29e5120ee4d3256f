"""Rooted and symmetric collectives built from point-to-point messages.

Reductions are a linear fan-in at the root: the accumulator starts at +0.0
and adds member contributions in ascending member id, whatever order they
arrive in. That makes every result bitwise reproducible across schedules and
backends. Every collective ends with an acknowledgement round so no member
returns before all members have entered.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np

from .base import CollectiveError, CommGroup, Endpoint, as_payload

_REDUCE, _REDUCE_ACK, _BCAST, _BCAST_ACK = range(4)
_OK, _LENGTH_MISMATCH = 0.0, 1.0


def _tag(group: CommGroup, op: int) -> int:
    return group.tag_base * 4 + op


def _check_member(ep: Endpoint, group: CommGroup) -> None:
    if ep.rank not in group:
        raise CollectiveError(f"rank {ep.rank} is not a member of {group.members}")


def reduce_to_root(ep: Endpoint, group: CommGroup, contribution) -> Optional[np.ndarray]:
    """Elementwise sum of all contributions, returned at ``group.root`` only."""
    _check_member(ep, group)
    vec = as_payload(contribution)
    root = group.root
    if ep.rank != root:
        ep.send(root, _tag(group, _REDUCE), vec)
        status = ep.recv(root, _tag(group, _REDUCE_ACK)).payload
        if status[0] != _OK:
            raise CollectiveError(f"reduce in group {group.members}: contribution lengths differ")
        return None

    acc = np.zeros(vec.size)
    bad = []
    for member in group.members:
        part = vec if member == root else ep.recv(member, _tag(group, _REDUCE)).payload
        if part.size != vec.size:
            bad.append(member)
            continue
        acc = acc + part
    status = [_LENGTH_MISMATCH if bad else _OK]
    for member in group.members:
        if member != root:
            ep.send(member, _tag(group, _REDUCE_ACK), status)
    if bad:
        raise CollectiveError(
            f"reduce in group {group.members}: ranks {bad} sent vectors of a different length "
            f"than the root's {vec.size}"
        )
    return acc


def broadcast(ep: Endpoint, group: CommGroup, payload=None) -> np.ndarray:
    """Copy the root's payload to every member."""
    _check_member(ep, group)
    root = group.root
    if ep.rank == root:
        if payload is None:
            raise CollectiveError("broadcast root must supply a payload")
        vec = as_payload(payload)
        others = [m for m in group.members if m != root]
        for member in others:
            ep.send(member, _tag(group, _BCAST), vec)
        for member in others:
            ep.recv(member, _tag(group, _BCAST_ACK))
        return vec
    vec = ep.recv(root, _tag(group, _BCAST)).payload
    ep.send(root, _tag(group, _BCAST_ACK), [_OK])
    return vec


def allreduce(ep: Endpoint, group: CommGroup, contribution, link_delay: float = 0.0) -> np.ndarray:
    """Sum at every member: fixed-order reduce to the lowest id, then broadcast.

    ``link_delay`` seconds are slept on entry to model a slow inter-node link.
    """
    if link_delay > 0:
        time.sleep(link_delay)
    g = group.with_root(group.members[0])
    total = reduce_to_root(ep, g, contribution)
    return broadcast(ep, g, total)
