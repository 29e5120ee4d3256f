"""Process-per-rank execution over the TCP backend."""

from __future__ import annotations

import multiprocessing as mp
import queue
import traceback
from dataclasses import replace
from typing import Dict, Optional

from .executors import (
    ConfigError,
    RankFailure,
    TrainConfig,
    TrainResult,
    _Recorder,
    assemble,
    prepare,
    rank_main,
    run,
)
from .transport import TcpEndpoint, free_addresses


def _child(cfg: TrainConfig, rank: int, out: "mp.Queue") -> None:
    shared = prepare(cfg)
    rec = _Recorder(shared, rank)
    ep = TcpEndpoint(rank, cfg.endpoints, cfg.timeout_s)
    try:
        rank_main(shared, ep, rec)
    except BaseException as exc:  # noqa: BLE001 - shipped to the parent
        out.put((rank, "error", (rec.clock.phase, f"{type(exc).__name__}: {exc}",
                                 traceback.format_exc())))
        return
    finally:
        ep.close()
    rec.shared = None
    out.put((rank, "ok", rec))


def run_processes(cfg: TrainConfig, start_method: str = "spawn") -> TrainResult:
    """Spawn one OS process per rank on localhost (or the configured endpoints)."""
    if cfg.backend != "tcp":
        raise ConfigError("multi-process runs need the tcp backend")
    if cfg.algorithm == "sequential":
        return run(cfg)
    world = cfg.topology.world_size
    if cfg.endpoints is None:
        cfg = replace(cfg, endpoints=tuple(free_addresses(world)))
    elif len(cfg.endpoints) != world:
        raise ConfigError(f"transport.endpoints lists {len(cfg.endpoints)} addresses, world size is {world}")
    shared = prepare(cfg)
    ctx = mp.get_context(start_method)
    out = ctx.Queue()
    procs = [ctx.Process(target=_child, args=(cfg, r, out), daemon=True) for r in range(world)]
    for p in procs:
        p.start()
    recs: Dict[int, _Recorder] = {}
    failure: Optional[RankFailure] = None
    deadline_each = cfg.timeout_s + 60.0
    try:
        while len(recs) < world and failure is None:
            try:
                rank, status, body = out.get(timeout=deadline_each)
            except queue.Empty:
                failure = RankFailure(-1, "collect", TimeoutError("ranks stopped reporting"))
                break
            if status == "ok":
                body.shared = shared
                recs[rank] = body
            else:
                phase, message, _ = body
                failure = RankFailure(rank, phase, RuntimeError(message))
    finally:
        for p in procs:
            if failure is not None:
                p.terminate()
            p.join(timeout=5.0)
    if failure is not None:
        raise failure
    return assemble(shared, recs)


def run_single_rank(cfg: TrainConfig, rank: int) -> Optional[TrainResult]:
    """Join an existing rendezvous as one rank. Returns a result on worker 0 only.

    Communicator timings live in other processes, so an LSGD result assembled
    here reports zero global-allreduce time.
    """
    if cfg.backend != "tcp" or not cfg.endpoints:
        raise ConfigError("joining as a single rank needs transport.backend=tcp and endpoints")
    world = cfg.topology.world_size
    if len(cfg.endpoints) != world:
        raise ConfigError(f"transport.endpoints lists {len(cfg.endpoints)} addresses, world size is {world}")
    if not 0 <= rank < world:
        raise ConfigError(f"rank {rank} outside world of {world}")
    shared = prepare(cfg)
    rec = _Recorder(shared, rank)
    ep = TcpEndpoint(rank, cfg.endpoints, cfg.timeout_s)
    try:
        rank_main(shared, ep, rec)
    except BaseException as exc:
        raise RankFailure(rank, rec.clock.phase, exc) from exc
    finally:
        ep.close()
    if rank != 0:
        return None
    return assemble(shared, {0: rec})
