"""Sequential SGD, flat synchronous distributed SGD (CSGD) and layered SGD (LSGD).

Rank layout for the distributed loops: ranks ``0..N-1`` are workers. LSGD adds
one communicator per group at ranks ``N..N+G-1``; group ``j`` holds workers
``j*N/G .. (j+1)*N/G - 1`` plus communicator ``N + j``.

Every worker draws the same global minibatch from an identically seeded
sampler and keeps its contiguous shard, so all three loops consume one
minibatch sequence. A worker's reduced contribution is its shard gradient with
the shard loss appended as a final element; after averaging the tail holds the
minibatch loss and the update only ever sees the gradient part.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import numerics
from .data import Dataset, MinibatchSampler, generate_synthetic, load_csv, partition_minibatch
from .numerics import MASK64, MlpModel, Rng, init_params, loss_and_gradient, rng_next
from .optimizer import HyperParams, OptimizerState, learning_rate, sgd_update
from .transport import (
    DEFAULT_TIMEOUT,
    CommGroup,
    Endpoint,
    Fabric,
    TransportError,
    allreduce,
    broadcast,
    local_world,
    reduce_to_root,
)

ALGORITHMS = ("sequential", "csgd", "lsgd")
PHASES = ("io", "compute", "local_reduce", "global_allreduce", "broadcast", "update")


class ConfigError(ValueError):
    pass


class RankFailure(RuntimeError):
    def __init__(self, rank: int, phase: str, cause: BaseException):
        super().__init__(f"rank {rank} failed during {phase}: {cause}")
        self.rank = rank
        self.phase = phase
        self.cause = cause


@dataclass(frozen=True)
class Topology:
    n_workers: int
    n_groups: int = 1
    communicators: bool = False

    def __post_init__(self):
        if self.n_workers < 1 or self.n_groups < 1:
            raise ConfigError("n_workers and n_groups must be >= 1")
        if self.n_workers % self.n_groups:
            raise ConfigError(f"n_groups={self.n_groups} does not divide n_workers={self.n_workers}")

    @classmethod
    def for_algorithm(cls, algorithm: str, n_workers: int, n_groups: int = 1) -> "Topology":
        if algorithm == "sequential" and n_workers != 1:
            raise ConfigError("sequential SGD runs on exactly one worker")
        if algorithm != "lsgd":
            n_groups = 1
        return cls(n_workers, n_groups, algorithm == "lsgd")

    @property
    def workers_per_group(self) -> int:
        return self.n_workers // self.n_groups

    @property
    def world_size(self) -> int:
        return self.n_workers + (self.n_groups if self.communicators else 0)

    def role(self, rank: int) -> str:
        if 0 <= rank < self.n_workers:
            return "worker"
        if self.communicators and rank < self.world_size:
            return "communicator"
        raise ValueError(f"rank {rank} outside world of {self.world_size}")

    def group_of(self, rank: int) -> int:
        if self.role(rank) == "worker":
            return rank // self.workers_per_group
        return rank - self.n_workers

    def communicator(self, group: int) -> int:
        return self.n_workers + group

    def group_workers(self, group: int) -> range:
        g = self.workers_per_group
        return range(group * g, (group + 1) * g)

    def local_group(self, group: int) -> CommGroup:
        members = list(self.group_workers(group)) + [self.communicator(group)]
        return CommGroup(members, root=self.communicator(group), tag_base=1 + group)

    def communicator_group(self) -> CommGroup:
        return CommGroup([self.communicator(j) for j in range(self.n_groups)], tag_base=0)

    def worker_group(self) -> CommGroup:
        return CommGroup(range(self.n_workers), tag_base=0)


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"
    n_samples: int = 5000
    n_features: int = 32
    n_classes: int = 10
    spread: float = 3.0
    path: Optional[str] = None
    seed: Optional[int] = None

    def build(self, default_seed: int) -> Dataset:
        if self.source == "synthetic":
            seed = default_seed if self.seed is None else self.seed
            return generate_synthetic(seed, self.n_samples, self.n_features, self.n_classes, self.spread)
        if self.source == "csv":
            if not self.path:
                raise ConfigError("csv data source needs a path")
            return load_csv(self.path)
        raise ConfigError(f"unknown data source {self.source!r}")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "sequential"
    n_workers: int = 1
    n_groups: int = 1
    local_batch: int = 64
    iterations: Optional[int] = None
    epochs: Optional[float] = None
    seed: int = 0
    model: MlpModel = MlpModel((32, 16, 10))
    init_scale: float = 0.1
    data: DataSpec = DataSpec()
    hp: HyperParams = HyperParams()
    sampling: str = "partition"
    backend: str = "inprocess"
    endpoints: Optional[Tuple[Tuple[str, int], ...]] = None
    timeout_s: float = DEFAULT_TIMEOUT
    io_delay: float = 0.0
    global_link_delay: float = 0.0
    record_history: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.local_batch < 1:
            raise ConfigError("local_batch must be >= 1")
        if self.iterations is None and self.epochs is None:
            raise ConfigError("set iterations or epochs")
        if self.iterations is not None and self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.sampling not in ("partition", "independent"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if self.backend not in ("inprocess", "tcp"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.io_delay < 0 or self.global_link_delay < 0:
            raise ConfigError("injected delays must be >= 0")
        self.topology  # validates divisibility

    @property
    def topology(self) -> Topology:
        return Topology.for_algorithm(self.algorithm, self.n_workers, self.n_groups)

    @property
    def global_batch(self) -> int:
        return self.local_batch * self.n_workers

    def iters_per_epoch(self, n_samples: int) -> int:
        per = n_samples // self.global_batch
        if per < 1:
            raise ConfigError(f"global batch {self.global_batch} exceeds dataset size {n_samples}")
        return per

    def total_iterations(self, n_samples: int) -> int:
        if self.iterations is not None:
            return self.iterations
        return int(round(self.epochs * self.iters_per_epoch(n_samples)))


@dataclass
class TrainResult:
    algorithm: str
    n_workers: int
    n_groups: int
    global_batch: int
    final_params: np.ndarray
    losses: List[float]
    lrs: List[float]
    epochs: List[int]
    phase_timings: List[Dict[str, float]]
    iter_times: List[float]
    wall_time: float
    history: Optional[List[np.ndarray]] = None
    replica_digests: Dict[int, List[str]] = field(default_factory=dict)
    replica_final: Dict[int, np.ndarray] = field(default_factory=dict)
    grad_versions: Dict[int, List[int]] = field(default_factory=dict)
    io_intervals: List[Tuple[float, float]] = field(default_factory=list)
    global_intervals: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.losses)

    @property
    def throughput(self) -> float:
        """Samples per second over the whole run."""
        if self.wall_time <= 0:
            return 0.0
        return self.global_batch * self.iterations / self.wall_time

    @property
    def mean_iter_time(self) -> float:
        return self.wall_time / self.iterations if self.iterations else 0.0

    def overlap_pairs(self) -> List[Tuple[Tuple[float, float], Tuple[float, float]]]:
        """(io interval of step s+1, global allreduce interval of step s) for LSGD.

        These are the two activities that share one row of the pipelined
        schedule: workers load the next minibatch while communicators average
        the previous gradients.
        """
        return list(zip(self.io_intervals[1:], self.global_intervals[:-1]))


def derive_seed(seed: int, stream: int) -> int:
    return rng_next((seed + stream * 0x632BE59BD9B4E019) & MASK64)[0]


def _digest(w: np.ndarray) -> str:
    return hashlib.blake2b(w.tobytes(), digest_size=16).hexdigest()


class _Clock:
    """Phase stopwatch for one rank; remembers the phase in progress for error reports."""

    def __init__(self):
        self.phase = "setup"

    def run(self, row: Dict[str, float], phase: str, fn: Callable, *args):
        """Call ``fn(*args)``, add its duration to ``row[phase]``; returns (value, interval)."""
        self.phase = phase
        start = time.monotonic()
        out = fn(*args)
        end = time.monotonic()
        row[phase] += end - start
        return out, (start, end)


def _row() -> Dict[str, float]:
    return dict.fromkeys(PHASES, 0.0)


@dataclass
class _Shared:
    cfg: TrainConfig
    dataset: Dataset
    w0: np.ndarray
    n_iters: int
    iters_per_epoch: int

    def lr(self, t: int) -> float:
        return learning_rate(self.cfg.hp, self.cfg.n_workers, self.cfg.local_batch,
                             t / self.iters_per_epoch)


def prepare(cfg: TrainConfig, dataset: Optional[Dataset] = None) -> _Shared:
    dataset = cfg.data.build(cfg.seed) if dataset is None else dataset
    if dataset.n_features != cfg.model.n_features:
        raise ConfigError(
            f"dataset has {dataset.n_features} features, model input is {cfg.model.n_features}"
        )
    if dataset.n_classes > cfg.model.n_classes:
        raise ConfigError(
            f"dataset has {dataset.n_classes} classes, model output is {cfg.model.n_classes}"
        )
    w0 = init_params(cfg.model, Rng(derive_seed(cfg.seed, 1)), cfg.init_scale)
    return _Shared(cfg, dataset, w0, cfg.total_iterations(len(dataset)),
                   cfg.iters_per_epoch(len(dataset)))


class _Loader:
    """Draws this worker's shard of each minibatch and applies the injected io delay."""

    def __init__(self, shared: _Shared, worker: int):
        cfg = shared.cfg
        self.shared = shared
        self.worker = worker
        if cfg.sampling == "partition":
            self.sampler = MinibatchSampler(len(shared.dataset), derive_seed(cfg.seed, 2))
        else:
            self.sampler = MinibatchSampler(len(shared.dataset), derive_seed(cfg.seed, 100 + worker))

    def __call__(self):
        cfg = self.shared.cfg
        if cfg.sampling == "partition":
            batch = self.sampler.draw(cfg.global_batch)
            shard = partition_minibatch(batch, cfg.n_workers)[self.worker].indices
        else:
            shard = self.sampler.draw(cfg.local_batch)
        x, y = self.shared.dataset.take(shard)
        if cfg.io_delay > 0:
            time.sleep(cfg.io_delay)
        return x, y


class _Recorder:
    """Per-rank log of iterates, losses and phase timings."""

    def __init__(self, shared: _Shared, rank: int):
        self.shared = shared
        self.rank = rank
        self.clock = _Clock()
        self.losses: List[float] = []
        self.lrs: List[float] = []
        self.timings: List[Dict[str, float]] = []
        self.boundaries: List[float] = []
        self.io_intervals: List[Tuple[float, float]] = []
        self.global_intervals: List[Tuple[float, float]] = []
        self.digests: List[str] = []
        self.history: List[np.ndarray] = []
        self.grad_versions: List[int] = []
        self.final: Optional[np.ndarray] = None
        self.start = time.monotonic()
        self.end = self.start

    def params(self, w: np.ndarray):
        self.digests.append(_digest(w))
        if self.shared.cfg.record_history:
            self.history.append(w.copy())

    def step_done(self, row: Dict[str, float], loss_value: float, lr: float, w: np.ndarray):
        self.losses.append(float(loss_value))
        self.lrs.append(lr)
        self.timings.append(row)
        self.boundaries.append(time.monotonic())
        self.params(w)

    def finish(self, w: Optional[np.ndarray]):
        self.final = None if w is None else w.copy()
        self.end = time.monotonic()


def _sequential_rank(shared: _Shared, rec: _Recorder) -> _Recorder:
    cfg = shared.cfg
    clock = rec.clock
    load = _Loader(shared, 0)
    w = shared.w0.copy()
    state = OptimizerState.zeros(w.size)
    rec.params(w)
    for t in range(shared.n_iters):
        row = _row()
        (x, y), io = clock.run(row, "io", load)
        rec.io_intervals.append(io)
        rec.grad_versions.append(t)
        (loss_t, grad), _ = clock.run(row, "compute", loss_and_gradient, cfg.model, w, x, y)
        lr = shared.lr(t)
        (w, state), _ = clock.run(row, "update", sgd_update, w, grad, state, cfg.hp, lr)
        rec.step_done(row, loss_t, lr, w)
    rec.finish(w)
    return rec


def _contribution(model, w, x, y) -> np.ndarray:
    loss_i, grad_i = loss_and_gradient(model, w, x, y)
    return np.append(grad_i, loss_i)


def _csgd_rank(shared: _Shared, ep: Endpoint, rec: _Recorder) -> _Recorder:
    cfg = shared.cfg
    topo = cfg.topology
    group = topo.worker_group()
    clock = rec.clock
    load = _Loader(shared, ep.rank)
    w = shared.w0.copy()
    state = OptimizerState.zeros(w.size)
    rec.params(w)
    for t in range(shared.n_iters):
        row = _row()
        (x, y), io = clock.run(row, "io", load)
        rec.io_intervals.append(io)
        rec.grad_versions.append(t)
        contrib, _ = clock.run(row, "compute", _contribution, cfg.model, w, x, y)
        total, span = clock.run(row, "global_allreduce", allreduce, ep, group, contrib,
                                cfg.global_link_delay)
        rec.global_intervals.append(span)
        avg = total / topo.n_workers
        lr = shared.lr(t)
        (w, state), _ = clock.run(row, "update", sgd_update, w, avg[:-1], state, cfg.hp, lr)
        rec.step_done(row, avg[-1], lr, w)
    rec.finish(w)
    return rec


def _lsgd_worker(shared: _Shared, ep: Endpoint, rec: _Recorder) -> _Recorder:
    """Worker side of the pipelined schedule.

    Step s computes gradients at w_s and reduces them to the communicator.
    Loading the minibatch for step s+1 then runs while the communicators
    average step s globally; the update to w_{s+1} is applied only after the
    broadcast, right before step s+1's gradients. A final drain applies w_T.
    """
    cfg = shared.cfg
    topo = cfg.topology
    local = topo.local_group(topo.group_of(ep.rank))
    clock = rec.clock
    load = _Loader(shared, ep.rank)
    w = shared.w0.copy()
    version = 0
    state = OptimizerState.zeros(w.size)
    rec.params(w)
    if shared.n_iters == 0:
        rec.finish(w)
        return rec

    row = _row()
    (x, y), io = clock.run(row, "io", load)
    for s in range(shared.n_iters):
        rec.io_intervals.append(io)
        rec.grad_versions.append(version)
        contrib, _ = clock.run(row, "compute", _contribution, cfg.model, w, x, y)
        clock.run(row, "local_reduce", reduce_to_root, ep, local, contrib)

        next_row = _row()
        if s + 1 < shared.n_iters:
            # Overlaps the communicators' global allreduce of step s.
            (x, y), io = clock.run(next_row, "io", load)
        avg, _ = clock.run(row, "broadcast", broadcast, ep, local, None)
        lr = shared.lr(s)
        (w, state), _ = clock.run(row, "update", sgd_update, w, avg[:-1], state, cfg.hp, lr)
        version += 1
        rec.step_done(row, avg[-1], lr, w)
        row = next_row
    rec.finish(w)
    return rec


def _lsgd_communicator(shared: _Shared, ep: Endpoint, rec: _Recorder) -> _Recorder:
    cfg = shared.cfg
    topo = cfg.topology
    local = topo.local_group(topo.group_of(ep.rank))
    comms = topo.communicator_group()
    clock = rec.clock
    zero = np.zeros(cfg.model.n_params + 1)
    for _ in range(shared.n_iters):
        row = _row()
        summed, _ = clock.run(row, "local_reduce", reduce_to_root, ep, local, zero)
        summed = summed / topo.n_workers
        avg, span = clock.run(row, "global_allreduce", allreduce, ep, comms, summed,
                              cfg.global_link_delay)
        rec.global_intervals.append(span)
        clock.run(row, "broadcast", broadcast, ep, local, avg)
        rec.timings.append(row)
    rec.finish(None)
    return rec


def rank_main(shared: _Shared, ep: Endpoint, rec: Optional[_Recorder] = None) -> _Recorder:
    cfg = shared.cfg
    rec = _Recorder(shared, ep.rank) if rec is None else rec
    if cfg.algorithm == "csgd":
        return _csgd_rank(shared, ep, rec)
    if cfg.algorithm == "lsgd":
        if cfg.topology.role(ep.rank) == "worker":
            return _lsgd_worker(shared, ep, rec)
        return _lsgd_communicator(shared, ep, rec)
    raise ConfigError(f"{cfg.algorithm!r} does not run on a transport")


def _make_endpoints(cfg: TrainConfig, world_size: int):
    if cfg.backend == "inprocess":
        fabric = Fabric(world_size, cfg.timeout_s)
        return fabric.endpoints(), fabric.abort
    if cfg.endpoints:
        from .transport import TcpEndpoint
        if len(cfg.endpoints) != world_size:
            raise ConfigError(f"transport.endpoints lists {len(cfg.endpoints)} addresses, "
                              f"world size is {world_size}")
        eps = [TcpEndpoint(r, cfg.endpoints, cfg.timeout_s) for r in range(world_size)]
    else:
        eps = local_world(world_size, cfg.timeout_s)

    def abort(exc):
        for e in eps:
            e.mailbox.abort(exc)
    return eps, abort


def run_world(shared: _Shared, endpoints: Sequence[Endpoint], abort: Callable) -> List[_Recorder]:
    """Run every rank on its own thread and return the per-rank recorders."""
    recs = [_Recorder(shared, ep.rank) for ep in endpoints]
    failures: List[RankFailure] = []
    lock = threading.Lock()

    def target(ep, rec):
        try:
            rank_main(shared, ep, rec)
        except BaseException as exc:  # noqa: BLE001 - reported to the driver
            with lock:
                failures.append(RankFailure(ep.rank, rec.clock.phase, exc))
            abort(exc)

    threads = [threading.Thread(target=target, args=(ep, rec), name=f"rank-{ep.rank}", daemon=True)
               for ep, rec in zip(endpoints, recs)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for ep in endpoints:
        ep.close()
    if failures:
        # Ranks woken by the abort fail with transport errors; report the root cause.
        primary = [f for f in failures if not isinstance(f.cause, TransportError)] or failures
        raise primary[0]
    return recs


def assemble(shared: _Shared, recs) -> TrainResult:
    """Merge per-rank recorders into one result, led by worker 0.

    ``recs`` is a list indexed by rank or a ``{rank: recorder}`` mapping; a
    mapping may omit ranks (a process that joined a TCP world alone). For
    LSGD the global allreduce timings come from communicator 0 when present.
    """
    cfg = shared.cfg
    topo = cfg.topology
    recs = dict(enumerate(recs)) if isinstance(recs, (list, tuple)) else dict(recs)
    lead = recs[0]
    timings = [dict(t) for t in lead.timings]
    global_intervals = list(lead.global_intervals)
    comm = recs.get(topo.communicator(0)) if topo.communicators else None
    if comm is not None:
        global_intervals = list(comm.global_intervals)
        for row, comm_row in zip(timings, comm.timings):
            row["global_allreduce"] = comm_row["global_allreduce"]
    starts = min(r.start for r in recs.values())
    bounds = [starts] + lead.boundaries
    iter_times = [b - a for a, b in zip(bounds[:-1], bounds[1:])]
    workers = [i for i in range(topo.n_workers) if i in recs]
    per_epoch = cfg.iters_per_epoch(len(shared.dataset))
    return TrainResult(
        algorithm=cfg.algorithm,
        n_workers=topo.n_workers,
        n_groups=topo.n_groups,
        global_batch=cfg.global_batch,
        final_params=lead.final,
        losses=lead.losses,
        lrs=lead.lrs,
        epochs=[t // per_epoch for t in range(len(lead.losses))],
        phase_timings=timings,
        iter_times=iter_times,
        wall_time=max(r.end for r in recs.values()) - starts,
        history=lead.history if cfg.record_history else None,
        replica_digests={i: recs[i].digests for i in workers},
        replica_final={i: recs[i].final for i in workers},
        grad_versions={i: recs[i].grad_versions for i in workers},
        io_intervals=list(lead.io_intervals),
        global_intervals=global_intervals,
    )


def _check(cfg: TrainConfig, algorithm: str):
    if cfg.algorithm != algorithm:
        raise ConfigError(f"config is for {cfg.algorithm!r}, not {algorithm!r}")


def run_sequential(cfg: TrainConfig, dataset: Optional[Dataset] = None) -> TrainResult:
    _check(cfg, "sequential")
    shared = prepare(cfg, dataset)
    rec = _sequential_rank(shared, _Recorder(shared, 0))
    return assemble(shared, [rec])


def _run_distributed(cfg: TrainConfig, dataset: Optional[Dataset]) -> TrainResult:
    shared = prepare(cfg, dataset)
    endpoints, abort = _make_endpoints(cfg, cfg.topology.world_size)
    recs = run_world(shared, endpoints, abort)
    return assemble(shared, recs)


def run_csgd(cfg: TrainConfig, dataset: Optional[Dataset] = None) -> TrainResult:
    _check(cfg, "csgd")
    return _run_distributed(cfg, dataset)


def run_lsgd(cfg: TrainConfig, dataset: Optional[Dataset] = None) -> TrainResult:
    _check(cfg, "lsgd")
    return _run_distributed(cfg, dataset)


def run(cfg: TrainConfig, dataset: Optional[Dataset] = None) -> TrainResult:
    return {"sequential": run_sequential, "csgd": run_csgd, "lsgd": run_lsgd}[cfg.algorithm](cfg, dataset)


# ---------------------------------------------------------------------------
# Equivalence check

@dataclass
class EquivalenceReport:
    labels: List[str]
    deviations: Dict[str, List[float]]
    max_deviation: Dict[str, float]
    pairwise: Dict[Tuple[str, str], float]
    tolerance: float
    results: Dict[str, TrainResult]

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.pairwise.values())

    def table(self) -> str:
        ref = self.labels[0]
        lines = [f"{'run':<28}{'max rel deviation vs ' + ref:>34}  status"]
        for label in self.labels[1:]:
            dev = self.max_deviation[label]
            lines.append(f"{label:<28}{dev:>34.3e}  {'ok' if dev <= self.tolerance else 'FAIL'}")
        worst = max(self.pairwise.values(), default=0.0)
        lines.append(f"worst pairwise deviation {worst:.3e} (tolerance {self.tolerance:g}): "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def relative_deviation(reference: np.ndarray, other: np.ndarray, floor: float = 1e-8) -> float:
    """max_k |ref_k - other_k| / max(|ref_k|, floor)."""
    if reference.shape != other.shape:
        raise ValueError("parameter vectors differ in length")
    if reference.size == 0:
        return 0.0
    return float(np.max(np.abs(reference - other) / np.maximum(np.abs(reference), floor)))


def label_of(cfg: TrainConfig) -> str:
    if cfg.algorithm == "sequential":
        return "sequential"
    if cfg.algorithm == "csgd":
        return f"csgd N={cfg.n_workers}"
    return f"lsgd N={cfg.n_workers} G={cfg.n_groups}"


def _check_aligned(cfgs: Sequence[TrainConfig]):
    if len(cfgs) < 2:
        raise ConfigError("equivalence needs at least two configs")
    ref = cfgs[0]
    for cfg in cfgs[1:]:
        for name in ("seed", "model", "init_scale", "data", "hp", "iterations", "epochs", "sampling"):
            if getattr(cfg, name) != getattr(ref, name):
                raise ConfigError(f"config mismatch in {name!r}: {getattr(ref, name)!r} "
                                  f"vs {getattr(cfg, name)!r}")
        if cfg.global_batch != ref.global_batch:
            raise ConfigError(f"config mismatch in global batch: {ref.global_batch} vs {cfg.global_batch}")
    if ref.hp.mode != "plain":
        raise ConfigError("equivalence is checked in plain update mode")
    if ref.sampling != "partition":
        raise ConfigError("equivalence needs the shared-minibatch partition sampling mode")


def verify_equivalence(cfgs: Sequence[TrainConfig], tolerance: float = 1e-8,
                       dataset: Optional[Dataset] = None) -> EquivalenceReport:
    """Run each config and compare iterate histories against the first one."""
    _check_aligned(cfgs)
    cfgs = [replace(c, record_history=True) for c in cfgs]
    dataset = cfgs[0].data.build(cfgs[0].seed) if dataset is None else dataset
    labels, results = [], {}
    for cfg in cfgs:
        label = label_of(cfg)
        while label in results:
            label += "'"
        labels.append(label)
        results[label] = run(cfg, dataset)
    histories = {k: r.history for k, r in results.items()}
    ref = labels[0]
    deviations = {
        k: [relative_deviation(a, b) for a, b in zip(histories[ref], histories[k])] for k in labels
    }
    pairwise = {}
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            pairwise[(a, b)] = max(
                (relative_deviation(x, y) for x, y in zip(histories[a], histories[b])), default=0.0
            )
    return EquivalenceReport(
        labels=labels,
        deviations=deviations,
        max_deviation={k: max(v, default=0.0) for k, v in deviations.items()},
        pairwise=pairwise,
        tolerance=tolerance,
        results=results,
    )


def training_loss(cfg: TrainConfig, w: np.ndarray, dataset: Dataset) -> float:
    """Mean loss over the whole dataset."""
    return numerics.loss(cfg.model, w, dataset.features, dataset.labels)
