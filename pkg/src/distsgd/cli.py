"""``distsgd`` command line: train, verify, simulate, calibrate.

Exit codes: 0 ok, 1 runtime failure, 2 bad configuration or input. Every
failure prints one line to stderr starting with ``error:``.
"""

from __future__ import annotations

import argparse
import csv
import sys
from typing import List, Optional, Sequence

from . import config as config_mod
from . import simulator
from .data import DataError
from .executors import ConfigError, RankFailure, TrainResult, run, training_loss, verify_equivalence
from .transport import TransportError

METRICS_COLUMNS = (
    "run_id", "algorithm", "n_workers", "n_groups", "iteration", "epoch", "lr", "loss",
    "t_io_s", "t_compute_s", "t_local_reduce_s", "t_global_allreduce_s", "t_broadcast_s",
    "t_update_s", "iter_time_s", "throughput_sps",
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def metrics_rows(result: TrainResult, run_id: str) -> List[list]:
    rows = []
    for t, (loss, lr, epoch, times, it) in enumerate(
        zip(result.losses, result.lrs, result.epochs, result.phase_timings, result.iter_times)
    ):
        rows.append([
            run_id, result.algorithm, result.n_workers, result.n_groups, t, epoch, repr(lr),
            repr(loss), repr(times["io"]), repr(times["compute"]), repr(times["local_reduce"]),
            repr(times["global_allreduce"]), repr(times["broadcast"]), repr(times["update"]),
            repr(it), repr(result.global_batch / it if it > 0 else 0.0),
        ])
    return rows


def write_metrics(result: TrainResult, run_id: str, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        writer.writerows(metrics_rows(result, run_id))


def parse_worker_list(text: str) -> List[int]:
    """``"4,8,16"`` or ``"4,8,...,256"`` (progression inferred from the first two terms)."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." in parts:
        i = parts.index("...")
        if i < 2 or i != len(parts) - 2:
            raise ValueError(f"cannot expand {text!r}: use a,b,...,last")
        head = [int(p) for p in parts[:i]]
        last = int(parts[-1])
        a, b = head[-2], head[-1]
        values = list(head)
        if b > a and b % a == 0 and a > 0:
            ratio = b // a
            while values[-1] * ratio <= last:
                values.append(values[-1] * ratio)
        elif b > a:
            while values[-1] + (b - a) <= last:
                values.append(values[-1] + (b - a))
        else:
            raise ValueError(f"cannot expand {text!r}: progression must increase")
        if values[-1] != last:
            raise ValueError(f"{last} is not reached by the progression in {text!r}")
        return values
    values = [int(p) for p in parts]
    if not values or any(v < 1 for v in values):
        raise ValueError("worker counts must be positive integers")
    return values


def _load_config(path):
    try:
        return config_mod.load(path)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config: {exc}") from None


def _runtime(exc: BaseException) -> CliError:
    if isinstance(exc, RankFailure):
        return CliError(EXIT_RUNTIME, f"runtime: rank {exc.rank} phase {exc.phase}: {exc.cause}")
    return CliError(EXIT_RUNTIME, f"runtime: {type(exc).__name__}: {exc}")


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    try:
        cfg = config_mod.to_train_config(doc)
    except (ConfigError, DataError) as exc:
        raise CliError(EXIT_CONFIG, f"config: {exc}") from None
    rid = config_mod.run_id(doc)
    try:
        if args.rank is not None:
            from .launch import run_single_rank
            result = run_single_rank(cfg, args.rank)
        elif cfg.backend == "tcp" and not args.threads:
            from .launch import run_processes
            result = run_processes(cfg)
        else:
            result = run(cfg)
    except (ConfigError, DataError) as exc:
        raise CliError(EXIT_CONFIG, f"config: {exc}") from None
    except (RankFailure, TransportError, RuntimeError, FloatingPointError, OSError) as exc:
        raise _runtime(exc) from None
    if result is None:
        print(f"rank {args.rank} finished")
        return EXIT_OK
    write_metrics(result, rid, args.out)
    train_loss = training_loss(cfg, result.final_params, cfg.data.build(cfg.seed))
    print(f"run {rid}: {result.algorithm} N={result.n_workers} G={result.n_groups} "
          f"iterations={result.iterations}")
    print(f"final training loss {train_loss:.6f}")
    print(f"mean throughput {result.throughput:.1f} samples/s")
    print(f"metrics written to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    doc = _load_config(args.config)
    try:
        runs, tol = config_mod.verify_configs(doc)
        report = verify_equivalence(runs, tol)
    except (ConfigError, DataError) as exc:
        raise CliError(EXIT_CONFIG, f"config: {exc}") from None
    except (RankFailure, TransportError, RuntimeError) as exc:
        raise _runtime(exc) from None
    print(report.table())
    if not report.passed:
        worst = max(report.pairwise.values())
        print(f"error: verify: deviation {worst:.3e} exceeds tolerance {tol:g}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        cost = simulator.CostModel.load(args.cost_model)
        counts = parse_worker_list(args.workers)
        rows = simulator.sweep(cost, counts, args.group_size, args.local_batch)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"simulate: cannot read {args.cost_model}: {exc.strerror}") from None
    except (simulator.SimulatorError, ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"simulate: {exc}") from None
    simulator.write_sweep_csv(rows, args.out)
    print(f"{'n_workers':>9}  {'csgd eff %':>10}  {'lsgd eff %':>10}")
    table = simulator.efficiency_table(rows)
    for n in sorted({r.n_workers for r in rows}):
        cs = table.get("csgd", {}).get(n)
        ls = table.get("lsgd", {}).get(n)
        fmt = lambda v: f"{v:10.2f}" if v is not None else f"{'-':>10}"  # noqa: E731
        print(f"{n:>9}  {fmt(cs)}  {fmt(ls)}")
    print(f"sweep written to {args.out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        rows = simulator.read_measurements(args.measured)
        cal = simulator.calibrate(rows, algo=args.algo, n_params=args.n_params,
                                  bytes_per_param=args.bytes_per_param, t_io=args.t_io)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"calibrate: cannot read {args.measured}: {exc.strerror}") from None
    except (simulator.SimulatorError, ValueError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, f"calibrate: {exc}") from None
    with open(args.out, "w") as fh:
        fh.write(cal.model.to_json() + "\n")
    m = cal.model
    print(f"alpha={m.alpha:.6g} s  beta={m.beta:.6g} s/B  t_sample={m.t_sample:.6g} s  t_io={m.t_io:.6g} s")
    print(f"residuals: allreduce rms {cal.residuals['allreduce_rms']:.3e} s, "
          f"compute rms {cal.residuals['compute_rms']:.3e} s")
    print(f"model written to {args.out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: usage: {self.prog}: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distsgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("config")
    p.add_argument("--out", default="metrics.csv")
    p.add_argument("--rank", type=int, default=None,
                   help="join a tcp rendezvous as this single rank")
    p.add_argument("--threads", action="store_true",
                   help="tcp backend: run all ranks as threads of this process")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="check iterate equivalence of sequential/csgd/lsgd")
    p.add_argument("config")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="cost-model sweep over worker counts")
    p.add_argument("cost_model")
    p.add_argument("--workers", default="4,8,...,256")
    p.add_argument("--group-size", type=int, default=4)
    p.add_argument("--local-batch", type=int, default=64)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit a cost model to measured timings")
    p.add_argument("measured")
    p.add_argument("--algo", choices=simulator.ALGOS, default="ring")
    p.add_argument("--n-params", type=int, default=simulator.REFERENCE_CLUSTER.n_params)
    p.add_argument("--bytes-per-param", type=int, default=4)
    p.add_argument("--t-io", type=float, default=0.0,
                   help="io time to assume when all rows share one local batch")
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
