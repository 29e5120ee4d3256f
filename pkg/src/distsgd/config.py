"""Run-config JSON: schema, defaults, validation with key paths.

Top-level keys (defaults in ``DEFAULTS``)::

    algorithm, n_workers, n_groups, local_batch, epochs, iterations, seed, sampling,
    model     {layer_sizes (required), activation, init_scale}
    data      {source: synthetic|csv, n_samples, n_features, n_classes, spread, path, seed}
    optim     {mode, base_lr, momentum, weight_decay, warmup_epochs, decay_every_epochs, decay_factor}
    transport {backend: inprocess|tcp, endpoints: ["host:port", ...] | null, timeout_s}
    delays    {io_delay_ms, global_link_delay_ms}
    verify    {algorithms: [...], tolerance}        (read by ``verify`` only)

Unknown keys are rejected. Exactly one of ``epochs``/``iterations`` should be
set; when both are, ``iterations`` wins.
"""

from __future__ import annotations

import copy
import hashlib
import json
from typing import Any, Dict, List, Tuple

from .data import DataError
from .executors import ALGORITHMS, ConfigError, DataSpec, TrainConfig
from .numerics import MlpModel
from .optimizer import HyperParams
from .transport import parse_address

REQUIRED = object()

DEFAULTS: Dict[str, Any] = {
    "algorithm": "sequential",
    "n_workers": 1,
    "n_groups": 1,
    "local_batch": 64,
    "epochs": None,
    "iterations": None,
    "seed": 0,
    "sampling": "partition",
    "model": {"layer_sizes": REQUIRED, "activation": "relu", "init_scale": 0.1},
    "data": {
        "source": "synthetic",
        "n_samples": 5000,
        "n_features": 32,
        "n_classes": 10,
        "spread": 3.0,
        "path": None,
        "seed": None,
    },
    "optim": {
        "mode": "plain",
        "base_lr": 0.1,
        "momentum": 0.9,
        "weight_decay": 0.0001,
        "warmup_epochs": 5.0,
        "decay_every_epochs": 30,
        "decay_factor": 0.1,
    },
    "transport": {"backend": "inprocess", "endpoints": None, "timeout_s": 30.0},
    "delays": {"io_delay_ms": 0.0, "global_link_delay_ms": 0.0},
    "verify": {"algorithms": ["sequential", "csgd", "lsgd"], "tolerance": 1e-8},
}

_INT = "int"
_NUM = "number"
_STR = "str"
_TYPES = {
    "algorithm": (_STR, ALGORITHMS),
    "n_workers": (_INT, None),
    "n_groups": (_INT, None),
    "local_batch": (_INT, None),
    "epochs": (_NUM, None),
    "iterations": (_INT, None),
    "seed": (_INT, None),
    "sampling": (_STR, ("partition", "independent")),
    "model.layer_sizes": ("int_list", None),
    "model.activation": (_STR, ("relu",)),
    "model.init_scale": (_NUM, None),
    "data.source": (_STR, ("synthetic", "csv")),
    "data.n_samples": (_INT, None),
    "data.n_features": (_INT, None),
    "data.n_classes": (_INT, None),
    "data.spread": (_NUM, None),
    "data.path": (_STR, None),
    "data.seed": (_INT, None),
    "optim.mode": (_STR, ("plain", "momentum")),
    "optim.base_lr": (_NUM, None),
    "optim.momentum": (_NUM, None),
    "optim.weight_decay": (_NUM, None),
    "optim.warmup_epochs": (_NUM, None),
    "optim.decay_every_epochs": (_INT, None),
    "optim.decay_factor": (_NUM, None),
    "transport.backend": (_STR, ("inprocess", "tcp")),
    "transport.endpoints": ("str_list", None),
    "transport.timeout_s": (_NUM, None),
    "delays.io_delay_ms": (_NUM, None),
    "delays.global_link_delay_ms": (_NUM, None),
    "verify.algorithms": ("algo_list", None),
    "verify.tolerance": (_NUM, None),
}


class ConfigKeyError(ConfigError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _check_type(path: str, value: Any):
    kind, choices = _TYPES[path]
    if value is None:
        if DEFAULTS_FLAT.get(path, REQUIRED) is None:
            return
        raise ConfigKeyError(path, "must not be null")
    is_int = isinstance(value, int) and not isinstance(value, bool)
    if kind == _INT and not is_int:
        raise ConfigKeyError(path, f"expected an integer, got {value!r}")
    if kind == _NUM and not (is_int or isinstance(value, float)):
        raise ConfigKeyError(path, f"expected a number, got {value!r}")
    if kind == _STR and not isinstance(value, str):
        raise ConfigKeyError(path, f"expected a string, got {value!r}")
    if kind == "int_list" and not (
        isinstance(value, list) and value and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ConfigKeyError(path, f"expected a nonempty list of integers, got {value!r}")
    if kind == "str_list" and not (isinstance(value, list) and all(isinstance(v, str) for v in value)):
        raise ConfigKeyError(path, f"expected a list of \"host:port\" strings, got {value!r}")
    if kind == "algo_list" and not (
        isinstance(value, list) and len(value) >= 2 and all(v in ALGORITHMS for v in value)
    ):
        raise ConfigKeyError(path, f"expected two or more of {list(ALGORITHMS)}, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigKeyError(path, f"must be one of {list(choices)}, got {value!r}")


def _flatten(tree: Dict, prefix: str = "") -> Dict[str, Any]:
    out = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, path + "."))
        else:
            out[path] = value
    return out


DEFAULTS_FLAT = _flatten(DEFAULTS)


def _merge(defaults: Dict, doc: Any, prefix: str = "") -> Dict:
    if not isinstance(doc, dict):
        raise ConfigKeyError(prefix.rstrip(".") or "<root>", "expected a JSON object")
    out = {}
    for key in doc:
        if key not in defaults:
            raise ConfigKeyError(f"{prefix}{key}", "unknown key")
    for key, default in defaults.items():
        path = f"{prefix}{key}"
        if isinstance(default, dict):
            out[key] = _merge(default, doc.get(key, {}), path + ".")
            continue
        if key not in doc:
            if default is REQUIRED:
                raise ConfigKeyError(path, "required key is missing")
            out[key] = copy.deepcopy(default)
            continue
        _check_type(path, doc[key])
        out[key] = doc[key]
    return out


def resolve(doc: Any) -> Dict:
    """Validate a raw JSON document and fill in defaults."""
    return _merge(DEFAULTS, doc)


def load(path) -> Dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigKeyError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigKeyError("<file>", f"invalid JSON: {exc}") from None
    return resolve(doc)


def _field(path: str, build):
    try:
        return build()
    except ConfigKeyError:
        raise
    except (ValueError, DataError) as exc:
        raise ConfigKeyError(path, str(exc)) from None


def to_train_config(cfg: Dict, **overrides) -> TrainConfig:
    """Build a ``TrainConfig`` from a resolved document; ``overrides`` replace top-level fields."""
    cfg = {**cfg, **overrides}
    if cfg["iterations"] is None and cfg["epochs"] is None:
        raise ConfigKeyError("iterations", "set iterations or epochs")
    m, d, o, t, dl = cfg["model"], cfg["data"], cfg["optim"], cfg["transport"], cfg["delays"]
    model = _field("model.layer_sizes", lambda: MlpModel(tuple(m["layer_sizes"]), m["activation"]))
    if m["init_scale"] < 0:
        raise ConfigKeyError("model.init_scale", "must be >= 0")
    hp = _field("optim", lambda: HyperParams(
        base_lr=float(o["base_lr"]), momentum=float(o["momentum"]),
        weight_decay=float(o["weight_decay"]), warmup_epochs=float(o["warmup_epochs"]),
        decay_every_epochs=int(o["decay_every_epochs"]), decay_factor=float(o["decay_factor"]),
        mode=o["mode"]))
    data = DataSpec(source=d["source"], n_samples=d["n_samples"], n_features=d["n_features"],
                    n_classes=d["n_classes"], spread=float(d["spread"]), path=d["path"], seed=d["seed"])
    if d["source"] == "csv" and not d["path"]:
        raise ConfigKeyError("data.path", "required when data.source is csv")
    if d["source"] == "synthetic":
        if d["n_classes"] < 2:
            raise ConfigKeyError("data.n_classes", "must be >= 2")
        if d["n_samples"] < d["n_classes"]:
            raise ConfigKeyError("data.n_samples", "must be >= data.n_classes")
        if d["n_features"] < 1:
            raise ConfigKeyError("data.n_features", "must be >= 1")
        if not d["spread"] > 0:
            raise ConfigKeyError("data.spread", "must be > 0")
    endpoints = None
    if t["endpoints"]:
        endpoints = tuple(_field("transport.endpoints", lambda e=e: parse_address(e)) for e in t["endpoints"])
    for key in ("io_delay_ms", "global_link_delay_ms"):
        if dl[key] < 0:
            raise ConfigKeyError(f"delays.{key}", "must be >= 0")
    if t["timeout_s"] <= 0:
        raise ConfigKeyError("transport.timeout_s", "must be > 0")
    for key in ("n_workers", "n_groups", "local_batch"):
        if cfg[key] < 1:
            raise ConfigKeyError(key, "must be >= 1")
    if cfg["algorithm"] == "lsgd" and cfg["n_workers"] % cfg["n_groups"]:
        raise ConfigKeyError("n_groups", f"must divide n_workers={cfg['n_workers']}")
    if cfg["algorithm"] == "sequential" and cfg["n_workers"] != 1:
        raise ConfigKeyError("n_workers", "sequential runs use exactly one worker")
    return _field("<config>", lambda: TrainConfig(
        algorithm=cfg["algorithm"],
        n_workers=cfg["n_workers"],
        n_groups=cfg["n_groups"] if cfg["algorithm"] == "lsgd" else 1,
        local_batch=cfg["local_batch"],
        iterations=cfg["iterations"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        model=model,
        init_scale=float(m["init_scale"]),
        data=data,
        hp=hp,
        sampling=cfg["sampling"],
        backend=t["backend"],
        endpoints=endpoints,
        timeout_s=float(t["timeout_s"]),
        io_delay=dl["io_delay_ms"] / 1000.0,
        global_link_delay=dl["global_link_delay_ms"] / 1000.0,
    ))


def verify_configs(cfg: Dict) -> Tuple[List[TrainConfig], float]:
    """The run list for ``verify``: every listed algorithm at one global batch.

    The sequential run takes the whole global batch on one worker; csgd and
    lsgd use ``n_workers`` (and ``n_groups`` for lsgd) from the document.
    """
    tol = cfg["verify"]["tolerance"]
    if tol < 0:
        raise ConfigKeyError("verify.tolerance", "must be >= 0")
    if cfg["optim"]["mode"] != "plain":
        raise ConfigKeyError("optim.mode", "equivalence is verified in plain mode")
    global_batch = cfg["local_batch"] * cfg["n_workers"]
    runs = []
    for algo in cfg["verify"]["algorithms"]:
        if algo == "sequential":
            runs.append(to_train_config(cfg, algorithm=algo, n_workers=1, n_groups=1,
                                        local_batch=global_batch))
        else:
            runs.append(to_train_config(cfg, algorithm=algo))
    return runs, float(tol)


def run_id(cfg: Dict) -> str:
    """Config hash plus seed, both hex; identical configs get identical ids."""
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return f"{hashlib.sha256(canonical.encode()).hexdigest()[:12]}-{cfg['seed']:x}"
