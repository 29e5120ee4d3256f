import csv
import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from distsgd import cli, config
from distsgd.simulator import COST_MODEL_SCHEMA, REFERENCE_CLUSTER, CostModel

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = {
    "algorithm": "sequential",
    "iterations": 10,
    "local_batch": 16,
    "seed": 1,
    "model": {"layer_sizes": [6, 5, 3]},
    "data": {"n_samples": 400, "n_features": 6, "n_classes": 3},
}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def only_error_line(err):
    lines = [l for l in err.strip().splitlines() if l]
    assert len(lines) == 1 and lines[0].startswith("error:")
    return lines[0]


class TestTrain:
    def test_header_and_rows(self, tmp_path, capsys):
        out = tmp_path / "m.csv"
        code = cli.main(["train", write_json(tmp_path / "c.json", BASE), "--out", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert tuple(rows[0]) == cli.METRICS_COLUMNS
        assert rows[0] == ["run_id", "algorithm", "n_workers", "n_groups", "iteration", "epoch", "lr",
                           "loss", "t_io_s", "t_compute_s", "t_local_reduce_s", "t_global_allreduce_s",
                           "t_broadcast_s", "t_update_s", "iter_time_s", "throughput_sps"]
        assert len(rows) == 11
        assert [r[4] for r in rows[1:]] == [str(i) for i in range(10)]
        text = capsys.readouterr().out
        assert "final training loss" in text and "mean throughput" in text

    def test_missing_layer_sizes(self, tmp_path, capsys):
        doc = {k: v for k, v in BASE.items() if k != "model"}
        code = cli.main(["train", write_json(tmp_path / "c.json", doc), "--out", str(tmp_path / "m.csv")])
        assert code == 2
        assert "model.layer_sizes" in only_error_line(capsys.readouterr().err)

    @pytest.mark.parametrize("patch,key", [({"bogus": 1}, "bogus"),
                                           ({"optim": {"mode": "adam"}}, "optim.mode"),
                                           ({"local_batch": "64"}, "local_batch"),
                                           ({"data": {"spread": -1.0}}, "data.spread")])
    def test_invalid_config_names_key(self, tmp_path, capsys, patch, key):
        doc = {**BASE, **patch}
        if "data" in patch:
            doc["data"] = {**BASE["data"], **patch["data"]}
        code = cli.main(["train", write_json(tmp_path / "c.json", doc), "--out", str(tmp_path / "m.csv")])
        assert code == 2
        assert key in only_error_line(capsys.readouterr().err)

    def test_deterministic_loss_columns(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {**BASE, "algorithm": "lsgd", "n_workers": 4, "n_groups": 2})
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["train", cfg, "--out", str(a)]) == 0
        assert cli.main(["train", cfg, "--out", str(b)]) == 0
        ra, rb = read_csv(a), read_csv(b)
        loss = cli.METRICS_COLUMNS.index("loss")
        assert [r[loss] for r in ra] == [r[loss] for r in rb]
        assert [r[:8] for r in ra] == [r[:8] for r in rb]

    def test_run_id_is_seed_tagged_hash(self):
        doc = config.resolve(BASE)
        rid = config.run_id(doc)
        assert rid.endswith("-1") and rid == config.run_id(config.resolve(BASE))
        assert rid != config.run_id(config.resolve({**BASE, "seed": 2}))

    def test_runtime_failure_exit_1(self, tmp_path, capsys):
        # Join a two-rank world as rank 0 while rank 1 never starts.
        from distsgd.transport import free_addresses
        endpoints = [f"{h}:{p}" for h, p in free_addresses(2)]
        doc = {**BASE, "algorithm": "csgd", "n_workers": 2,
               "transport": {"backend": "tcp", "endpoints": endpoints, "timeout_s": 0.5}}
        code = cli.main(["train", write_json(tmp_path / "c.json", doc), "--rank", "0",
                         "--out", str(tmp_path / "m.csv")])
        assert code == 1
        line = only_error_line(capsys.readouterr().err)
        assert "rank 0" in line and "phase global_allreduce" in line

    def test_console_script(self, tmp_path):
        out = tmp_path / "m.csv"
        proc = subprocess.run([sys.executable, "-m", "distsgd.cli", "train",
                               write_json(tmp_path / "c.json", BASE), "--out", str(out)],
                              capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0, proc.stderr
        assert len(read_csv(out)) == 11


class TestVerify:
    def test_default_config_passes(self, capsys):
        assert cli.main(["verify", str(CONFIGS / "verify.json")]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_zero_tolerance_with_two_workers_fails(self, tmp_path, capsys):
        doc = json.load(open(str(CONFIGS / "verify.json")))
        doc.update(n_workers=2, n_groups=1, local_batch=32)
        doc["verify"]["tolerance"] = 0.0
        assert cli.main(["verify", write_json(tmp_path / "v.json", doc)]) == 1
        assert only_error_line(capsys.readouterr().err).startswith("error: verify")

    def test_single_worker_everywhere_is_exact(self, tmp_path, capsys):
        doc = json.load(open(str(CONFIGS / "verify.json")))
        doc.update(n_workers=1, n_groups=1, local_batch=64)
        doc["verify"]["tolerance"] = 0.0
        assert cli.main(["verify", write_json(tmp_path / "v.json", doc)]) == 0
        table = capsys.readouterr().out
        assert table.count("0.000e+00") >= 3

    def test_momentum_rejected(self, tmp_path, capsys):
        doc = json.load(open(str(CONFIGS / "verify.json")))
        doc["optim"]["mode"] = "momentum"
        assert cli.main(["verify", write_json(tmp_path / "v.json", doc)]) == 2
        assert "optim.mode" in only_error_line(capsys.readouterr().err)


class TestSimulate:
    def test_reference_sweep(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        assert cli.main(["simulate", str(CONFIGS / "reference_cluster.json"), "--workers", "4,8,...,256",
                         "--out", str(out)]) == 0
        rows = read_csv(out)
        assert rows[0][:5] == ["n_workers", "algorithm", "iter_time", "throughput", "efficiency_percent"]
        csgd = [(int(r[0]), float(r[4])) for r in rows[1:] if r[1] == "csgd"]
        assert [n for n, _ in csgd] == [4, 8, 16, 32, 64, 128, 256]
        tail = [e for n, e in csgd if n >= 8]
        assert all(b < a for a, b in zip(tail, tail[1:]))

    def test_zero_comm_model(self, tmp_path):
        path = write_json(tmp_path / "z.json", json.loads(CostModel(t_sample=1e-3, n_params=10).to_json()))
        out = tmp_path / "s.csv"
        assert cli.main(["simulate", path, "--out", str(out)]) == 0
        effs = [float(r[4]) for r in read_csv(out)[1:]]
        assert effs and all(e == pytest.approx(100.0, abs=1e-9) for e in effs)

    def test_round_trip_through_calibrate(self, tmp_path):
        sweep_csv, model_json = tmp_path / "s.csv", tmp_path / "m.json"
        assert cli.main(["simulate", str(CONFIGS / "reference_cluster.json"), "--out", str(sweep_csv)]) == 0
        assert cli.main(["calibrate", str(sweep_csv), "--t-io", str(REFERENCE_CLUSTER.t_io),
                         "--out", str(model_json)]) == 0
        fitted = CostModel.load(model_json)
        assert fitted.alpha == pytest.approx(REFERENCE_CLUSTER.alpha, rel=1e-2)
        assert fitted.beta == pytest.approx(REFERENCE_CLUSTER.beta, rel=1e-2)

    def test_invalid_model(self, tmp_path, capsys):
        path = write_json(tmp_path / "bad.json", {"alpha": -1})
        assert cli.main(["simulate", path, "--out", str(tmp_path / "s.csv")]) == 2
        only_error_line(capsys.readouterr().err)

    def test_bad_worker_list(self, capsys):
        assert cli.main(["simulate", str(CONFIGS / "reference_cluster.json"), "--workers", "4,...,256"]) == 2

    def test_parse_worker_list(self):
        assert cli.parse_worker_list("4,8,...,256") == [4, 8, 16, 32, 64, 128, 256]
        assert cli.parse_worker_list("3,5,...,11") == [3, 5, 7, 9, 11]
        assert cli.parse_worker_list("3, 5") == [3, 5]
        with pytest.raises(ValueError):
            cli.parse_worker_list("4,8,...,100")


class TestCalibrate:
    def test_output_validates_against_schema(self, tmp_path):
        measured = tmp_path / "m.csv"
        with open(measured, "w") as fh:
            fh.write("n_workers,train_time,allreduce_time\n")
            for n in (2, 4, 8, 16):
                a = 2 * (n - 1) * 1e-3 + 2 * (n - 1) / n * 4e6 * 1e-9
                fh.write(f"{n},{0.5 + a!r},{a!r}\n")
        out = tmp_path / "model.json"
        assert cli.main(["calibrate", str(measured), "--n-params", "1000000", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, COST_MODEL_SCHEMA)
        assert doc["alpha"] == pytest.approx(1e-3, rel=1e-6)
        assert doc["beta"] == pytest.approx(1e-9, rel=1e-6)

    def test_rank_deficient_exit_2(self, tmp_path, capsys):
        measured = tmp_path / "m.csv"
        measured.write_text("n_workers,train_time,allreduce_time\n8,1.0,0.1\n8,1.1,0.1\n")
        assert cli.main(["calibrate", str(measured), "--out", str(tmp_path / "o.json")]) == 2
        assert "calibrate" in only_error_line(capsys.readouterr().err)

    def test_missing_file_exit_2(self, tmp_path, capsys):
        assert cli.main(["calibrate", str(tmp_path / "nope.csv")]) == 2
        only_error_line(capsys.readouterr().err)

    def test_reference_model_validates(self):
        jsonschema.validate(json.load(open(str(CONFIGS / "reference_cluster.json"))), COST_MODEL_SCHEMA)


def test_usage_error_is_single_line(capsys):
    assert cli.main(["frobnicate"]) == 2
    only_error_line(capsys.readouterr().err)


@pytest.mark.parametrize("name", ["train_sequential.json", "train_lsgd.json", "train_overlap.json",
                                  "verify.json"])
def test_shipped_configs_resolve(name):
    doc = config.load(CONFIGS / name)
    if name == "verify.json":
        runs, tol = config.verify_configs(doc)
        assert [c.algorithm for c in runs] == ["sequential", "csgd", "lsgd"] and tol == 1e-8
        assert len({c.global_batch for c in runs}) == 1
    else:
        config.to_train_config(doc)
