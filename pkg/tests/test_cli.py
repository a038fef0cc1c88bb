import csv
import io
import json

import numpy as np
import pytest

from adapose import cli
from adapose.config import load_spec, parse_spec
from adapose.errors import ConfigurationError
from adapose.metrics import REPORT_COLUMNS
from adapose.model import PRESETS, init_params, read_records, save_params
from adapose.synthcsi import DomainDataset, read_dataset, write_dataset

SCENE = {"n_subcarriers": 12, "subcarrier_stride": 8, "window_len": 16}


def make_spec(tmp_path, **train):
    doc = {
        "scene_a": {"rotation_deg": 0, "seed": 1, **SCENE},
        "scene_b": {"rotation_deg": 90, "seed": 2, **SCENE},
        "motions": {"a": {"subjects": 1, "duration": 96, "seed": 1},
                    "b": {"subjects": 1, "duration": 96, "seed": 2}},
        "model": "tiny",
        "train": {"epochs": 2, "milestones": [1], "batch_size": 8, "seeds": [0], "label_fraction": 0.1,
                  "eval_every": 0, "pretrain_epochs": 0, **train},
        "output": {"data_dir": str(tmp_path / "data"), "run_dir": str(tmp_path / "runs"),
                   "report_dir": str(tmp_path / "reports")},
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(doc))
    return path, doc


@pytest.fixture
def spec(tmp_path):
    path, _ = make_spec(tmp_path)
    assert cli.main(["gen", str(path)]) == 0
    return path


def test_gen_is_deterministic(tmp_path, spec):
    data = tmp_path / "data"
    first = {p.name: p.read_bytes() for p in data.iterdir()}
    assert cli.main(["gen", str(spec), "--out", str(tmp_path / "again")]) == 0
    for name, blob in first.items():
        assert (tmp_path / "again" / name).read_bytes() == blob
    manifest = json.loads((data / "manifest.json").read_text())
    # 96 frames / 16 per window = 6 windows per motion, 9 motions per subject
    assert manifest["domains"]["A"]["windows"] == 54
    assert manifest["domains"]["A"]["window_shape"] == [3, 12, 16]
    assert len(read_dataset(data / "scene_b.csid")) == 54


def test_data_hash_tracks_scene_fields(tmp_path):
    _, doc = make_spec(tmp_path)
    base = parse_spec(doc).data_hash()
    for section, key, value in (("scene_a", "seed", 5), ("scene_b", "rotation_deg", 45), ("scene_a", "noise_std", 0.0)):
        changed = json.loads(json.dumps(doc))
        changed[section][key] = value
        assert parse_spec(changed).data_hash() != base
    changed = json.loads(json.dumps(doc))
    changed["train"]["epochs"] = 7
    assert parse_spec(changed).data_hash() == base


def test_spec_errors_are_path_qualified(tmp_path):
    _, doc = make_spec(tmp_path)
    doc["train"]["epochz"] = 3
    with pytest.raises(ConfigurationError, match="train.epochz"):
        parse_spec(doc)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError, match="line 1"):
        load_spec(bad)
    assert cli.main(["gen", str(bad)]) == 1
    assert cli.main(["train", str(tmp_path / "absent.json")]) == 1


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "x.json", "--task", "C2D"])
    assert exc.value.code == 1


def test_unwritable_output(tmp_path):
    path, _ = make_spec(tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["gen", str(path), "--out", str(blocker / "sub")]) == 1


def test_train_missing_data_exits_2(tmp_path):
    path, _ = make_spec(tmp_path)
    assert cli.main(["train", str(path)]) == 2
    assert cli.main(["gen", str(path)]) == 0
    (tmp_path / "data" / "scene_b.csid").unlink()
    assert cli.main(["train", str(path)]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_nonfinite_exits_3(tmp_path):
    path, _ = make_spec(tmp_path, base_lr=1e12)
    assert cli.main(["gen", str(path)]) == 0
    assert cli.main(["train", str(path), "--method", "source_only"]) == 3


def test_train_outputs_and_determinism(tmp_path, spec):
    runs = tmp_path / "runs"
    assert cli.main(["train", str(spec), "--method", "source_only"]) == 0
    ck = runs / "A2B_source_only_lf0p1_s0.apck"
    first = ck.read_bytes()
    entries = [json.loads(line) for line in ck.with_suffix(".jsonl").read_text().splitlines()]
    assert len(entries) == 2 and entries[-1]["pck"] is not None
    assert cli.main(["train", str(spec), "--method", "source_only"]) == 0
    assert ck.read_bytes() == first
    assert read_records(ck)["meta.epoch"][0] == 2


def test_label_fraction_zero_is_unsupervised(tmp_path, spec):
    assert cli.main(["train", str(spec), "--method", "adapose", "--label-fraction", "0", "--task", "B2A"]) == 0
    entries = [json.loads(line) for line in (tmp_path / "runs" / "B2A_adapose_lf0_s0.jsonl").read_text().splitlines()]
    assert all(e["mode"] == "unsupervised" and e["reg_target_labeled"] is None for e in entries)
    assert entries[0]["d_feature"] is not None


def test_resume_matches_uninterrupted(tmp_path):
    spec, _ = make_spec(tmp_path, epochs=3)
    assert cli.main(["gen", str(spec)]) == 0
    full = tmp_path / "full.apck"
    half = tmp_path / "half.apck"
    resumed = tmp_path / "resumed.apck"
    assert cli.main(["train", str(spec), "--checkpoint", str(full)]) == 0
    assert cli.main(["train", str(spec), "--checkpoint", str(half), "--epochs", "2", "--seed", "0"]) == 0
    assert cli.main(["train", str(spec), "--checkpoint", str(resumed), "--resume", str(half)]) == 0
    assert full.read_bytes() == resumed.read_bytes()


def echo_fixture(tmp_path):
    pose = np.random.default_rng(0).uniform(100, 400, size=(17, 2)).astype(np.float32)
    n = 6
    csi = np.abs(np.random.default_rng(1).normal(size=(n, 3, 12, 16)))
    ds = DomainDataset(csi, np.broadcast_to(pose, (n, 17, 2)), np.ones(n, bool))
    write_dataset(tmp_path / "echo.csid", ds)
    params = init_params(PRESETS["tiny"], seed=0, dtype=np.float32)
    for t in params.trainable().values():
        t.data[...] = 0
    params["head.b"].data[...] = pose.reshape(-1)
    save_params(tmp_path / "echo.apck", params)
    return tmp_path / "echo.apck", tmp_path / "echo.csid"


def test_eval_gt_echo_and_formats(tmp_path):
    ck, ds = echo_fixture(tmp_path)
    assert cli.main(["eval", str(ck), str(ds), "--out", str(tmp_path / "rep")]) == 0
    text = (tmp_path / "rep.csv").read_text()
    assert text.splitlines()[0] == "task,method,pck@50,pck@40,pck@30,pck@20,pck@10"
    row = next(csv.DictReader(io.StringIO(text)))
    doc = json.loads((tmp_path / "rep.json").read_text())
    assert doc["columns"] == list(REPORT_COLUMNS)
    for col in REPORT_COLUMNS[2:]:
        assert float(row[col]) == 100.0 == doc["rows"][0][col]
    assert doc["detail"]["frames"] == 6
    assert cli.main(["eval", str(ck), str(ds), "--out", str(tmp_path / "only.json")]) == 0
    assert not (tmp_path / "only.csv").exists()


def test_eval_mismatch_exits_2(tmp_path):
    ck, _ = echo_fixture(tmp_path)
    other = DomainDataset(np.zeros((2, 3, 8, 16)), np.ones((2, 17, 2)), np.ones(2, bool))
    write_dataset(tmp_path / "other.csid", other)
    assert cli.main(["eval", str(ck), str(tmp_path / "other.csid"), "--out", str(tmp_path / "r.csv")]) == 2
    assert cli.main(["eval", str(tmp_path / "nope.apck"), str(tmp_path / "other.csid"), "--out", "r.csv"]) == 2
    (tmp_path / "junk.apck").write_bytes(b"garbage")
    assert cli.main(["eval", str(tmp_path / "junk.apck"), str(tmp_path / "other.csid"), "--out", "r.csv"]) == 2
    assert not (tmp_path / "r.csv").exists()


def test_matrix_rows_and_averages(tmp_path):
    path, _ = make_spec(tmp_path, epochs=1, milestones=[], seeds=[0, 1, 2])
    assert cli.main(["gen", str(path)]) == 0
    assert cli.main(["matrix", str(path)]) == 0
    reports = tmp_path / "reports"
    averaged = list(csv.DictReader(io.StringIO((reports / "matrix.csv").read_text())))
    raw = list(csv.DictReader(io.StringIO((reports / "matrix_raw.csv").read_text())))
    assert len(averaged) == 4 and len(raw) == 12
    for row in averaged:
        vals = [float(r["pck@50"]) for r in raw if (r["task"], r["method"]) == (row["task"], row["method"])]
        assert len(vals) == 3
        assert abs(float(row["pck@50"]) - np.mean(vals)) <= 1e-12
    doc = json.loads((reports / "matrix.json").read_text())
    assert set(doc["ordering"]) == {"A2B", "B2A"}
    assert len(list((reports / "logs").glob("*.jsonl"))) == 12
