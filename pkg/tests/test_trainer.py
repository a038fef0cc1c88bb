import json

import numpy as np
import pytest

from adapose.diffcore import DiffTensor
from adapose.errors import ConfigurationError, NumericError, PreconditionError
from adapose.losses import ConsistencyConfig
from adapose.model import PRESETS
from adapose.synthcsi import default_scene, generate_domain, mask_labels, standard_motions
from adapose.trainer import (
    MatrixCell,
    OptimizerState,
    Schedule,
    TrainConfig,
    average_rows,
    load_state,
    log_to_jsonl,
    lr_at,
    run_experiment_matrix,
    save_state,
    sgdm_step,
    train,
    worker_count,
)

TINY = PRESETS["tiny"]


@pytest.fixture(scope="module")
def domains():
    motions = standard_motions(1, duration=192, frame_rate=200.0, seed=1)
    kw = dict(window_len=16, n_subcarriers=12, subcarrier_stride=8)
    src = generate_domain(default_scene(0.0, seed=1), motions, **kw)
    tgt = generate_domain(default_scene(np.pi / 2, seed=2), motions, **kw)
    return src, tgt


def cfg(**kw):
    base = dict(scale=TINY, batch_size=8, schedule=Schedule((2,), 0.5, 4), eval_every=0,
                consistency=ConsistencyConfig(r1=0.5, r2=0.5))
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule():
    assert lr_at(0) == 0.001
    assert lr_at(19) == 0.001
    assert lr_at(20) == 0.0005
    assert lr_at(30) == 0.00025
    assert lr_at(40) == 0.000125
    with pytest.raises(PreconditionError):
        lr_at(50)
    with pytest.raises(ConfigurationError):
        Schedule((30, 20), 0.5, 50)


def test_sgdm_examples():
    p = {"w": DiffTensor(np.array([1.0]))}
    st = OptimizerState.zeros_like(p, momentum=0.0)
    sgdm_step(p, {"w": np.array([2.0])}, st, lr=0.1)
    assert abs(p["w"].data[0] - 0.8) < 1e-15

    p = {"w": DiffTensor(np.array([0.0]))}
    st = OptimizerState.zeros_like(p, momentum=0.9)
    sgdm_step(p, {"w": np.array([1.0])}, st, lr=1.0)
    assert st.velocities["w"][0] == 1.0 and p["w"].data[0] == -1.0
    sgdm_step(p, {"w": np.array([1.0])}, st, lr=1.0)
    assert abs(st.velocities["w"][0] - 1.9) < 1e-15 and abs(p["w"].data[0] + 2.9) < 1e-15
    sgdm_step(p, {"w": np.array([0.0])}, st, lr=1.0)
    assert abs(p["w"].data[0] + 2.9 + 1.71) < 1e-12

    with pytest.raises(NumericError, match="'w'"):
        sgdm_step(p, {"w": np.array([np.nan])}, st, lr=1.0)


def test_source_only_mode_matches_zero_weight_baseline(domains):
    src, tgt = domains
    a = train(cfg(mode="source_only", method="source_only"), src, mask_labels(tgt, 0.0, 0), stop_epoch=2)
    b = train(cfg(mode="unsupervised", method="adapose", consistency=ConsistencyConfig(alpha=0.0, beta=0.0)),
              src, mask_labels(tgt, 0.0, 0), stop_epoch=2)
    for name, t in a.params.trainable().items():
        np.testing.assert_array_equal(t.data, b.params[name].data)
    assert all(e["reg_target_labeled"] is None for e in a.log)


def test_mode_label_mismatch(domains):
    src, tgt = domains
    with pytest.raises(ConfigurationError):
        train(cfg(mode="unsupervised"), src, tgt)
    with pytest.raises(ConfigurationError):
        train(cfg(mode="weakly_supervised"), src, mask_labels(tgt, 0.0, 0))
    with pytest.raises(ConfigurationError):
        TrainConfig(mode="semi")


@pytest.fixture(scope="module")
def desk_source():
    motions = standard_motions(3, duration=1280, frame_rate=200.0, seed=1)
    return generate_domain(default_scene(0.0, seed=1), motions, n_subcarriers=30, subcarrier_stride=4)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_source_loss_decreases(desk_source, seed):
    config = TrainConfig(mode="source_only", method="source_only", scale=PRESETS["desk"], seed=seed,
                         data_seed=seed, schedule=Schedule((), 0.5, 5), eval_every=0)
    state = train(config, desk_source, mask_labels(desk_source, 0.0, 0))
    losses = [e["reg_source"] for e in state.log]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:])), losses
    assert all(np.isfinite(v).all() for v in state.optimizer.velocities.values())


def test_resume_is_bit_identical(domains, tmp_path):
    src, tgt = domains
    target = mask_labels(tgt, 0.1, 0)
    config = cfg(pretrain_epochs=1)
    full = train(config, src, target)
    half = train(config, src, target, stop_epoch=2)
    path = tmp_path / "ck.apck"
    save_state(path, half)
    resumed = load_state(path, config)
    assert resumed.epoch == 2
    resumed = train(config, src, target, state=resumed)
    for name, t in full.params.trainable().items():
        np.testing.assert_array_equal(t.data, resumed.params[name].data)


def test_log_contents(domains):
    src, tgt = domains
    state = train(cfg(eval_every=2, pretrain_epochs=1), src, mask_labels(tgt, 0.1, 0), eval_set=tgt)
    assert [e["epoch"] for e in state.log] == [0, 1, 2, 3]
    assert [e["lr"] for e in state.log] == [0.001, 0.001, 0.0005, 0.0005]
    assert state.log[0]["pck"] is None and state.log[1]["pck"] is not None
    for e in state.log:
        assert e["reg_target_labeled"] is not None
        on = float(e["epoch"] >= 1)
        assert (e["d_input"] > 0) == bool(on)
        assert e["adapt"] == bool(on)
        assert (e["r1"], e["r2"], e["alpha"], e["beta"], e["mmd_weight"]) == (0.5, 0.5, on, on, 0.0)
    lines = log_to_jsonl(state.log).splitlines()
    assert len(lines) == 4 and json.loads(lines[3])["epoch"] == 3


def test_ablation_weights():
    base = cfg(consistency=ConsistencyConfig(alpha=0.7, beta=1.3, mmd_weight=0.4))
    weights = {m: TrainConfig(**{**base.__dict__, "method": m}).effective_consistency()
               for m in ("adapose", "adapose_feat_only", "adapose_out_only", "mmd_feature_align", "source_only")}
    assert weights["adapose"] == (True, ConsistencyConfig(alpha=0.7, beta=1.3, mmd_weight=0.0))
    assert weights["adapose_feat_only"][1].alpha == 0.7 and weights["adapose_feat_only"][1].beta == 0.0
    assert weights["adapose_out_only"][1].alpha == 0.0 and weights["adapose_out_only"][1].beta == 1.3
    mmd = weights["mmd_feature_align"][1]
    assert (mmd.alpha, mmd.beta, mmd.mmd_weight) == (0.0, 0.0, 0.4)
    assert weights["source_only"][0] is False


def test_matrix_and_averaging(domains, monkeypatch):
    src, tgt = domains
    cells = [MatrixCell("A2B", cfg(method=m, seed=s, schedule=Schedule((), 0.5, 1)), src,
                        mask_labels(tgt, 0.1, 0), tgt)
             for m in ("source_only", "adapose") for s in (0, 1)]
    rows = run_experiment_matrix(cells, workers=1)
    assert [(r["method"], r["seed"]) for r in rows] == [("source_only", 0), ("source_only", 1),
                                                         ("adapose", 0), ("adapose", 1)]
    avg = average_rows(rows)
    assert len(avg) == 2 and avg[0]["seeds"] == 2
    assert avg[1]["pck@50"] == np.mean([rows[2]["pck@50"], rows[3]["pck@50"]])
    single = run_experiment_matrix(cells[:1])
    assert len(average_rows(single)) == 1
    monkeypatch.setenv("ADAPOSE_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("ADAPOSE_THREADS", "zero")
    assert worker_count() == 1
