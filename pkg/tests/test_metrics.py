import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adapose.errors import DimensionError, PreconditionError
from adapose.metrics import (
    REPORT_COLUMNS,
    PckConfig,
    evaluate_dataset,
    pck,
    report_row,
    rows_from_csv,
    rows_to_csv,
    rows_to_json,
)
from adapose.synthcsi import DomainDataset


def random_poses(rng, n):
    return rng.uniform(0, 500, size=(n, 17, 2))


def scalar_pck(pred, gt, thresholds):
    """Loop oracle: per frame torso from gt joints 6 and 11, count joints within a%."""
    counts = {t: 0 for t in thresholds}
    frames = 0
    for f in range(len(gt)):
        dx = gt[f][6][0] - gt[f][11][0]
        dy = gt[f][6][1] - gt[f][11][1]
        torso = (dx * dx + dy * dy) ** 0.5
        if torso <= 0:
            continue
        frames += 1
        for j in range(17):
            ex = pred[f][j][0] - gt[f][j][0]
            ey = pred[f][j][1] - gt[f][j][1]
            d = (ex * ex + ey * ey) ** 0.5 / torso
            for t in thresholds:
                if d <= t / 100:
                    counts[t] += 1
    return {t: counts[t] / (17 * frames) for t in thresholds}


def test_identity_is_perfect():
    gt = random_poses(np.random.default_rng(0), 5)
    rep = pck(gt, gt)
    assert all(v == 1.0 for v in rep.fractions.values())


def test_hand_built_frame():
    gt = np.zeros((1, 17, 2))
    gt[0, 11] = (0.0, 100.0)  # torso length 100
    pred = gt.copy()
    pred[0, 3] += (15.0, 20.0)  # displaced by 25
    rep = pck(pred, gt)
    assert rep[20] == 16 / 17
    assert rep[30] == 1.0


def test_monotone_in_threshold():
    rng = np.random.default_rng(1)
    gt = random_poses(rng, 20)
    pred = gt + rng.normal(scale=40, size=gt.shape)
    rep = pck(pred, gt)
    vals = [rep[t] for t in (10, 20, 30, 40, 50)]
    assert vals == sorted(vals)
    assert all(0 <= v <= 1 for v in vals)


def test_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    gt = random_poses(rng, 8)
    pred = gt + rng.normal(scale=60, size=gt.shape)
    rep = pck(pred, gt)
    oracle = scalar_pck(pred.tolist(), gt.tolist(), (10, 20, 30, 40, 50))
    for t, v in oracle.items():
        assert rep[t] == v
        assert rep.correct[[10, 20, 30, 40, 50].index(t)].sum() == round(v * 17 * 8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.1, 20.0))
def test_translation_and_scale_invariance(seed, tx, ty, s):
    rng = np.random.default_rng(seed)
    gt = random_poses(rng, 4)
    pred = gt + rng.normal(scale=50, size=gt.shape)
    base = pck(pred, gt)
    shift = np.array([tx, ty])
    moved = pck(pred + shift, gt + shift)
    scaled = pck(pred * s, gt * s)
    # exact indicator equality can flip for a joint sitting on a threshold; allow one joint
    for t in base.thresholds:
        assert abs(moved[t] - base[t]) <= 1 / 68 + 1e-12
        assert abs(scaled[t] - base[t]) <= 1 / 68 + 1e-12


def test_infinite_threshold():
    rng = np.random.default_rng(3)
    gt = random_poses(rng, 6)
    pred = rng.uniform(-1e6, 1e6, size=gt.shape)
    assert pck(pred, gt, PckConfig(thresholds=(1e9,)))[1e9] == 1.0


def test_zero_torso_excluded():
    rng = np.random.default_rng(4)
    gt = random_poses(rng, 3)
    gt[1, 11] = gt[1, 6]
    rep = pck(gt, gt)
    assert rep.frames == 2 and rep.excluded_frames == 1
    assert rep[50] == 1.0


def test_fraction_is_exact_count_ratio():
    rng = np.random.default_rng(5)
    gt = random_poses(rng, 7)
    pred = gt + rng.normal(scale=30, size=gt.shape)
    rep = pck(pred, gt)
    for i, t in enumerate(rep.thresholds):
        assert rep.fractions[t] == rep.correct[i].sum() / (17 * 7)
    assert rep.per_joint(50.0).shape == (17,)


def test_merge_is_additive():
    rng = np.random.default_rng(6)
    gt = random_poses(rng, 10)
    pred = gt + rng.normal(scale=50, size=gt.shape)
    whole = pck(pred, gt)
    halves = pck(pred[:4], gt[:4]).merge(pck(pred[4:], gt[4:]))
    assert halves.frames == whole.frames
    np.testing.assert_array_equal(halves.correct, whole.correct)
    assert halves.fractions == whole.fractions


def test_errors():
    with pytest.raises(DimensionError):
        pck(np.zeros((2, 17, 2)), np.zeros((3, 17, 2)))
    with pytest.raises(PreconditionError):
        PckConfig(thresholds=(0.0,))
    with pytest.raises(PreconditionError):
        PckConfig(ref_joint_a=3, ref_joint_b=3)
    with pytest.raises(PreconditionError):
        pck(np.ones((1, 5, 2)), np.ones((1, 5, 2)))


def _dataset(rng, n, labeled=None):
    csi = rng.normal(size=(n, 3, 4, 8))
    poses = random_poses(rng, n)
    mask = np.ones(n, bool) if labeled is None else labeled
    return DomainDataset(csi, poses, mask)


def test_evaluate_dataset_gt_echo_and_additivity():
    rng = np.random.default_rng(7)
    ds = _dataset(rng, 12)
    lookup = {ds.csi[i].tobytes(): ds.poses[i] for i in range(len(ds))}

    def echo(csi):
        return np.stack([lookup[w.tobytes()] for w in csi])

    assert evaluate_dataset(echo, ds)[10] == 1.0

    def noisy(csi):
        return echo(csi) + np.random.default_rng(0).normal(scale=40, size=(len(csi), 17, 2))

    whole = evaluate_dataset(noisy, ds)
    assert whole.fractions == evaluate_dataset(noisy, ds).fractions
    mask = np.zeros(12, bool)
    mask[:3] = True
    with pytest.raises(PreconditionError):
        evaluate_dataset(echo, DomainDataset(ds.csi, ds.poses, mask))


def test_report_csv_json_roundtrip():
    rng = np.random.default_rng(8)
    gt = random_poses(rng, 5)
    rep = pck(gt + rng.normal(scale=30, size=gt.shape), gt)
    rows = [report_row("A2B", "source_only", rep), report_row("A2B", "adapose", rep)]
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == ",".join(REPORT_COLUMNS)
    back = rows_from_csv(text)
    assert back == rows
    doc = json.loads(rows_to_json(rows))
    assert doc["columns"] == list(REPORT_COLUMNS)
    assert doc["rows"] == rows
    assert rows[0]["pck@50"] == 100 * rep[50]
