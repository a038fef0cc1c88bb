"""PCK@a evaluation and table-style reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PreconditionError

DEFAULT_THRESHOLDS = (10.0, 20.0, 30.0, 40.0, 50.0)
REPORT_COLUMNS = ("task", "method", "pck@50", "pck@40", "pck@30", "pck@20", "pck@10")
# COCO keypoint order
RIGHT_SHOULDER = 6
LEFT_HIP = 11


@dataclass(frozen=True)
class PckConfig:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    ref_joint_a: int = RIGHT_SHOULDER
    ref_joint_b: int = LEFT_HIP

    def __post_init__(self):
        if not self.thresholds or any(t <= 0 for t in self.thresholds):
            raise PreconditionError("PCK thresholds must be positive")
        if self.ref_joint_a == self.ref_joint_b:
            raise PreconditionError("torso reference joints must differ")


@dataclass
class PckReport:
    thresholds: tuple[float, ...]
    correct: np.ndarray  # (thresholds, joints) counts
    frames: int
    excluded_frames: int = 0
    fractions: dict[float, float] = field(init=False)

    def __post_init__(self):
        self.correct = np.asarray(self.correct, dtype=np.int64)
        denom = self.frames * self.correct.shape[1]
        self.fractions = {
            float(t): (float(self.correct[i].sum()) / denom if denom else float("nan"))
            for i, t in enumerate(self.thresholds)
        }

    @property
    def joint_count(self) -> int:
        return self.correct.shape[1]

    def per_joint(self, threshold: float) -> np.ndarray:
        i = list(self.thresholds).index(threshold)
        return self.correct[i] / max(self.frames, 1)

    def __getitem__(self, threshold: float) -> float:
        return self.fractions[float(threshold)]

    def merge(self, other: "PckReport") -> "PckReport":
        if tuple(self.thresholds) != tuple(other.thresholds):
            raise PreconditionError("cannot merge reports with different thresholds")
        return PckReport(self.thresholds, self.correct + other.correct, self.frames + other.frames,
                         self.excluded_frames + other.excluded_frames)

    def as_dict(self):
        return {
            "frames": self.frames,
            "excluded_frames": self.excluded_frames,
            "pck": {f"pck@{t:g}": v for t, v in self.fractions.items()},
            "per_joint": {f"pck@{t:g}": (self.correct[i] / max(self.frames, 1)).tolist()
                          for i, t in enumerate(self.thresholds)},
        }


def pck(pred, gt, config: PckConfig = PckConfig()) -> PckReport:
    """Fraction of joints within a% of the ground-truth torso length."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[2] != 2:
        raise DimensionError(f"pck expects matching N×J×2 arrays, got {pred.shape} and {gt.shape}")
    n, j, _ = pred.shape
    if max(config.ref_joint_a, config.ref_joint_b) >= j:
        raise PreconditionError(f"reference joints {config.ref_joint_a}/{config.ref_joint_b} exceed joint count {j}")
    torso = np.linalg.norm(gt[:, config.ref_joint_a] - gt[:, config.ref_joint_b], axis=1)
    keep = torso > 0
    err = np.linalg.norm(pred - gt, axis=2)[keep] / torso[keep, None]
    thr = np.asarray(config.thresholds, dtype=np.float64) / 100.0
    correct = (err[None, :, :] <= thr[:, None, None]).sum(axis=1)
    return PckReport(tuple(config.thresholds), correct, int(keep.sum()), int((~keep).sum()))


def evaluate_dataset(params, dataset, config: PckConfig = PckConfig(), batch_size: int = 64) -> PckReport:
    """PCK of a model (PoseNetParams, or any callable x -> poses) on a fully labeled dataset."""
    from .model import predict

    if not dataset.fully_labeled:
        raise PreconditionError("evaluate_dataset needs every sample labeled")
    if callable(params):
        pred = np.asarray(params(dataset.csi), dtype=np.float64)
    else:
        pred = predict(params, dataset.csi, batch_size=batch_size)
    return pck(pred, dataset.poses, config)


# --- reports ---------------------------------------------------------------

def report_row(task: str, method: str, report: PckReport | dict) -> dict:
    """One table row, PCK values in percent."""
    fr = report.fractions if isinstance(report, PckReport) else report
    row = {"task": task, "method": method}
    for col in REPORT_COLUMNS[2:]:
        row[col] = 100.0 * float(fr[float(col.split("@")[1])])
    return row


def rows_to_csv(rows, columns=REPORT_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def rows_from_csv(text: str) -> list[dict]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append({k: (v if k in ("task", "method") else int(v) if k == "seed" else float(v))
                     for k, v in row.items()})
    return rows


def rows_to_json(rows, columns=REPORT_COLUMNS) -> str:
    keep = [{k: r[k] for k in columns if k in r} for r in rows]
    return json.dumps({"columns": list(columns), "rows": keep}, indent=2, sort_keys=True)
