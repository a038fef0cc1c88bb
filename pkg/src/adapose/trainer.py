"""SGDM training loop for source-only, weakly-supervised and unsupervised runs."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .diffcore import DiffTensor, Tape
from .errors import ConfigurationError, NumericError, PreconditionError
from .losses import ConsistencyConfig, KernelSpec, LossBreakdown, total_objective
from .metrics import PckConfig, evaluate_dataset, report_row
from .model import ModelScale, PoseNetParams, init_params, params_from_records, params_to_records, write_records, read_records

log = logging.getLogger(__name__)

MODES = ("source_only", "weakly_supervised", "unsupervised")
METHODS = ("source_only", "mmd_feature_align", "adapose", "adapose_feat_only", "adapose_out_only")


@dataclass(frozen=True)
class Schedule:
    milestones: tuple[int, ...] = (20, 30, 40)
    factor: float = 0.5
    total_epochs: int = 50

    def __post_init__(self):
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigurationError(f"milestones must be strictly increasing: {ms}")
        if ms and ms[-1] >= self.total_epochs:
            raise ConfigurationError("milestones must lie before total_epochs")
        if not (0 < self.factor <= 1):
            raise ConfigurationError(f"decay factor {self.factor} outside (0, 1]")


def lr_at(epoch: int, schedule: Schedule = Schedule(), base_lr: float = 0.001) -> float:
    """Multistep decay: base_lr * factor ** (#milestones <= epoch)."""
    if not (0 <= epoch < schedule.total_epochs):
        raise PreconditionError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    passed = sum(1 for m in schedule.milestones if m <= epoch)
    return base_lr * schedule.factor ** passed


@dataclass
class OptimizerState:
    velocities: dict[str, np.ndarray]
    momentum: float = 0.9
    base_lr: float = 0.001

    @classmethod
    def zeros_like(cls, params: dict[str, DiffTensor], momentum=0.9, base_lr=0.001):
        return cls({k: np.zeros(v.shape, dtype=v.dtype) for k, v in params.items()}, momentum, base_lr)


def sgdm_step(params: dict[str, DiffTensor], grads: dict[str, np.ndarray], state: OptimizerState, lr: float):
    """Heavy-ball update in place: v <- momentum*v + g; p <- p - lr*v."""
    for name, g in grads.items():
        g = np.asarray(g)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        p = params[name]
        v = state.velocities[name]
        if v.shape != p.shape or g.shape != p.shape:
            raise PreconditionError(f"shape mismatch for {name!r}: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v64 = state.momentum * v.astype(np.float64) + g.astype(np.float64)
        v[...] = v64
        p.data[...] = p.data.astype(np.float64) - lr * v.astype(np.float64)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "weakly_supervised"
    method: str = "adapose"
    batch_size: int = 16
    base_lr: float = 0.001
    momentum: float = 0.9
    schedule: Schedule = Schedule()
    consistency: ConsistencyConfig = ConsistencyConfig()
    kernel: KernelSpec = KernelSpec()
    scale: ModelScale = ModelScale()
    seed: int = 0
    data_seed: int = 0
    label_fraction: float = 0.01
    eval_every: int = 10
    # epochs of plain regression before adaptation terms switch on
    pretrain_epochs: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64")
        if self.eval_every < 0 or self.pretrain_epochs < 0:
            raise ConfigurationError("eval_every and pretrain_epochs must be nonnegative")

    def effective_consistency(self) -> tuple[bool, ConsistencyConfig]:
        """(adapt?, weights) after applying the method's toggles."""
        c = self.consistency
        if self.mode == "source_only" or self.method == "source_only":
            return False, replace(c, alpha=0.0, beta=0.0, mmd_weight=0.0)
        if self.method == "mmd_feature_align":
            return True, replace(c, alpha=0.0, beta=0.0, mmd_weight=c.mmd_weight or 1.0)
        if self.method == "adapose_feat_only":
            return True, replace(c, beta=0.0, mmd_weight=0.0)
        if self.method == "adapose_out_only":
            return True, replace(c, alpha=0.0, mmd_weight=0.0)
        return True, replace(c, mmd_weight=0.0)


@dataclass
class TrainState:
    params: PoseNetParams
    optimizer: OptimizerState
    epoch: int = 0
    log: list[dict] = field(default_factory=list)


def _check_labels(config: TrainConfig, source, target):
    if not source.fully_labeled:
        raise ConfigurationError("source dataset must be fully labeled")
    n_lab = int(target.label_mask.sum())
    if config.mode == "unsupervised" and n_lab:
        raise ConfigurationError(f"unsupervised mode got {n_lab} target labels")
    if config.mode == "weakly_supervised" and n_lab == 0:
        raise ConfigurationError("weakly_supervised mode needs at least one target label")
    if config.batch_size > len(source):
        raise ConfigurationError(f"batch_size {config.batch_size} exceeds source size {len(source)}")
    if len(target) < 2:
        raise ConfigurationError("target dataset needs at least 2 samples")
    if tuple(source.window_shape) != config.scale.input_shape or tuple(target.window_shape) != config.scale.input_shape:
        raise ConfigurationError(f"dataset windows {source.window_shape}/{target.window_shape} "
                                 f"do not match model input {config.scale.input_shape}")


def init_state(config: TrainConfig, source) -> TrainState:
    dtype = np.float32 if config.dtype == "float32" else np.float64
    params = init_params(config.scale, config.seed, dtype=dtype)
    poses = source.poses.astype(np.float64).reshape(len(source), -1)
    offset = poses.mean(axis=0)
    # sqrt(2) x per-joint RMS distance from the mean pose: predicting the mean costs ~J/2
    spread = float(np.sqrt(2.0 * ((poses - offset) ** 2).sum(axis=1).mean() / config.scale.joint_count)) or 1.0
    params.set_normalization(offset, spread)
    opt = OptimizerState.zeros_like(params.trainable(), config.momentum, config.base_lr)
    return TrainState(params, opt)


def _mean_breakdown(items: list[LossBreakdown]) -> dict:
    out = {}
    for f in fields(LossBreakdown):
        vals = [getattr(b, f.name) for b in items]
        out[f.name] = None if any(v is None for v in vals) else float(np.mean(vals))
    return out


def train(config: TrainConfig, source, target, eval_set=None, state: TrainState | None = None,
          stop_epoch: int | None = None, pck_config: PckConfig = PckConfig()) -> TrainState:
    """Run (or resume) training; returns the final state with its per-epoch log.

    Batch order for epoch ``e`` depends only on ``(data_seed, e)``, so a run
    resumed from an epoch-boundary checkpoint matches an uninterrupted one.
    """
    _check_labels(config, source, target)
    state = state or init_state(config, source)
    params = state.params
    trainable = params.trainable()
    schedule = config.schedule
    end = schedule.total_epochs if stop_epoch is None else min(stop_epoch, schedule.total_epochs)
    adapt, weights = config.effective_consistency()
    use_target_labels = config.mode == "weakly_supervised"
    b = config.batch_size
    n_s, n_t = len(source), len(target)
    labeled = target.labeled_indices
    steps = n_s // b

    for epoch in range(state.epoch, end):
        lr = lr_at(epoch, schedule, config.base_lr)
        order_s = np.random.default_rng([config.data_seed, epoch, 0]).permutation(n_s)
        order_t = np.random.default_rng([config.data_seed, epoch, 1]).permutation(n_t)
        order_l = np.random.default_rng([config.data_seed, epoch, 2]).permutation(labeled) if len(labeled) else labeled
        adapt_now = adapt and epoch >= config.pretrain_epochs
        records = []
        for step in range(steps):
            s_idx = order_s[step * b : (step + 1) * b]
            t_idx = order_t[np.arange(step * b, (step + 1) * b) % n_t]
            batch_l = None
            if use_target_labels:
                nl = min(b, len(order_l))
                l_idx = order_l[np.arange(step * nl, (step + 1) * nl) % len(order_l)]
                batch_l = (target.csi[l_idx], target.poses[l_idx])
            with Tape() as tape:
                total, bd = total_objective((source.csi[s_idx], source.poses[s_idx]), target.csi[t_idx], params,
                                            weights, config.kernel, batch_t_labeled=batch_l, adapt=adapt_now)
            if not np.isfinite(bd.total):
                tape.clear()
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
            tape.backward(total)
            tape.clear()
            sgdm_step(trainable, {k: t.grad for k, t in trainable.items()}, state.optimizer, lr)
            params.zero_grad()
            records.append(bd)

        entry = {"epoch": epoch, "lr": lr, "mode": config.mode, "method": config.method, "adapt": adapt_now}
        entry.update(_mean_breakdown(records))
        # weights actually applied this epoch, exact rather than step-averaged
        on = 1.0 if adapt_now else 0.0
        entry.update(r1=weights.r1, r2=weights.r2, alpha=on * weights.alpha, beta=on * weights.beta,
                     mmd_weight=on * weights.mmd_weight)
        entry["pck"] = None
        last = epoch == schedule.total_epochs - 1
        if eval_set is not None and (last or (config.eval_every and (epoch + 1) % config.eval_every == 0)):
            report = evaluate_dataset(params, eval_set, pck_config)
            entry["pck"] = {f"pck@{t:g}": v for t, v in report.fractions.items()}
        state.log.append(entry)
        state.epoch = epoch + 1
        log.debug("epoch %d lr %.6g loss %.5g", epoch, lr, entry["total"])
    return state


# --- checkpoints and logs ----------------------------------------------------

def save_state(path, state: TrainState):
    records = params_to_records(state.params)
    records["meta.epoch"] = np.array([state.epoch], dtype=np.float64)
    for name, v in state.optimizer.velocities.items():
        records[f"vel.{name}"] = v
    write_records(path, records)


def load_state(path, config: TrainConfig) -> TrainState:
    records = read_records(path)
    dtype = np.float32 if config.dtype == "float32" else np.float64
    params = params_from_records(records, dtype=dtype)
    trainable = params.trainable()
    vel = {}
    for name, t in trainable.items():
        key = f"vel.{name}"
        if key not in records:
            raise ConfigurationError(f"checkpoint lacks optimizer velocity {key!r}")
        vel[name] = records[key].astype(dtype)
    epoch = int(records["meta.epoch"][0]) if "meta.epoch" in records else 0
    return TrainState(params, OptimizerState(vel, config.momentum, config.base_lr), epoch)


def log_to_jsonl(entries) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in entries)


# --- experiment matrix -------------------------------------------------------

@dataclass
class MatrixCell:
    task: str
    config: TrainConfig
    source: object
    target: object
    eval_set: object


def run_cell(cell: MatrixCell) -> dict:
    state = train(cell.config, cell.source, cell.target, cell.eval_set)
    report = evaluate_dataset(state.params, cell.eval_set)
    row = report_row(cell.task, cell.config.method, report)
    row["seed"] = cell.config.seed
    row["log"] = state.log
    return row


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ADAPOSE_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment_matrix(cells: list[MatrixCell], workers: int | None = None) -> list[dict]:
    """Train and evaluate every cell; one result row per cell, in input order."""
    workers = workers or worker_count()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(c) for c in cells]


def average_rows(rows: list[dict]) -> list[dict]:
    """Seed-average rows sharing (task, method), preserving first-seen order."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["task"], r["method"]), []).append(r)
    out = []
    for (task, method), rs in groups.items():
        avg = {"task": task, "method": method, "seeds": len(rs)}
        for col in ("pck@50", "pck@40", "pck@30", "pck@20", "pck@10"):
            avg[col] = float(np.mean([r[col] for r in rs]))
        out.append(avg)
    return out
