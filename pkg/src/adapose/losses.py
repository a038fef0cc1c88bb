"""Regression, kernel MMD and mapping-consistency objectives."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import DiffTensor, concat, detach, exp, reshape, sqdist, square
from .diffcore.tensor import add, as_tensor, div, matmul, mean, mul, sub, sum_, transpose
from .errors import DimensionError, NumericError, PreconditionError

MEDIAN_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class KernelSpec:
    """``linear``, or a sum of Gaussian kernels exp(-d² / bw).

    With ``bandwidths=None`` the rbf widths are the median pairwise squared
    distance of the merged sample times each of ``multipliers``.
    """

    kind: str = "rbf_multi"
    bandwidths: tuple[float, ...] | None = None
    multipliers: tuple[float, ...] = MEDIAN_MULTIPLIERS

    def __post_init__(self):
        if self.kind not in ("linear", "rbf_multi"):
            raise PreconditionError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf_multi":
            widths = self.bandwidths if self.bandwidths is not None else self.multipliers
            if not widths or any(not (b > 0) for b in widths):
                raise PreconditionError("rbf bandwidths must be a nonempty list of positive reals")


@dataclass(frozen=True)
class ConsistencyConfig:
    r1: float = 1.0
    r2: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    epsilon: float = 1e-6
    # weight of the raw feature-MMD term; only the feature-alignment baseline sets it
    mmd_weight: float = 0.0

    def __post_init__(self):
        if not (self.r1 > 0 and self.r2 > 0 and self.epsilon > 0):
            raise PreconditionError("r1, r2 and epsilon must be positive")
        if self.alpha < 0 or self.beta < 0 or self.mmd_weight < 0:
            raise PreconditionError("alpha, beta and mmd_weight must be nonnegative")


@dataclass
class LossBreakdown:
    reg_source: float
    reg_target_labeled: float | None
    d_input: float
    d_feature: float
    d_output: float
    ratio_feat_in: float
    ratio_out_in: float
    l_feat_in: float
    l_out_in: float
    total: float
    alpha: float = 0.0
    beta: float = 0.0
    mmd_weight: float = 0.0

    def recompute_total(self) -> float:
        reg_t = self.reg_target_labeled or 0.0
        return (self.reg_source + reg_t + self.alpha * self.l_feat_in + self.beta * self.l_out_in
                + self.mmd_weight * self.d_feature)

    def as_dict(self):
        return asdict(self)


# --- regression ----------------------------------------------------------

def mse_pose(pred, gt) -> DiffTensor:
    """Batch mean of per-sample squared L2 pose error (summed over coordinates)."""
    pred = as_tensor(pred)
    gt = as_tensor(gt, like=pred)
    if pred.shape != gt.shape:
        raise DimensionError(f"mse_pose: prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.ndim == 0 or pred.shape[0] < 1:
        raise PreconditionError("mse_pose needs at least one sample")
    return div(sum_(square(sub(pred, gt))), float(pred.shape[0]))


# --- MMD -----------------------------------------------------------------

def median_sq_distance(points: np.ndarray) -> float:
    """Median over distinct pairs of squared Euclidean distances."""
    p = np.asarray(points, dtype=np.float64)
    sq = (p * p).sum(1)
    d = sq[:, None] + sq[None, :] - 2.0 * p @ p.T
    iu = np.triu_indices(len(p), k=1)
    return float(np.median(np.maximum(d[iu], 0.0)))


def resolve_bandwidths(kernel: KernelSpec, xs: np.ndarray, xt: np.ndarray) -> tuple[float, ...]:
    if kernel.kind != "rbf_multi":
        return ()
    if kernel.bandwidths is not None:
        return tuple(float(b) for b in kernel.bandwidths)
    med = median_sq_distance(np.concatenate([xs, xt]))
    if not med > 0:
        med = 1.0
    return tuple(med * m for m in kernel.multipliers)


def _gram(a: DiffTensor, b: DiffTensor, kind: str, bandwidths) -> DiffTensor:
    if kind == "linear":
        return matmul(a, transpose(b))
    d = sqdist(a, b)
    k = None
    for bw in bandwidths:
        term = exp(mul(d, -1.0 / bw))
        k = term if k is None else add(k, term)
    return k


def mmd2(xs, xt, kernel: KernelSpec = KernelSpec(), bandwidths=None) -> DiffTensor:
    """Biased (V-statistic) squared MMD between two row samples.

    Bandwidths from the median heuristic are computed on detached values and
    held constant for differentiation; pass ``bandwidths`` to pin them.
    """
    xs, xt = as_tensor(xs), as_tensor(xt)
    if xs.ndim != 2 or xt.ndim != 2:
        raise DimensionError(f"mmd2 expects matrices, got {xs.shape} and {xt.shape}")
    if xs.shape[0] < 2 or xt.shape[0] < 2:
        raise PreconditionError(f"mmd2 needs at least 2 points per sample, got {xs.shape[0]} and {xt.shape[0]}")
    if xs.shape[1] != xt.shape[1]:
        raise DimensionError(f"mmd2: dimension {xs.shape[1]} vs {xt.shape[1]}")
    if not (np.isfinite(xs.data).all() and np.isfinite(xt.data).all()):
        raise NumericError("mmd2: non-finite input")
    if bandwidths is None:
        bandwidths = resolve_bandwidths(kernel, xs.data, xt.data)
    kss = mean(_gram(xs, xs, kernel.kind, bandwidths))
    kst = mean(_gram(xs, xt, kernel.kind, bandwidths))
    ktt = mean(_gram(xt, xt, kernel.kind, bandwidths))
    return add(sub(kss, mul(kst, 2.0)), ktt)


def mmd2_bruteforce(xs, xt, kernel: KernelSpec = KernelSpec(), bandwidths=None) -> float:
    """Reference double sum over point pairs, kernel evaluated on differences."""
    xs = np.asarray(xs, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if bandwidths is None:
        bandwidths = resolve_bandwidths(kernel, xs, xt)

    def block(a, b):
        total = 0.0
        for i in range(len(a)):
            if kernel.kind == "linear":
                row = b @ a[i]
            else:
                diff = b - a[i]
                d2 = np.einsum("ij,ij->i", diff, diff)
                row = sum(np.exp(-d2 / bw) for bw in bandwidths)
            total += float(np.sum(row))
        return total / (len(a) * len(b))

    return block(xs, xs) - 2.0 * block(xs, xt) + block(xt, xt)


# --- mapping consistency ---------------------------------------------------

def consistency_ratios(d_feature, d_output, d_input, epsilon: float = 1e-6):
    """(D_feature, D_output) / (D_input + eps); the denominator carries no gradient."""
    denom = add(detach(as_tensor(d_input)), epsilon)
    return div(as_tensor(d_feature), denom), div(as_tensor(d_output), denom)


def mapping_consistency_loss(ratios, config: ConsistencyConfig):
    ratio_feat, ratio_out = (as_tensor(r) for r in ratios)
    if not (np.isfinite(ratio_feat.data).all() and np.isfinite(ratio_out.data).all()):
        raise NumericError("consistency ratios must be finite")
    return square(sub(ratio_feat, config.r1)), square(sub(ratio_out, config.r2))


def _rows(t: DiffTensor) -> DiffTensor:
    return reshape(t, (t.shape[0], -1))


def total_objective(batch_s, batch_t_unlabeled, params, config: ConsistencyConfig,
                    kernel: KernelSpec = KernelSpec(), batch_t_labeled=None, adapt: bool = True,
                    bandwidths: dict | None = None):
    """Full training objective for one step.

    ``batch_s`` and ``batch_t_labeled`` are ``(x, y)`` pairs with pixel poses;
    ``batch_t_unlabeled`` is an input array. With ``adapt=False`` the
    discrepancy terms are skipped (reported as 0) and only regression counts.
    ``bandwidths`` pins per-term rbf widths (keys ``input``, ``feature``,
    ``output``). Returns ``(total, LossBreakdown)``.
    """
    from .model import extract_features, regress_normalized

    if batch_t_unlabeled is None:
        raise PreconditionError("total_objective needs an unlabeled target batch")
    xs, ys = batch_s
    xs = np.asarray(xs)
    xt = np.asarray(batch_t_unlabeled)
    dtype = params["stem.w"].dtype
    pieces = [xs, xt]
    if batch_t_labeled is not None:
        xl, yl = batch_t_labeled
        pieces.append(np.asarray(xl))
    sizes = [len(p) for p in pieces]
    x_all = DiffTensor(np.concatenate(pieces), dtype=dtype)

    f_all = extract_features(x_all, params)
    y_all = regress_normalized(f_all, params)
    ns, nt = sizes[0], sizes[1]
    y_s = y_all[0:ns]
    reg_s = mse_pose(y_s, params.normalize_pose(ys))
    total = reg_s
    reg_t = None
    if batch_t_labeled is not None:
        y_l = y_all[ns + nt :]
        reg_t = mse_pose(y_l, params.normalize_pose(yl))
        total = add(total, reg_t)

    zero = DiffTensor(np.array(0.0))
    d_in = d_feat = d_out = r_feat = r_out = l_feat = l_out = zero
    alpha = beta = gamma = 0.0
    if adapt:
        bw = bandwidths or {}
        f_s, f_t = _rows(f_all[0:ns]), _rows(f_all[ns : ns + nt])
        o_s, o_t = _rows(y_s), _rows(y_all[ns : ns + nt])
        in_s, in_t = DiffTensor(xs.reshape(ns, -1)), DiffTensor(xt.reshape(nt, -1))
        d_in = mmd2(in_s, in_t, kernel, bw.get("input"))
        d_feat = mmd2(f_s, f_t, kernel, bw.get("feature"))
        d_out = mmd2(o_s, o_t, kernel, bw.get("output"))
        r_feat, r_out = consistency_ratios(d_feat, d_out, d_in, config.epsilon)
        l_feat, l_out = mapping_consistency_loss((r_feat, r_out), config)
        alpha, beta, gamma = config.alpha, config.beta, config.mmd_weight
        total = add(total, add(mul(l_feat, alpha), mul(l_out, beta)))
        if gamma:
            total = add(total, mul(d_feat, gamma))

    breakdown = LossBreakdown(
        reg_source=reg_s.item(), reg_target_labeled=None if reg_t is None else reg_t.item(),
        d_input=d_in.item(), d_feature=d_feat.item(), d_output=d_out.item(),
        ratio_feat_in=r_feat.item(), ratio_out_in=r_out.item(), l_feat_in=l_feat.item(), l_out_in=l_out.item(),
        total=total.item(), alpha=alpha, beta=beta, mmd_weight=gamma,
    )
    return total, breakdown
