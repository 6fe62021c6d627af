"""Hierarchy-supervised segmentation losses with analytic gradients.

Every component works on a 19-channel probability array ``p`` (channel =
segment id, 0 = background) and can return its gradient with respect to
``p``.  :func:`total_loss_and_grad` chains everything back to the logits
through the softmax Jacobian.

Components
----------
recall_bv, ce_bv
    Direct supervision on bronchovascular (BV) voxels.
dice_lobe, ce_lobe
    Indirect supervision through the lobe-level max reduction.
consistency_loss
    L1 norm of the 6-neighbour Laplacian of ``p``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ._parallel import pmap
from .anatomy import (
    BV,
    N_LOBE_CHANNELS,
    N_SEGMENT_CHANNELS,
    AnatomyHierarchy,
    LobeProbabilityField,
    RegionPartition,
    hierarchy,
    lobe_probability,
)
from .volume import LabelVolume, ScalarField4D


class EmptyRegionError(ValueError):
    """The BV region is empty, so the direct-supervision terms are undefined."""


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    log_eps: float = 1e-12
    dice_eps: float = 1e-6
    consistency_norm: str = "mean"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.log_eps <= 0 or self.dice_eps <= 0:
            raise ValueError("epsilons must be positive")
        if self.consistency_norm not in ("mean", "voxel", "sum"):
            raise ValueError(
                f"consistency_norm must be 'mean', 'voxel' or 'sum', got {self.consistency_norm!r}"
            )


@dataclass(frozen=True)
class LossBreakdown:
    recall_bv: float
    ce_bv: float
    dice_lobe: float
    ce_lobe: float
    consistency: float
    directly: float
    indirectly: float
    total: float
    lambda1: float = 1.0
    lambda2: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _arr(p) -> np.ndarray:
    a = p.data if isinstance(p, ScalarField4D) else p
    return np.asarray(a, dtype=np.float64)


def _bv_classes(r: RegionPartition):
    on_bv = r.tags == BV
    if not on_bv.any():
        raise EmptyRegionError("region partition has no BV voxels")
    return on_bv, np.unique(r.segment_target[on_bv])


# ---------------------------------------------------------------------------
# direct supervision


def recall_bv(p, r: RegionPartition, grad: bool = False):
    """One minus the class-averaged soft recall of each segment's BV voxels."""
    p = _arr(p)
    on_bv, classes = _bv_classes(r)
    g = np.zeros_like(p) if grad else None
    recalls = []
    for c in classes:
        m = on_bv & (r.segment_target == c)
        n = np.count_nonzero(m)
        recalls.append(p[c][m].sum() / n)
        if grad:
            g[c][m] = -1.0 / (len(classes) * n)
    value = 1.0 - float(np.mean(recalls))
    return (value, g) if grad else value


def ce_bv(p, r: RegionPartition, grad: bool = False, eps: float = 1e-12):
    p = _arr(p)
    on_bv, _ = _bv_classes(r)
    idx = np.nonzero(on_bv)
    t = r.segment_target[idx].astype(np.intp)
    pt = p[(t,) + idx]
    clamped = np.maximum(pt, eps)
    n = t.size
    value = float(-np.log(clamped).sum() / n)
    if not grad:
        return value
    g = np.zeros_like(p)
    g[(t,) + idx] = np.where(pt > eps, -1.0 / (n * clamped), 0.0)
    return value, g


# ---------------------------------------------------------------------------
# indirect supervision (lobe level)


def _lobe_targets(r: RegionPartition) -> np.ndarray:
    return r.lobe_target.astype(np.intp)


def route_lobe_grad(gq: np.ndarray, q: LobeProbabilityField, h: AnatomyHierarchy | None = None) -> np.ndarray:
    """Send a gradient w.r.t. the lobe field back to the max-witness segment channels."""
    h = h or hierarchy()
    gp = np.empty((N_SEGMENT_CHANNELS,) + gq.shape[1:], dtype=np.float64)
    gp[0] = gq[0]
    for k, members in enumerate(h.members, start=1):
        w = q.witness[k - 1]
        for s in members:
            np.multiply(gq[k], w == s, out=gp[s])
    return gp


def _dice_lobe(q, r, grad, eps):
    qa = np.asarray(q.data, dtype=np.float64)
    tgt = _lobe_targets(r)
    present = [k for k in range(N_LOBE_CHANNELS) if np.any(tgt == k)]
    gq = np.zeros_like(qa) if grad else None
    dices = []
    for k in present:
        t = tgt == k
        inter = qa[k][t].sum()
        denom = qa[k].sum() + np.count_nonzero(t) + eps
        num = 2.0 * inter + eps
        dices.append(num / denom)
        if grad:
            gq[k] = -(2.0 * t * denom - num) / (denom * denom) / len(present)
    return 1.0 - float(np.mean(dices)), gq


def _ce_lobe(q, r, grad, eps):
    qa = np.asarray(q.data, dtype=np.float64)
    tgt = _lobe_targets(r)
    qt = np.take_along_axis(qa, tgt[None], axis=0)[0]
    clamped = np.maximum(qt, eps)
    n = tgt.size
    value = float(-np.log(clamped).sum() / n)
    if not grad:
        return value, None
    gq = np.zeros_like(qa)
    np.put_along_axis(gq, tgt[None], np.where(qt > eps, -1.0 / (n * clamped), 0.0)[None], axis=0)
    return value, gq


def dice_lobe(q: LobeProbabilityField, r: RegionPartition, grad: bool = False, eps: float = 1e-6):
    """Soft Dice over the six lobe-level channels (0 = background).

    One minus the mean Dice over channels whose target is non-empty.  The
    gradient is returned w.r.t. the 19 segment channels, routed through the
    max witnesses.
    """
    value, gq = _dice_lobe(q, r, grad, eps)
    return (value, route_lobe_grad(gq, q)) if grad else value


def ce_lobe(q: LobeProbabilityField, r: RegionPartition, grad: bool = False, eps: float = 1e-12):
    value, gq = _ce_lobe(q, r, grad, eps)
    return (value, route_lobe_grad(gq, q)) if grad else value


# ---------------------------------------------------------------------------
# consistency


def _laplacian_spatial(a: np.ndarray) -> np.ndarray:
    # Neumann boundary: out-of-bounds neighbours are dropped, which equals
    # replicate-padding the field.
    out = np.zeros_like(a)
    for axis in (-3, -2, -1):
        d = np.diff(a, axis=axis)
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] += d
        out[tuple(hi)] -= d
    return out


def _laplacian_array(a: np.ndarray, threads: int = 1) -> np.ndarray:
    if threads == 1:
        return _laplacian_spatial(a)
    chunks = np.array_split(np.arange(a.shape[0]), min(threads, a.shape[0]))
    return np.concatenate(pmap(lambda ix: _laplacian_spatial(a[ix[0]:ix[-1] + 1]), chunks, threads))


def laplacian(p, threads: int = 1) -> ScalarField4D:
    """Per-channel 6-neighbour discrete Laplacian with Neumann boundaries."""
    a = _arr(p)
    spacing = p.spacing if isinstance(p, ScalarField4D) else (1.0, 1.0, 1.0)
    return ScalarField4D(_laplacian_array(a, threads), spacing, "laplacian")


def consistency_loss(p, cfg: LossConfig | None = None, grad: bool = False, threads: int = 1):
    cfg = cfg or LossConfig()
    a = _arr(p)
    lap = _laplacian_array(a, threads)
    scale = {"mean": 1.0 / a.size, "voxel": a.shape[0] / a.size, "sum": 1.0}[cfg.consistency_norm]
    value = float(np.abs(lap).sum() * scale)
    if not grad:
        return value
    # the stencil is self-adjoint, so d|Lp|_1/dp = L(sign(Lp))
    # sign(Lp) is in {-1, 0, 1}, so its stencil is exact in int8
    sgn = np.sign(lap).astype(np.int8)
    return value, _laplacian_array(sgn, threads) * scale


# ---------------------------------------------------------------------------
# totals


def softmax_backward(p: np.ndarray, gp: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the channel softmax."""
    return p * (gp - (p * gp).sum(axis=0, keepdims=True))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=0, keepdims=True))
    e /= e.sum(axis=0, keepdims=True)
    return e


def loss_terms(p, r: RegionPartition, h: AnatomyHierarchy | None = None,
               cfg: LossConfig | None = None, grad: bool = False, threads: int = 1):
    """Evaluate every component on a probability array.

    Returns the :class:`LossBreakdown` and, with ``grad=True``, the gradient
    of the weighted total with respect to ``p``.
    """
    h = h or hierarchy()
    cfg = cfg or LossConfig()
    p = _arr(p)
    if p.shape[0] != N_SEGMENT_CHANNELS:
        raise ValueError(f"expected {N_SEGMENT_CHANNELS} channels, got {p.shape[0]}")
    if p.shape[1:] != r.dims:
        raise ValueError(f"shape mismatch: field {p.shape[1:]} vs regions {r.dims}")
    q = lobe_probability(p, h)

    rec = recall_bv(p, r, grad=grad)
    ce = ce_bv(p, r, grad=grad, eps=cfg.log_eps)
    dl = _dice_lobe(q, r, grad, cfg.dice_eps)
    cl = _ce_lobe(q, r, grad, cfg.log_eps)
    cons = consistency_loss(p, cfg, grad=grad, threads=threads)

    vals = [rec[0] if grad else rec, ce[0] if grad else ce, dl[0], cl[0], cons[0] if grad else cons]
    directly = vals[0] + vals[1]
    indirectly = vals[2] + vals[3]
    total = directly + cfg.lambda1 * indirectly + cfg.lambda2 * vals[4]
    bd = LossBreakdown(*vals, directly, indirectly, total, cfg.lambda1, cfg.lambda2)
    if not grad:
        return bd
    gp = rec[1] + ce[1]
    if cfg.lambda1:
        gp += cfg.lambda1 * route_lobe_grad(dl[1] + cl[1], q, h)
    if cfg.lambda2:
        gp += cfg.lambda2 * cons[1]
    return bd, gp


def total_loss_and_grad(logits, r: RegionPartition, h: AnatomyHierarchy | None = None,
                        cfg: LossConfig | None = None, threads: int = 1):
    """Loss breakdown and gradient with respect to the logits."""
    z = _arr(logits)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    p = _softmax(z)
    bd, gp = loss_terms(p, r, h, cfg, grad=True, threads=threads)
    gz = softmax_backward(p, gp)
    spacing = logits.spacing if isinstance(logits, ScalarField4D) else r.spacing
    return bd, ScalarField4D(gz, spacing, "gradient")


def total_loss(logits, r: RegionPartition, h: AnatomyHierarchy | None = None,
               cfg: LossConfig | None = None, threads: int = 1) -> LossBreakdown:
    return loss_terms(_softmax(_arr(logits)), r, h, cfg, grad=False, threads=threads)


# ---------------------------------------------------------------------------
# stage-one fully supervised objective


def fsl_loss(p, labels: LabelVolume, grad: bool = False, dice_eps: float = 1e-6, log_eps: float = 1e-12):
    """Soft Dice (over classes present) plus voxel-mean cross entropy."""
    p = _arr(p)
    lab = np.asarray(labels.data).astype(np.intp)
    if p.shape[1:] != lab.shape:
        raise ValueError(f"shape mismatch: field {p.shape[1:]} vs labels {lab.shape}")
    present = np.unique(lab)
    g = np.zeros_like(p) if grad else None
    dices = []
    for c in present:
        t = lab == c
        num = 2.0 * p[c][t].sum() + dice_eps
        denom = p[c].sum() + np.count_nonzero(t) + dice_eps
        dices.append(num / denom)
        if grad:
            g[c] -= (2.0 * t * denom - num) / (denom * denom) / len(present)
    pt = np.take_along_axis(p, lab[None], axis=0)[0]
    clamped = np.maximum(pt, log_eps)
    n = lab.size
    value = (1.0 - float(np.mean(dices))) + float(-np.log(clamped).sum() / n)
    if not grad:
        return value
    ce_g = np.zeros_like(p)
    np.put_along_axis(ce_g, lab[None], np.where(pt > log_eps, -1.0 / (n * clamped), 0.0)[None], axis=0)
    return value, g + ce_g
