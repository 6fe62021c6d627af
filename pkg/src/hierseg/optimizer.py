"""Direct optimization of a free per-voxel logit field, plus a finite-difference gradient check.

The logit field stands in for a segmentation network's output: each voxel
owns its 19 logits, and SGD with momentum minimises the weighted
hierarchy-supervised objective.  Because every component is a voxel mean,
the raw gradient on one logit is O(1/N); ``grad_scale="voxel"`` (default)
multiplies it by the voxel count so the learning rate means the same thing
at every grid size.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .anatomy import BV, AnatomyHierarchy, RegionPartition, hierarchy, lobe_probability
from .losses import (
    LossBreakdown,
    LossConfig,
    _laplacian_array,
    _softmax,
    loss_terms,
    total_loss_and_grad,
)
from .volume import LabelVolume, ScalarField4D, argmax_labels, softmax_channels

log = logging.getLogger(__name__)


class NumericalAbort(ArithmeticError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class OptimizeConfig:
    iterations: int = 500
    lr: float = 0.01
    momentum: float = 0.9
    init_sigma: float = 0.01
    seed: int = 42
    loss: LossConfig = field(default_factory=LossConfig)
    log_period: int = 50
    grad_scale: str = "voxel"
    threads: int = 1

    def __post_init__(self):
        if not (0 < self.lr < math.inf):
            raise ValueError("learning rate must be finite and > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.log_period < 1:
            raise ValueError("log period must be >= 1")
        if self.grad_scale not in ("voxel", "none"):
            raise ValueError(f"grad_scale must be 'voxel' or 'none', got {self.grad_scale!r}")


@dataclass(frozen=True, eq=False)
class OptimizeTrace:
    iterations: list[int]
    breakdowns: list[LossBreakdown]
    logits: ScalarField4D
    partition: LabelVolume

    def jsonl(self) -> str:
        rows = [json.dumps({"iteration": i, **bd.to_dict()}) for i, bd in zip(self.iterations, self.breakdowns)]
        return "\n".join(rows) + "\n"


def init_logits(shape, sigma: float, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, sigma, size=shape)


def optimize_logits(r: RegionPartition, h: AnatomyHierarchy | None = None,
                    cfg: OptimizeConfig | None = None, callback=None) -> OptimizeTrace:
    h = h or hierarchy()
    cfg = cfg or OptimizeConfig()
    if not np.any(r.tags == BV):
        raise ValueError("region partition has no BV voxels")

    z = init_logits((19,) + r.dims, cfg.init_sigma, cfg.seed)
    v = np.zeros_like(z)
    scale = float(r.n_voxels) if cfg.grad_scale == "voxel" else 1.0
    logged_at, trace = [], []

    for it in range(cfg.iterations + 1):
        bd, g = total_loss_and_grad(z, r, h, cfg.loss, threads=cfg.threads)
        if not math.isfinite(bd.total):
            raise NumericalAbort(it, "loss")
        if it % cfg.log_period == 0 or it == cfg.iterations:
            logged_at.append(it)
            trace.append(bd)
            log.info("iter %d total %.6f", it, bd.total)
        if callback is not None:
            callback(it, bd)
        if it == cfg.iterations:
            break
        g = g.data
        if not np.all(np.isfinite(g)):
            raise NumericalAbort(it, "gradient")
        v = cfg.momentum * v + g * scale
        with np.errstate(over="ignore", invalid="ignore"):
            z = z - cfg.lr * v
        if not np.all(np.isfinite(z)):
            raise NumericalAbort(it + 1, "logits")

    logits = ScalarField4D(z, r.spacing, "logits")
    partition = argmax_labels(softmax_channels(logits))
    return OptimizeTrace(logged_at, trace, logits, partition)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    samples: int
    skipped_at_kinks: int

    def to_dict(self) -> dict:
        return {"max_rel_error": self.max_rel_error, "samples": self.samples,
                "skipped_at_kinks": self.skipped_at_kinks}


def _probe(z, r, h, cfg):
    p = _softmax(z)
    bd = loss_terms(p, r, h, cfg)
    sign = np.sign(_laplacian_array(p)).astype(np.int8) if cfg.lambda2 else None
    witness = lobe_probability(p, h).witness if cfg.lambda1 else None
    return bd.total, sign, witness


def grad_check_report(r: RegionPartition, h: AnatomyHierarchy | None = None, cfg: LossConfig | None = None,
                      samples: int = 200, seed: int = 0, step: float = 1e-3,
                      sigma: float = 1.0) -> GradCheckReport:
    """Compare analytic and central-difference gradients of the total loss.

    The logit field is seeded N(0, sigma) and coordinates are drawn uniformly
    over (channel, voxel).  The L1 term and the max reduction are only
    piecewise smooth, so a probe whose +/- step changes the sign pattern of
    the Laplacian or any max witness is not a valid difference quotient; it
    is discarded and another coordinate is drawn.  Relative error uses
    ``max(|a|, |fd|, 1e-8)`` as the denominator.
    """
    h = h or hierarchy()
    cfg = cfg or LossConfig()
    if max(r.dims) > 12:
        raise ValueError(f"grad_check is limited to grids of at most 12^3, got {r.dims}")
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, sigma, size=(19,) + r.dims)
    _, g = total_loss_and_grad(z, r, h, cfg)
    g = g.data
    worst, done, skipped = 0.0, 0, 0
    while done < samples:
        if skipped > 10 * samples:
            raise RuntimeError("too many probes straddle a kink; lower the step")
        c = int(rng.integers(19))
        vox = tuple(int(rng.integers(n)) for n in r.dims)
        at = (c,) + vox
        old = z[at]
        z[at] = old + step
        fp, sp, wp = _probe(z, r, h, cfg)
        z[at] = old - step
        fm, sm, wm = _probe(z, r, h, cfg)
        z[at] = old
        if (sp is not None and not np.array_equal(sp, sm)) or (wp is not None and not np.array_equal(wp, wm)):
            skipped += 1
            continue
        fd = (fp - fm) / (2.0 * step)
        a = g[at]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
        done += 1
    return GradCheckReport(float(worst), done, skipped)


def grad_check(r: RegionPartition, h: AnatomyHierarchy | None = None, cfg: LossConfig | None = None,
               samples: int = 200, seed: int = 0, step: float = 1e-3, sigma: float = 1.0) -> float:
    """Max relative gradient error; see :func:`grad_check_report`."""
    return grad_check_report(r, h, cfg, samples, seed, step, sigma).max_rel_error
