"""Mapped Dice over tree structures and the per-slice ``#holes`` smoothness count."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._parallel import pmap
from .anatomy import AnatomyHierarchy, hierarchy
from .volume import LabelVolume

AXIS_NAMES = ("z", "y", "x")


@dataclass(frozen=True)
class MappedDiceReport:
    per_class: dict[int, float]
    mean: float
    classes_evaluated: list[int]

    def to_dict(self, h: AnatomyHierarchy | None = None) -> dict:
        h = h or hierarchy()
        return {
            "per_class": {h.segment_name(c): v for c, v in self.per_class.items()},
            "mean": self.mean,
            "classes_evaluated": [h.segment_name(c) for c in self.classes_evaluated],
        }


@dataclass(frozen=True)
class HolesReport:
    total: int
    per_axis: dict[str, int]
    per_class: dict[int, int] = field(default_factory=dict)

    def to_dict(self, h: AnatomyHierarchy | None = None) -> dict:
        h = h or hierarchy()
        return {
            "total": self.total,
            "per_axis": dict(self.per_axis),
            "per_class": {h.segment_name(c): v for c, v in self.per_class.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def mapped_dice(pred_segments: LabelVolume, structure_gt: LabelVolume) -> MappedDiceReport:
    """Dice between the structure relabelled by the predicted partition and its own labels.

    Each structure voxel takes the segment id the prediction assigns to it;
    Dice is then computed per class present in ``structure_gt``.
    """
    pred = np.asarray(pred_segments.data)
    gt = np.asarray(structure_gt.data)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs structure {gt.shape}")
    on = gt > 0
    if not on.any():
        raise ValueError("structure ground truth is empty; nothing to evaluate")
    mapped = np.where(on, pred, 0)

    n = 19
    gt_counts = np.bincount(gt[on], minlength=n)
    m_counts = np.bincount(mapped[on], minlength=n)
    agree = on & (mapped == gt)
    inter = np.bincount(gt[agree], minlength=n)

    classes = [int(c) for c in np.nonzero(gt_counts)[0] if c > 0]
    per_class = {c: 2.0 * inter[c] / (gt_counts[c] + m_counts[c]) for c in classes}
    mean = float(np.mean(list(per_class.values())))
    return MappedDiceReport({c: float(v) for c, v in per_class.items()}, mean, classes)


def _slice_structure(axis: int) -> np.ndarray:
    # 4-connectivity inside each slice, no links across slices
    s = np.zeros((3, 3, 3), dtype=bool)
    s[1, 1, 1] = True
    for a in range(3):
        if a == axis:
            continue
        idx = [1, 1, 1]
        for off in (0, 2):
            idx[a] = off
            s[tuple(idx)] = True
        idx[a] = 1
    return s


def _holes_along(mask: np.ndarray, axis: int) -> int:
    comp = ~mask
    lab, n = ndimage.label(comp, structure=_slice_structure(axis))
    if n == 0:
        return 0
    border = np.zeros(mask.shape, dtype=bool)
    for a in range(3):
        if a == axis:
            continue
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = 0
        hi[a] = -1
        border[tuple(lo)] = True
        border[tuple(hi)] = True
    touching = np.unique(lab[border & comp])
    return int(n - touching.size)


def count_holes(pred_segments: LabelVolume, threads: int = 1) -> HolesReport:
    """Count enclosed complement regions in every z, y and x slice of every segment class.

    A hole is a 4-connected component of ``label != c`` inside one slice that
    does not reach the slice border.  Background (0) is never evaluated.
    """
    lab = np.asarray(pred_segments.data)
    present = [int(c) for c in np.unique(lab) if c > 0]

    def per_class(c):
        mask = lab == c
        return [_holes_along(mask, a) for a in range(3)]

    counts = pmap(per_class, present, threads)
    per_axis = {name: int(sum(row[a] for row in counts)) for a, name in enumerate(AXIS_NAMES)}
    per_cls = {c: int(sum(row)) for c, row in zip(present, counts)}
    return HolesReport(int(sum(per_axis.values())), per_axis, per_cls)
