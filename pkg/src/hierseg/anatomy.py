"""Lobe/segment hierarchy, region partition and lobe-level max reduction.

Segment ids double as channel indices of the 19-channel segment field:
channel 0 is background and channel ``s`` holds segment ``s``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .volume import LabelVolume, ScalarField4D

SEGMENT_NAMES = (
    "LS1/2", "LS3", "LS4", "LS5",
    "LS6", "LS7/8", "LS9", "LS10",
    "RS1", "RS2", "RS3",
    "RS4", "RS5",
    "RS6", "RS7", "RS8", "RS9", "RS10",
)
LOBE_NAMES = ("LeftUpper", "LeftLower", "RightUpper", "RightMiddle", "RightLower")
LOBE_MEMBER_NAMES = {
    "LeftUpper": ("LS1/2", "LS3", "LS4", "LS5"),
    "LeftLower": ("LS6", "LS7/8", "LS9", "LS10"),
    "RightUpper": ("RS1", "RS2", "RS3"),
    "RightMiddle": ("RS4", "RS5"),
    "RightLower": ("RS6", "RS7", "RS8", "RS9", "RS10"),
}

N_SEGMENT_CHANNELS = 19
N_LOBE_CHANNELS = 6

# region tags
B, BV, L = 0, 1, 2


class ConsistencyError(ValueError):
    """Labels contradict the lobe/segment hierarchy."""


@dataclass(frozen=True)
class AnatomyHierarchy:
    segment_names: tuple[str, ...]
    lobe_names: tuple[str, ...]
    members: tuple[tuple[int, ...], ...]  # members[lobe_id - 1] -> sorted segment ids

    def __post_init__(self):
        flat = [s for m in self.members for s in m]
        if len(self.segment_names) != 18 or len(self.lobe_names) != 5:
            raise ValueError("hierarchy needs 18 segments and 5 lobes")
        if sorted(flat) != list(range(1, 19)) or len(set(flat)) != len(flat):
            raise ValueError("lobe memberships must partition segments 1..18")
        lut = np.zeros(N_SEGMENT_CHANNELS, dtype=np.uint8)
        for lobe_id, m in enumerate(self.members, start=1):
            lut[list(m)] = lobe_id
        lut.flags.writeable = False
        object.__setattr__(self, "_segment_to_lobe", lut)

    @property
    def n_segments(self) -> int:
        return len(self.segment_names)

    @property
    def n_lobes(self) -> int:
        return len(self.lobe_names)

    @property
    def segment_to_lobe(self) -> np.ndarray:
        """Lookup table of length 19: segment id -> lobe id (0 -> 0)."""
        return self._segment_to_lobe

    def segment_id(self, name: str) -> int:
        return self.segment_names.index(name) + 1

    def lobe_id(self, name: str) -> int:
        return self.lobe_names.index(name) + 1

    def segment_name(self, sid: int) -> str:
        return "background" if sid == 0 else self.segment_names[sid - 1]

    def lobe_name(self, lid: int) -> str:
        return "background" if lid == 0 else self.lobe_names[lid - 1]

    def lobe_of(self, segment) -> int:
        sid = self.segment_id(segment) if isinstance(segment, str) else int(segment)
        if not 1 <= sid <= 18:
            raise ValueError(f"not a segment id: {segment!r}")
        return int(self._segment_to_lobe[sid])

    def members_of(self, lobe) -> tuple[int, ...]:
        lid = self.lobe_id(lobe) if isinstance(lobe, str) else int(lobe)
        return self.members[lid - 1]

    def registry(self) -> list[dict]:
        """Class-id registry for downstream tooling."""
        rows = [{"id": 0, "name": "background", "level": "both", "lobe_of": None}]
        for lid, name in enumerate(self.lobe_names, start=1):
            rows.append({"id": lid, "name": name, "level": "lobe", "lobe_of": None})
        for sid, name in enumerate(self.segment_names, start=1):
            rows.append({"id": sid, "name": name, "level": "segment", "lobe_of": self.lobe_of(sid)})
        return rows

    def registry_json(self) -> str:
        return json.dumps(self.registry(), indent=2)


def _build_hierarchy() -> AnatomyHierarchy:
    members = tuple(
        tuple(SEGMENT_NAMES.index(s) + 1 for s in LOBE_MEMBER_NAMES[lobe]) for lobe in LOBE_NAMES
    )
    return AnatomyHierarchy(SEGMENT_NAMES, LOBE_NAMES, members)


_HIERARCHY = _build_hierarchy()


def hierarchy() -> AnatomyHierarchy:
    return _HIERARCHY


@dataclass(frozen=True, eq=False)
class RegionPartition:
    """Per-voxel B/BV/L tags with segment and lobe targets.

    ``segment_target`` is 0 off BV; ``lobe_target`` is 0 exactly on B.
    """

    tags: np.ndarray
    segment_target: np.ndarray
    lobe_target: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.tags.shape

    @property
    def bv_mask(self) -> np.ndarray:
        return self.tags == BV

    @property
    def n_voxels(self) -> int:
        return self.tags.size


def derive_regions(bv: LabelVolume, lobe: LabelVolume, h: AnatomyHierarchy | None = None) -> RegionPartition:
    h = h or hierarchy()
    if bv.dims != lobe.dims:
        raise ValueError(f"shape mismatch: bv {bv.dims} vs lobe {lobe.dims}")
    b = np.asarray(bv.data)
    lo = np.asarray(lobe.data)
    if b.max(initial=0) > 18:
        raise ValueError("bv ids must lie in 0..18")
    if lo.max(initial=0) > 5:
        raise ValueError("lobe ids must lie in 0..5")

    on_bv = b > 0
    bad = on_bv & (h.segment_to_lobe[b] != lo)
    if bad.any():
        z, y, x = (int(i) for i in np.argwhere(bad)[0])
        sid, lid = int(b[z, y, x]), int(lo[z, y, x])
        raise ConsistencyError(
            f"voxel (z={z}, y={y}, x={x}): bv segment {h.segment_name(sid)} belongs to "
            f"{h.lobe_name(h.lobe_of(sid))} but lobe label is {h.lobe_name(lid)}"
        )

    tags = np.full(b.shape, B, dtype=np.uint8)
    tags[lo > 0] = L
    tags[on_bv] = BV
    seg = np.where(on_bv, b, 0).astype(np.uint8)
    frz = []
    for a in (tags, seg, lo.astype(np.uint8)):
        a = a.copy()
        a.flags.writeable = False
        frz.append(a)
    return RegionPartition(*frz, spacing=bv.spacing)


@dataclass(frozen=True, eq=False)
class LobeProbabilityField:
    """Six-channel lobe-level field plus, per lobe, the member segment that attained the max."""

    data: np.ndarray  # (6, D, H, W)
    witness: np.ndarray  # (5, D, H, W) segment ids


def lobe_probability(p, h: AnatomyHierarchy | None = None) -> LobeProbabilityField:
    h = h or hierarchy()
    arr = p.data if isinstance(p, ScalarField4D) else np.asarray(p)
    if arr.shape[0] != N_SEGMENT_CHANNELS:
        raise ValueError(f"expected {N_SEGMENT_CHANNELS} channels, got {arr.shape[0]}")
    q = np.empty((N_LOBE_CHANNELS,) + arr.shape[1:], dtype=arr.dtype)
    witness = np.empty((h.n_lobes,) + arr.shape[1:], dtype=np.uint8)
    q[0] = arr[0]
    for k, members in enumerate(h.members, start=1):
        sub = arr[list(members)]
        idx = np.argmax(sub, axis=0)  # first max -> lowest member id
        q[k] = np.take_along_axis(sub, idx[None], axis=0)[0]
        witness[k - 1] = np.asarray(members, dtype=np.uint8)[idx]
    return LobeProbabilityField(q, witness)


def lobes_of_segments(seg: LabelVolume, h: AnatomyHierarchy | None = None) -> LabelVolume:
    h = h or hierarchy()
    return LabelVolume(h.segment_to_lobe[np.asarray(seg.data)], "lobe_labels", seg.spacing)


def lobe_consistency(seg: LabelVolume, lobe: LabelVolume, h: AnatomyHierarchy | None = None) -> float:
    """Fraction of in-lobe voxels whose segment belongs to that lobe."""
    lo = np.asarray(lobe.data)
    inside = lo > 0
    n = int(inside.sum())
    if n == 0:
        raise ValueError("lobe volume has no in-lobe voxels")
    mapped = np.asarray(lobes_of_segments(seg, h).data)
    return float(np.count_nonzero(mapped[inside] == lo[inside])) / n
