"""Procedural lung-like phantoms and nearest-structure segment ground truth.

Two ellipsoidal lungs are cut into five lobes by fixed planes.  Every lobe
is split into one territory per member segment (seeded k-means on its
voxels); each segment gets a small branching polyline tree that starts near
the lobe's medial face, heads into its territory, and is rasterized as a
tube.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.cluster.vq import kmeans2

from ._parallel import pmap
from .anatomy import AnatomyHierarchy, derive_regions, hierarchy
from .volume import LabelVolume, write_svol


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    size: tuple[int, int, int] = (48, 48, 48)
    seed: int = 42
    tube_radius: float = 1.5
    branch_depth: int = 3
    branch_length: tuple[float, float] = (4.0, 9.0)
    lobe_recipe: str = "two-ellipsoids-planar-cuts"
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if isinstance(self.size, int):
            object.__setattr__(self, "size", (self.size,) * 3)
        if len(self.size) != 3 or min(self.size) < 24:
            raise ValueError(f"grid size must be >= 24 per axis, got {self.size}")
        if self.tube_radius < 1:
            raise ValueError("tube radius must be >= 1 voxel")
        if self.branch_depth < 0:
            raise ValueError("branch depth must be >= 0")
        lo, hi = self.branch_length
        if not 0 < lo <= hi:
            raise ValueError(f"bad branch length range {self.branch_length}")
        if self.lobe_recipe != "two-ellipsoids-planar-cuts":
            raise ValueError(f"unknown lobe recipe {self.lobe_recipe!r}")


@dataclass(frozen=True, eq=False)
class PhantomBundle:
    bv: LabelVolume
    lobe: LabelVolume
    gt: LabelVolume
    skeletons: dict[int, list[np.ndarray]] = field(default_factory=dict)

    def skeleton_json(self, h: AnatomyHierarchy | None = None) -> str:
        h = h or hierarchy()
        doc = {
            h.segment_name(s): [np.round(line, 4).tolist() for line in lines]
            for s, lines in sorted(self.skeletons.items())
        }
        return json.dumps(doc)

    def save(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_svol(self.bv, out / "bv.svol")
        write_svol(self.lobe, out / "lobe.svol")
        write_svol(self.gt, out / "gt.svol")
        (out / "skeleton.json").write_text(self.skeleton_json())


# ---------------------------------------------------------------------------
# lobes


def lobe_labels(size) -> np.ndarray:
    """Fixed two-ellipsoid lobe map; z index 0 is the apex."""
    D, H, W = size
    z, y, x = np.meshgrid(
        (np.arange(D) + 0.5) / D, (np.arange(H) + 0.5) / H, (np.arange(W) + 0.5) / W, indexing="ij"
    )
    out = np.zeros(size, dtype=np.uint8)

    def ellipsoid(cx, ax):
        return ((z - 0.5) / 0.42) ** 2 + ((y - 0.5) / 0.38) ** 2 + ((x - cx) / ax) ** 2 <= 1.0

    left = ellipsoid(0.73, 0.2)
    right = ellipsoid(0.27, 0.22)

    # oblique fissures tilt with y; right horizontal fissure is flat in z
    left_upper = z < 0.52 + 0.3 * (y - 0.5)
    out[left & left_upper] = 1
    out[left & ~left_upper] = 2
    right_front = z < 0.56 + 0.3 * (y - 0.5)
    right_upper = right_front & (z < 0.36 + 0.15 * (y - 0.5))
    out[right & right_upper] = 3
    out[right & right_front & ~right_upper] = 4
    out[right & ~right_front] = 5
    return out


# ---------------------------------------------------------------------------
# trees


def _clip_segment(a, b, allowed):
    """Truncate a->b at the first sample that leaves ``allowed``; None if nothing survives."""
    length = np.linalg.norm(b - a)
    n = max(int(np.ceil(length / 0.25)), 1)
    shape = np.array(allowed.shape)
    last = None
    for i in range(n + 1):
        pt = a + (b - a) * (i / n)
        idx = np.floor(pt).astype(int)
        if np.any(idx < 0) or np.any(idx >= shape) or not allowed[tuple(idx)]:
            break
        last = pt
    if last is None or np.linalg.norm(last - a) < 1.0:
        return None
    return last


def _random_turn(rng, d, max_angle):
    v = rng.normal(size=3)
    v -= v.dot(d) * d
    v /= np.linalg.norm(v)
    ang = rng.uniform(0.35, 1.0) * max_angle
    out = np.cos(ang) * d + np.sin(ang) * v
    return out / np.linalg.norm(out)


def _grow(rng, start, direction, length, depth, spec, allowed, lines):
    end = _clip_segment(start, start + direction * length, allowed)
    if end is None:
        return
    lines.append(np.stack([start, end]))
    if depth >= spec.branch_depth:
        return
    lo, hi = spec.branch_length
    for _ in range(2):
        d = _random_turn(rng, direction, np.deg2rad(50.0))
        _grow(rng, end, d, rng.uniform(lo, hi) * 0.8 ** depth, depth + 1, spec, allowed, lines)


def _rasterize(line, radius, allowed, out, value):
    a, b = line
    lo = np.maximum(np.floor(np.minimum(a, b) - radius - 1).astype(int), 0)
    hi = np.minimum(np.ceil(np.maximum(a, b) + radius + 1).astype(int), np.array(out.shape))
    zz, yy, xx = np.meshgrid(*[np.arange(l, h) + 0.5 for l, h in zip(lo, hi)], indexing="ij")
    pts = np.stack([zz, yy, xx], axis=-1)
    ab = b - a
    t = np.clip(((pts - a) @ ab) / max(ab @ ab, 1e-12), 0.0, 1.0)
    dist = np.linalg.norm(pts - (a + t[..., None] * ab), axis=-1)
    box = tuple(slice(l, h) for l, h in zip(lo, hi))
    sel = (dist <= radius) & allowed[box] & (out[box] == 0)
    out[box][sel] = value


def generate_phantom(spec: PhantomSpec | None = None, h: AnatomyHierarchy | None = None) -> PhantomBundle:
    spec = spec or PhantomSpec()
    h = h or hierarchy()
    rng = np.random.default_rng(spec.seed)
    lobes = lobe_labels(spec.size)
    bv = np.zeros(spec.size, dtype=np.uint8)
    skeletons: dict[int, list[np.ndarray]] = {}
    trunks, branches = [], []
    centre = np.array(spec.size) / 2.0

    for lid, members in enumerate(h.members, start=1):
        in_lobe = lobes == lid
        coords = np.argwhere(in_lobe) + 0.5
        if len(coords) < 4 * len(members):
            raise PhantomError(f"lobe {h.lobe_name(lid)} too small for its segments")
        # medial face: the lobe voxel closest to the mid-sagittal hilum line
        hilum = np.array([centre[0], centre[1], centre[2]])
        root = coords[np.argmin(np.linalg.norm(coords - hilum, axis=1))]

        centroids, assign = kmeans2(coords, len(members), seed=rng, minit="++")
        # stable segment order: sort territories by angle around the root
        order = np.argsort(np.arctan2(centroids[:, 1] - root[1], centroids[:, 0] - root[0]))
        for sid, k in zip(members, order):
            territory = np.zeros(spec.size, dtype=bool)
            cell = coords[assign == k]
            if len(cell) == 0:
                raise PhantomError(f"empty territory for {h.segment_name(sid)}")
            territory[tuple(np.floor(cell).astype(int).T)] = True
            target = cell[np.argmin(np.linalg.norm(cell - centroids[k], axis=1))]
            # start part of the way from the root so sibling trunks do not share voxels
            start = root + 0.35 * (target - root)
            start = cell[np.argmin(np.linalg.norm(cell - start, axis=1))]
            d = target - start
            dist = np.linalg.norm(d)
            lines: list[np.ndarray] = []
            if dist >= 1.0:
                end = _clip_segment(start, target, territory)
                if end is not None:
                    lines.append(np.stack([start, end]))
                    trunk_dir = d / dist
                    lo, hi = spec.branch_length
                    for _ in range(2):
                        b_dir = _random_turn(rng, trunk_dir, np.deg2rad(50.0))
                        _grow(rng, end, b_dir, rng.uniform(lo, hi), 1, spec, territory, lines)
            if not lines:
                lines.append(np.stack([start, start + 1e-6]))
            skeletons[sid] = lines
            trunks.append((sid, lines[0], in_lobe))
            branches.extend((sid, ln, in_lobe) for ln in lines[1:])

    for sid, line, allowed in trunks + branches:
        _rasterize(line, spec.tube_radius, allowed, bv, sid)

    for sid in range(1, h.n_segments + 1):
        if not np.any(bv == sid):
            raise PhantomError(f"segment {h.segment_name(sid)} rasterized to zero voxels")

    bv_vol = LabelVolume(bv, "bv_labels", spec.spacing)
    lobe_vol = LabelVolume(lobes, "lobe_labels", spec.spacing)
    derive_regions(bv_vol, lobe_vol, h)
    gt = synthesize_gt_by_distance(bv_vol, lobe_vol, h)
    return PhantomBundle(bv_vol, lobe_vol, gt, skeletons)


# ---------------------------------------------------------------------------
# nearest-structure ground truth


def _sq_dist_to(bv: np.ndarray, sid: int, spacing) -> np.ndarray:
    # exact squared distance recomputed from the nearest-feature indices
    _, idx = ndimage.distance_transform_edt(
        bv != sid, sampling=spacing, return_distances=True, return_indices=True
    )
    grid = np.indices(bv.shape)
    sp = np.asarray(spacing, dtype=np.float64).reshape(3, 1, 1, 1)
    return (((idx - grid) * sp) ** 2).sum(axis=0)


def synthesize_gt_by_distance(bv: LabelVolume, lobe: LabelVolume, h: AnatomyHierarchy | None = None,
                              threads: int = 1) -> LabelVolume:
    """Give every in-lobe voxel the id of the nearest tree voxel among its lobe's segments.

    Distances are Euclidean in millimetres (voxel offsets scaled by the
    spacing); ties go to the lowest segment id.
    """
    h = h or hierarchy()
    derive_regions(bv, lobe, h)
    b = np.asarray(bv.data)
    lo = np.asarray(lobe.data)
    out = np.zeros(b.shape, dtype=np.uint8)

    present = [int(s) for s in np.unique(b) if s > 0]
    dists = dict(zip(present, pmap(lambda s: _sq_dist_to(b, s, bv.spacing), present, threads)))

    for lid, members in enumerate(h.members, start=1):
        in_lobe = lo == lid
        if not in_lobe.any():
            continue
        have = [s for s in members if s in dists]
        if not have:
            raise ValueError(f"lobe {h.lobe_name(lid)} contains no tree voxels of its segments")
        stack = np.stack([dists[s][in_lobe] for s in have])
        out[in_lobe] = np.asarray(have, dtype=np.uint8)[np.argmin(stack, axis=0)]
    return LabelVolume(out, "segment_partition", bv.spacing)
