from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierseg.metrics import count_holes, mapped_dice
from hierseg.volume import LabelVolume


# --- independent oracles ---------------------------------------------------


def holes_in_slice(mask2d) -> int:
    """Border-seeded flood fill of the complement; leftover components are holes."""
    rows, cols = len(mask2d), len(mask2d[0])
    comp = [[not mask2d[i][j] for j in range(cols)] for i in range(rows)]
    seen = [[False] * cols for _ in range(rows)]

    def fill(i0, j0):
        dq = deque([(i0, j0)])
        seen[i0][j0] = True
        while dq:
            i, j = dq.popleft()
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if 0 <= a < rows and 0 <= b < cols and comp[a][b] and not seen[a][b]:
                    seen[a][b] = True
                    dq.append((a, b))

    for i in range(rows):
        for j in range(cols):
            if (i in (0, rows - 1) or j in (0, cols - 1)) and comp[i][j] and not seen[i][j]:
                fill(i, j)
    holes = 0
    for i in range(rows):
        for j in range(cols):
            if comp[i][j] and not seen[i][j]:
                holes += 1
                fill(i, j)
    return holes


def oracle_holes(lab) -> int:
    total = 0
    for c in range(1, 19):
        mask = lab == c
        if not mask.any():
            continue
        for axis in range(3):
            for k in range(lab.shape[axis]):
                total += holes_in_slice(np.take(mask, k, axis=axis).tolist())
    return total


def oracle_mapped_dice(pred, gt):
    per = {}
    for c in range(1, 19):
        s = m = both = 0
        for v in np.ndindex(*gt.shape):
            g = gt[v]
            mv = pred[v] if g > 0 else 0
            s += g == c
            m += mv == c
            both += (g == c) and (mv == c)
        if s:
            per[c] = 2 * both / (s + m)
    return per


def random_label_volume(rng, n=16):
    k = int(rng.integers(1, 5))
    classes = rng.choice(np.arange(1, 19), size=k, replace=False)
    palette = np.concatenate([[0], classes])
    if rng.random() < 0.5:
        # coarse blobs with speckle: produces enclosed cavities
        coarse = rng.integers(0, len(palette), (4, 4, 4))
        lab = palette[np.kron(coarse, np.ones((4, 4, 4), int))]
        speck = rng.random(lab.shape) < 0.08
        lab[speck] = rng.choice(palette, size=speck.sum())
    else:
        lab = rng.choice(palette, size=(n, n, n), p=None)
    return lab.astype(np.uint8)


# --- count_holes -----------------------------------------------------------


def test_solid_cuboid_no_holes():
    lab = np.zeros((8, 8, 8), np.uint8)
    lab[2:6, 1:7, 3:5] = 4
    assert count_holes(LabelVolume(lab)).total == 0


def test_block_with_cavity():
    lab = np.full((3, 3, 3), 5, np.uint8)
    lab[1, 1, 1] = 0
    rep = count_holes(LabelVolume(lab))
    assert rep.total == 3
    assert rep.per_axis == {"z": 1, "y": 1, "x": 1}
    assert rep.per_class == {5: 3}


def test_background_not_evaluated():
    lab = np.zeros((3, 3, 3), np.uint8)
    lab[1, 1, 1] = 7  # a hole in background, not in any class
    assert count_holes(LabelVolume(lab)).total == 0


def test_diagonal_foreground_encloses():
    # 8-connected ring of foreground encloses a 4-connected complement pixel
    sl = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], np.uint8) * 3
    lab = sl[None]
    assert holes_in_slice((lab[0] == 3).tolist()) == 1
    assert count_holes(LabelVolume(lab)).per_axis["z"] == 1


@pytest.mark.parametrize("seed", range(3))
def test_holes_report_totals(seed):
    lab = random_label_volume(np.random.default_rng(seed))
    rep = count_holes(LabelVolume(lab))
    assert rep.total == sum(rep.per_axis.values()) == sum(rep.per_class.values())


def test_holes_match_oracle_small_batch():
    rng = np.random.default_rng(99)
    for _ in range(20):
        lab = random_label_volume(rng, 16)
        assert count_holes(LabelVolume(lab)).total == oracle_holes(lab)


def test_holes_threads_identical():
    lab = random_label_volume(np.random.default_rng(4))
    assert count_holes(LabelVolume(lab), threads=4) == count_holes(LabelVolume(lab))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_holes_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    lab = random_label_volume(rng, 10)
    perm = np.concatenate([[0], rng.permutation(np.arange(1, 19))]).astype(np.uint8)
    assert count_holes(LabelVolume(perm[lab])).total == count_holes(LabelVolume(lab)).total


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_enclosed_cavity_adds_three(seed):
    rng = np.random.default_rng(seed)
    lab = np.zeros((12, 12, 12), np.uint8)
    lo = rng.integers(0, 3, 3)
    hi = lo + rng.integers(5, 9, 3)
    c = int(rng.integers(1, 19))
    lab[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = c
    base = count_holes(LabelVolume(lab)).total
    cav = [int(rng.integers(a + 1, b - 1)) for a, b in zip(lo, hi)]
    lab[tuple(cav)] = 0
    assert count_holes(LabelVolume(lab)).total == base + 3


# --- mapped_dice -----------------------------------------------------------


def test_mapped_dice_perfect():
    gt = np.zeros((4, 4, 4), np.uint8)
    gt[1, :, 1] = 3
    gt[2, :, 2] = 9
    pred = np.zeros_like(gt)
    pred[:2] = 3
    pred[2:] = 9
    rep = mapped_dice(LabelVolume(pred), LabelVolume(gt, "bv_labels"))
    assert rep.mean == 1.0
    assert rep.classes_evaluated == [3, 9]


def test_mapped_dice_total_miss():
    gt = np.zeros((2, 2, 2), np.uint8)
    gt[0] = 4
    gt[1] = 6
    pred = np.zeros_like(gt)
    pred[0] = 5  # every class-4 structure voxel goes to 5
    pred[1] = 6
    rep = mapped_dice(LabelVolume(pred), LabelVolume(gt, "bv_labels"))
    assert rep.per_class[4] == 0.0
    assert rep.per_class[6] == 1.0


def test_mapped_dice_empty_structure_raises():
    z = LabelVolume(np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(ValueError):
        mapped_dice(z, z)


@pytest.mark.parametrize("seed", range(5))
def test_mapped_dice_brute_force(seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 19, (8, 8, 8)).astype(np.uint8)
    gt[rng.random(gt.shape) < 0.5] = 0
    pred = rng.integers(0, 19, (8, 8, 8)).astype(np.uint8)
    rep = mapped_dice(LabelVolume(pred), LabelVolume(gt, "bv_labels"))
    expect = oracle_mapped_dice(pred, gt)
    assert rep.per_class == expect
    assert rep.mean == pytest.approx(sum(expect.values()) / len(expect), abs=1e-15)
    assert 0.0 <= rep.mean <= 1.0


def test_report_json_uses_names():
    gt = np.zeros((2, 2, 2), np.uint8)
    gt[0, 0, 0] = 12
    rep = mapped_dice(LabelVolume(gt), LabelVolume(gt, "bv_labels"))
    assert rep.to_dict()["per_class"] == {"RS4": 1.0}
