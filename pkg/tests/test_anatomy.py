import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierseg.anatomy import (
    B,
    BV,
    L,
    ConsistencyError,
    derive_regions,
    hierarchy,
    lobe_consistency,
    lobe_probability,
    lobes_of_segments,
)
from hierseg.volume import LabelVolume, ProbabilityField

H = hierarchy()


def names(ids):
    return [H.segment_name(i) for i in ids]


def test_counts():
    assert H.n_segments == 18
    assert H.n_lobes == 5


def test_memberships_verbatim():
    assert names(H.members_of("LeftUpper")) == ["LS1/2", "LS3", "LS4", "LS5"]
    assert names(H.members_of("LeftLower")) == ["LS6", "LS7/8", "LS9", "LS10"]
    assert names(H.members_of("RightUpper")) == ["RS1", "RS2", "RS3"]
    assert names(H.members_of("RightMiddle")) == ["RS4", "RS5"]
    assert names(H.members_of("RightLower")) == ["RS6", "RS7", "RS8", "RS9", "RS10"]


def test_memberships_partition_segments():
    flat = [s for m in H.members for s in m]
    assert sorted(flat) == list(range(1, 19))


def test_lobe_of():
    assert H.lobe_name(H.lobe_of("LS6")) == "LeftLower"
    assert H.lobe_name(H.lobe_of("RS7")) == "RightLower"


def test_registry_json():
    rows = json.loads(H.registry_json())
    seg = [r for r in rows if r["level"] == "segment"]
    assert len(seg) == 18
    rs4 = next(r for r in seg if r["name"] == "RS4")
    assert rs4["lobe_of"] == H.lobe_id("RightMiddle")


def _vol(val, sem, shape=(2, 2, 2)):
    return LabelVolume(np.full(shape, val, np.uint8), sem)


def test_all_background():
    r = derive_regions(_vol(0, "bv_labels"), _vol(0, "lobe_labels"))
    assert np.all(r.tags == B)
    assert np.all(r.lobe_target == 0)


def test_bv_voxel_targets():
    bv = np.zeros((1, 1, 2), np.uint8)
    lobe = np.zeros((1, 1, 2), np.uint8)
    bv[0, 0, 0] = H.segment_id("RS4")
    lobe[0, 0, :] = H.lobe_id("RightMiddle")
    r = derive_regions(LabelVolume(bv, "bv_labels"), LabelVolume(lobe, "lobe_labels"))
    assert r.tags[0, 0, 0] == BV and r.tags[0, 0, 1] == L
    assert r.segment_target[0, 0, 0] == H.segment_id("RS4")
    assert r.segment_target[0, 0, 1] == 0
    assert list(r.lobe_target[0, 0]) == [H.lobe_id("RightMiddle")] * 2


def test_inconsistent_bv_raises():
    bv = _vol(H.segment_id("RS4"), "bv_labels", (1, 1, 1))
    lobe = _vol(H.lobe_id("LeftUpper"), "lobe_labels", (1, 1, 1))
    with pytest.raises(ConsistencyError, match=r"z=0, y=0, x=0"):
        derive_regions(bv, lobe)


def test_bv_outside_lobes_raises():
    with pytest.raises(ConsistencyError):
        derive_regions(_vol(3, "bv_labels", (1, 1, 1)), _vol(0, "lobe_labels", (1, 1, 1)))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        derive_regions(_vol(0, "bv_labels", (1, 1, 1)), _vol(0, "lobe_labels", (1, 1, 2)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_tags_partition_grid(seed):
    rng = np.random.default_rng(seed)
    lobe = rng.integers(0, 6, (4, 4, 4)).astype(np.uint8)
    bv = np.zeros_like(lobe)
    for idx in np.argwhere(lobe > 0):
        if rng.random() < 0.3:
            bv[tuple(idx)] = rng.choice(H.members_of(int(lobe[tuple(idx)])))
    r = derive_regions(LabelVolume(bv, "bv_labels"), LabelVolume(lobe, "lobe_labels"))
    assert set(np.unique(r.tags)) <= {B, BV, L}
    np.testing.assert_array_equal(r.tags == BV, bv > 0)
    np.testing.assert_array_equal(r.tags == B, lobe == 0)
    np.testing.assert_array_equal(r.lobe_target, lobe)


def test_lobe_probability_uniform():
    q = lobe_probability(ProbabilityField(np.full((19, 2, 2, 2), 1 / 19)))
    np.testing.assert_array_equal(q.data, np.full((6, 2, 2, 2), 1 / 19))
    for k, members in enumerate(H.members):
        assert np.all(q.witness[k] == members[0])


def test_lobe_probability_rs4_rs5():
    d = np.full((19, 1, 1, 1), 0.2 / 17)
    d[H.segment_id("RS4")] = 0.7
    d[H.segment_id("RS5")] = 0.1
    q = lobe_probability(ProbabilityField(d))
    k = H.lobe_id("RightMiddle")
    assert q.data[k, 0, 0, 0] == 0.7
    assert q.witness[k - 1, 0, 0, 0] == H.segment_id("RS4")


def test_lobe_probability_brute_force():
    rng = np.random.default_rng(5)
    d = rng.random((19, 3, 4, 5))
    d /= d.sum(axis=0)
    q = lobe_probability(ProbabilityField(d))
    np.testing.assert_array_equal(q.data[0], d[0])
    for z, y, x in np.ndindex(3, 4, 5):
        for k, members in enumerate(H.members, start=1):
            best = max(d[s, z, y, x] for s in members)
            assert q.data[k, z, y, x] == best
            w = q.witness[k - 1, z, y, x]
            assert d[w, z, y, x] == best and w in members
            for s in members:
                assert q.data[k, z, y, x] >= d[s, z, y, x]
    assert np.all(q.data.sum(axis=0) <= 1 + 1e-5)


def test_lobes_of_segments():
    seg = np.array([0, H.segment_id("RS7"), H.segment_id("LS1/2")], np.uint8).reshape(1, 1, 3)
    out = lobes_of_segments(LabelVolume(seg)).data.ravel()
    assert out.tolist() == [0, H.lobe_id("RightLower"), H.lobe_id("LeftUpper")]
    assert np.all(lobes_of_segments(LabelVolume(np.zeros((2, 2, 2), np.uint8))).data == 0)


def test_lobe_consistency_definition():
    rng = np.random.default_rng(8)
    lobe = rng.integers(0, 6, (4, 4, 4)).astype(np.uint8)
    seg = np.zeros_like(lobe)
    for idx in np.argwhere(lobe > 0):
        seg[tuple(idx)] = rng.choice(H.members_of(int(lobe[tuple(idx)])))
    seg_v, lobe_v = LabelVolume(seg), LabelVolume(lobe, "lobe_labels")
    inside = lobe > 0
    np.testing.assert_array_equal(lobes_of_segments(seg_v).data[inside], lobe[inside])
    assert lobe_consistency(seg_v, lobe_v) == 1.0
    seg[tuple(np.argwhere(inside)[0])] = 0
    assert lobe_consistency(LabelVolume(seg), lobe_v) == 1.0 - 1.0 / inside.sum()
