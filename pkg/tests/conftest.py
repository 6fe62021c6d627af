import numpy as np
import pytest

from hierseg.anatomy import derive_regions, hierarchy
from hierseg.volume import LabelVolume


def random_regions(rng, n=6, bv_frac=0.3, lobe_ids=(0, 1, 2, 3, 4, 5)):
    """Random consistent (bv, lobe) pair and its region partition."""
    h = hierarchy()
    lobe = rng.choice(lobe_ids, size=(n, n, n)).astype(np.uint8)
    bv = np.zeros_like(lobe)
    for idx in np.argwhere(lobe > 0):
        if rng.random() < bv_frac:
            bv[tuple(idx)] = rng.choice(h.members_of(int(lobe[tuple(idx)])))
    if not bv.any():
        idx = tuple(np.argwhere(lobe > 0)[0])
        bv[idx] = h.members_of(int(lobe[idx]))[0]
    bv_v, lobe_v = LabelVolume(bv, "bv_labels"), LabelVolume(lobe, "lobe_labels")
    return bv_v, lobe_v, derive_regions(bv_v, lobe_v)


def random_probs(rng, shape, scale=1.0):
    z = rng.normal(0.0, scale, size=shape)
    e = np.exp(z - z.max(axis=0))
    return e / e.sum(axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
