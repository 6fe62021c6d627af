"""Dense voxel containers, the ``svol`` on-disk format and per-voxel maps.

Real-valued fields are stored channel-first in C order ``(c, z, y, x)``;
label volumes are ``(z, y, x)`` arrays of small unsigned class ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SVOL_MAGIC = b"SVOL1\n"

#: Declared class count per label semantics.
LABEL_CLASS_COUNTS = {"bv_labels": 19, "segment_partition": 19, "lobe_labels": 6}

AXES = {"z": 0, "y": 1, "x": 2}


class SvolError(ValueError):
    """Base class for malformed ``svol`` files."""


class SvolHeaderError(SvolError):
    pass


class SvolPayloadError(SvolError):
    pass


class SvolDtypeError(SvolError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    view = a.view()
    view.flags.writeable = False
    return view


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(s > 0 for s in spacing):
        raise ValueError(f"spacing must be three positive reals, got {spacing}")
    return spacing


@dataclass(frozen=True)
class GridShape:
    channels: int
    depth: int
    height: int
    width: int
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = (self.channels, self.depth, self.height, self.width)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.depth, self.height, self.width)

    @property
    def n_voxels(self) -> int:
        return self.depth * self.height * self.width


@dataclass(frozen=True, eq=False)
class ScalarField4D:
    """A ``C x D x H x W`` real field (logits, probabilities, gradients)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    semantics: str = "field"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise ValueError(f"expected a 4D (c, z, y, x) array, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        GridShape(*data.shape, spacing=self.spacing)

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.data.shape, spacing=self.spacing)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def __eq__(self, other):
        if not isinstance(other, ScalarField4D):
            return NotImplemented
        return (
            self.semantics == other.semantics
            and self.spacing == other.spacing
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


class ProbabilityField(ScalarField4D):
    """A field whose channels are non-negative and sum to one at every voxel."""

    def __post_init__(self):
        super().__post_init__()
        d = self.data
        if np.any(d < 0):
            raise ValueError("probabilities must be non-negative")
        s = d.sum(axis=0, dtype=np.float64)
        if np.max(np.abs(s - 1.0)) > 1e-5:
            raise ValueError("channel probabilities do not sum to 1 within 1e-5")


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """A ``D x H x W`` categorical volume."""

    data: np.ndarray
    semantics: str = "segment_partition"
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.semantics not in LABEL_CLASS_COUNTS:
            raise ValueError(f"unknown label semantics {self.semantics!r}")
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected a 3D (z, y, x) array, got shape {data.shape}")
        if data.size and (data.min() < 0 or data.max() >= LABEL_CLASS_COUNTS[self.semantics]):
            raise ValueError(
                f"{self.semantics} ids must lie in [0, {LABEL_CLASS_COUNTS[self.semantics]})"
            )
        object.__setattr__(self, "data", _frozen(data.astype(np.uint8, copy=False)))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        GridShape(1, *data.shape, spacing=self.spacing)

    @property
    def shape(self) -> GridShape:
        return GridShape(1, *self.data.shape, spacing=self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_classes(self) -> int:
        return LABEL_CLASS_COUNTS[self.semantics]

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.semantics == other.semantics
            and self.spacing == other.spacing
            and np.array_equal(self.data, other.data)
        )


# ---------------------------------------------------------------------------
# svol I/O


def write_svol(volume, path) -> None:
    """Write a volume as magic bytes, a JSON header line, then the raw payload."""
    if isinstance(volume, LabelVolume):
        dtype, channels = "u8", 1
        payload = np.ascontiguousarray(volume.data, dtype="<u1")
    elif isinstance(volume, ScalarField4D):
        dtype, channels = "f32", volume.channels
        payload = np.ascontiguousarray(volume.data, dtype="<f4")
    else:
        raise TypeError(f"cannot write {type(volume).__name__} as svol")
    header = {
        "dims": [int(d) for d in volume.dims],
        "channels": int(channels),
        "dtype": dtype,
        "spacing": [float(s) for s in volume.spacing],
        "semantics": volume.semantics,
    }
    with open(path, "wb") as fh:
        fh.write(SVOL_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(payload.tobytes(order="C"))


def read_svol(path):
    """Read an ``svol`` file into a :class:`LabelVolume` or :class:`ScalarField4D`."""
    raw = Path(path).read_bytes()
    if not raw.startswith(SVOL_MAGIC):
        raise SvolHeaderError(f"{path}: missing SVOL1 magic bytes")
    end = raw.find(b"\n", len(SVOL_MAGIC))
    if end < 0:
        raise SvolHeaderError(f"{path}: unterminated header line")
    try:
        header = json.loads(raw[len(SVOL_MAGIC):end].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SvolHeaderError(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise SvolHeaderError(f"{path}: header must be a JSON object")
    missing = {"dims", "channels", "dtype", "spacing", "semantics"} - set(header)
    if missing:
        raise SvolHeaderError(f"{path}: header missing keys {sorted(missing)}")
    dims, channels = header["dims"], header["channels"]
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d >= 1 for d in dims)
        or not isinstance(channels, int)
        or channels < 1
    ):
        raise SvolHeaderError(f"{path}: bad dims/channels {dims!r}/{channels!r}")

    dtype = header["dtype"]
    if dtype == "u8":
        np_dtype = np.dtype("<u1")
    elif dtype == "f32":
        np_dtype = np.dtype("<f4")
    else:
        raise SvolDtypeError(f"{path}: unknown dtype {dtype!r}")

    payload = raw[end + 1:]
    n = channels * dims[0] * dims[1] * dims[2]
    if len(payload) != n * np_dtype.itemsize:
        raise SvolPayloadError(
            f"{path}: header declares {n} values ({n * np_dtype.itemsize} bytes) "
            f"but payload has {len(payload)} bytes"
        )
    data = np.frombuffer(payload, dtype=np_dtype).copy()
    spacing = tuple(header["spacing"])
    if dtype == "u8" and channels != 1:
        raise SvolHeaderError(f"{path}: label volumes must have 1 channel")
    try:
        if dtype == "u8":
            return LabelVolume(data.reshape(dims), header["semantics"], spacing)
        return ScalarField4D(data.reshape([channels] + dims), spacing, header["semantics"])
    except (TypeError, ValueError) as exc:
        raise SvolHeaderError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# per-voxel maps


def softmax_channels(logits: ScalarField4D) -> ProbabilityField:
    z = np.asarray(logits.data, dtype=np.float64)
    if z.shape[0] < 2:
        raise ValueError("softmax needs at least 2 channels")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    e = np.exp(z - z.max(axis=0, keepdims=True))
    e /= e.sum(axis=0, keepdims=True)
    return ProbabilityField(e, logits.spacing, "probabilities")


def argmax_labels(probs: ScalarField4D, semantics: str = "segment_partition") -> LabelVolume:
    """Per-voxel index of the largest channel; ties go to the lowest index."""
    return LabelVolume(np.argmax(probs.data, axis=0).astype(np.uint8), semantics, probs.spacing)


def label_gray_ramp(ids) -> np.ndarray:
    return np.round(255.0 * np.asarray(ids, dtype=np.float64) / 18.0).astype(np.uint8)


def export_slice_pgm(volume, axis: str, index: int, path, channel: int = 0) -> None:
    """Write one axis-aligned slice as a binary 8-bit PGM (P5)."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of z, y, x, got {axis!r}")
    ax = AXES[axis]
    if isinstance(volume, LabelVolume):
        if channel != 0:
            raise ValueError(f"label volumes have a single channel, got channel {channel}")
        vol = volume.data
    else:
        if not 0 <= channel < volume.channels:
            raise ValueError(f"channel {channel} out of range [0, {volume.channels})")
        vol = volume.data[channel]
    if not 0 <= index < vol.shape[ax]:
        raise ValueError(f"index {index} out of range for axis {axis} of size {vol.shape[ax]}")
    sl = np.take(vol, index, axis=ax)

    if isinstance(volume, LabelVolume):
        img = label_gray_ramp(sl)
    else:
        sl = sl.astype(np.float64)
        lo, hi = sl.min(), sl.max()
        if hi > lo:
            img = np.round(255.0 * (sl - lo) / (hi - lo)).astype(np.uint8)
        else:
            img = np.full(sl.shape, 128, dtype=np.uint8)

    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
