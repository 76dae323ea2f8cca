"""Dense per-minutia descriptors: assembly, binarization, template files.

A descriptor is a (2C, 8, 8) feature volume over its patch: C texture
channels stacked on C minutia-context channels, multiplied by a soft 8x8
segmentation mask broadcast across channels. Cells outside the mask are
therefore exactly zero.

Flattening order everywhere (floats and bits alike) is channel-major, then
row, then column: flat index = ch*64 + row*8 + col. Bits pack LSB first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Minutia

MAGIC = b"DMD1"
FORMAT_FLOAT = 0
FORMAT_BINARY = 1

DESC_GRID = 8
OVERLAP_GRID = 64
H_O_REFERENCE = 1326.0


@dataclass(frozen=True)
class DescriptorConfig:
    channels: int = 6  # C; the descriptor holds 2C feature channels
    grid: int = DESC_GRID
    patch_size: int = 128
    overlap_grid: int = OVERLAP_GRID
    h_o_reference: float = H_O_REFERENCE

    def __post_init__(self):
        if not (1 <= self.channels <= 255):
            raise ValueError("channels must fit in a byte")
        if self.grid != DESC_GRID:
            raise ValueError("descriptor grid is fixed at 8")
        if self.overlap_grid % self.grid != 0:
            raise ValueError("overlap grid must be a multiple of the descriptor grid")
        if self.h_o_reference <= 0:
            raise ValueError("h_o_reference must be positive")

    @property
    def cells(self) -> int:
        return self.grid * self.grid

    @property
    def feature_channels(self) -> int:
        return 2 * self.channels


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DenseDescriptor:
    """Float descriptor: (2C, 8, 8) features, (8, 8) soft mask, anchor."""

    anchor: Minutia
    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        h = np.asarray(self.mask, dtype=float)
        if f.ndim != 3 or f.shape[1:] != (DESC_GRID, DESC_GRID) or f.shape[0] % 2 != 0:
            raise ValueError("features must be (2C, 8, 8)")
        if h.shape != (DESC_GRID, DESC_GRID):
            raise ValueError("mask must be (8, 8)")
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(h)):
            raise ValueError("descriptor entries must be finite")
        if h.min() < 0.0 or h.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
        if np.any(f[:, h == 0.0] != 0.0):
            raise ValueError("features must be zero outside the mask")
        object.__setattr__(self, "features", _frozen(f))
        object.__setattr__(self, "mask", _frozen(h))

    @property
    def channels(self) -> int:
        return self.features.shape[0] // 2


@dataclass(frozen=True, eq=False)
class BinaryDescriptor:
    """Binarized descriptor: 2C*64 feature bits plus 64 mask bits."""

    anchor: Minutia
    feature_bits: np.ndarray  # packed uint8, LSB first
    mask_bits: np.ndarray  # packed uint8, 8 bytes
    channels: int

    def __post_init__(self):
        fb = np.asarray(self.feature_bits, dtype=np.uint8)
        mb = np.asarray(self.mask_bits, dtype=np.uint8)
        if fb.shape != (2 * self.channels * 64 // 8,):
            raise ValueError("feature bit payload has the wrong size")
        if mb.shape != (8,):
            raise ValueError("mask bit payload must be 8 bytes")
        object.__setattr__(self, "feature_bits", _frozen(fb, np.uint8))
        object.__setattr__(self, "mask_bits", _frozen(mb, np.uint8))

    def feature_signs(self) -> np.ndarray:
        """Unpacked bits as +-1 floats, shape (2C, 8, 8)."""
        bits = np.unpackbits(self.feature_bits, bitorder="little")
        return (bits.astype(float) * 2.0 - 1.0).reshape(2 * self.channels, DESC_GRID, DESC_GRID)

    def mask_grid(self) -> np.ndarray:
        """Unpacked mask bits as a boolean (8, 8) grid."""
        bits = np.unpackbits(self.mask_bits, bitorder="little")
        return bits.reshape(DESC_GRID, DESC_GRID).astype(bool)


def assemble_dmd(f_t: np.ndarray, f_m: np.ndarray, h: np.ndarray, anchor: Minutia,
                 cfg: DescriptorConfig = DescriptorConfig()) -> DenseDescriptor:
    """Stack texture and minutia-context channels and apply the mask."""
    f_t = np.asarray(f_t, dtype=float)
    f_m = np.asarray(f_m, dtype=float)
    h = np.asarray(h, dtype=float)
    expected = (cfg.channels, cfg.grid, cfg.grid)
    if f_t.shape != expected or f_m.shape != expected:
        raise ValueError(f"feature blocks must have shape {expected}")
    if h.shape != (cfg.grid, cfg.grid):
        raise ValueError("mask must be (8, 8)")
    if not (np.all(np.isfinite(f_t)) and np.all(np.isfinite(f_m)) and np.all(np.isfinite(h))):
        raise ValueError("inputs must be finite")
    features = np.concatenate([f_t, f_m], axis=0) * h[None, :, :]
    return DenseDescriptor(anchor, features, h)


def binarize(d: DenseDescriptor) -> BinaryDescriptor:
    """Sign-binarize: feature bit 1 iff value >= 0, mask bit 1 iff >= 0.5."""
    fbits = (d.features.reshape(-1) >= 0.0)
    mbits = (d.mask.reshape(-1) >= 0.5)
    return BinaryDescriptor(
        d.anchor,
        np.packbits(fbits, bitorder="little"),
        np.packbits(mbits, bitorder="little"),
        d.channels,
    )


def upsample_mask(mask: np.ndarray, grid: int = OVERLAP_GRID) -> np.ndarray:
    """Bilinear upsample of an (8, 8) mask onto the overlap grid.

    Output cell centers map back through (i + 0.5) / factor - 0.5 with edge
    clamping, the usual resize-with-aligned-cell-centers convention.
    """
    m = np.asarray(mask, dtype=float)
    if m.shape != (DESC_GRID, DESC_GRID):
        raise ValueError("mask must be (8, 8)")
    factor = grid / DESC_GRID
    coords1d = (np.arange(grid) + 0.5) / factor - 0.5
    yy, xx = np.meshgrid(coords1d, coords1d, indexing="ij")
    return ndimage.map_coordinates(m, np.stack([yy, xx]), order=1, mode="nearest")


def mask_board(mask: np.ndarray, grid: int = OVERLAP_GRID) -> np.ndarray:
    """Boolean overlap board: upsampled mask thresholded at 0.5."""
    return upsample_mask(mask, grid) >= 0.5


# ---------------------------------------------------------------------------
# template container and file format

_HEADER = struct.Struct("<4sBBHI")
_RECORD_HEAD = struct.Struct("<fff")


@dataclass(frozen=True, eq=False)
class Template:
    """An ordered set of descriptors for one fingerprint."""

    records: tuple
    channels: int
    binary: bool

    def __post_init__(self):
        want = BinaryDescriptor if self.binary else DenseDescriptor
        for r in self.records:
            if not isinstance(r, want):
                raise TypeError(f"expected {want.__name__} records")
            if r.channels != self.channels:
                raise ValueError("record channel count does not match the template")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


_TWO_PI_F32 = np.float32(2.0 * np.pi)


def _theta32(theta: float) -> float:
    """float32 theta kept strictly below 2pi so reload-normalize is a no-op."""
    t = np.float32(theta)
    if t >= _TWO_PI_F32:
        t = np.nextafter(_TWO_PI_F32, np.float32(0.0))
    return float(t)


def template_to_bytes(t: Template) -> bytes:
    chunks = [_HEADER.pack(MAGIC, FORMAT_BINARY if t.binary else FORMAT_FLOAT,
                           t.channels, 0, len(t.records))]
    for r in t.records:
        a = r.anchor
        chunks.append(_RECORD_HEAD.pack(a.x, a.y, _theta32(a.theta)))
        if t.binary:
            chunks.append(r.feature_bits.tobytes())
            chunks.append(r.mask_bits.tobytes())
        else:
            chunks.append(r.features.astype("<f4").tobytes())
            chunks.append(r.mask.astype("<f4").tobytes())
    return b"".join(chunks)


def template_from_bytes(data: bytes) -> Template:
    if len(data) < _HEADER.size:
        raise ValueError("template file truncated")
    magic, fmt, channels, _reserved, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"bad template magic {magic!r}")
    if fmt not in (FORMAT_FLOAT, FORMAT_BINARY):
        raise ValueError(f"unsupported template format code {fmt}")
    if channels < 1:
        raise ValueError("template declares zero channels")
    binary = fmt == FORMAT_BINARY
    nfeat = 2 * channels * 64
    payload = nfeat // 8 + 8 if binary else 4 * (nfeat + 64)
    rec_size = _RECORD_HEAD.size + payload
    if len(data) != _HEADER.size + count * rec_size:
        raise ValueError("template length does not match its header")
    records = []
    off = _HEADER.size
    for _ in range(count):
        x, y, theta = _RECORD_HEAD.unpack_from(data, off)
        off += _RECORD_HEAD.size
        anchor = Minutia(float(x), float(y), float(theta))
        if binary:
            fb = np.frombuffer(data, np.uint8, nfeat // 8, off)
            mb = np.frombuffer(data, np.uint8, 8, off + nfeat // 8)
            records.append(BinaryDescriptor(anchor, fb.copy(), mb.copy(), channels))
        else:
            f = np.frombuffer(data, "<f4", nfeat, off).astype(float)
            h = np.frombuffer(data, "<f4", 64, off + 4 * nfeat).astype(float)
            records.append(DenseDescriptor(anchor, f.reshape(2 * channels, 8, 8),
                                           h.reshape(8, 8)))
        off += payload
    return Template(tuple(records), channels, binary)


def save_template(path, t: Template) -> None:
    with open(path, "wb") as fh:
        fh.write(template_to_bytes(t))


def load_template(path) -> Template:
    with open(path, "rb") as fh:
        return template_from_bytes(fh.read())
