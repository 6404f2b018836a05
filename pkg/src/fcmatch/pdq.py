"""256-bit DCT-based perceptual hashing of raster images.

The pipeline is luminance extraction (Rec.601 weights), a two-pass box
filter cascade approximating a tent filter with decimation down to 64x64,
a 16x16 low-frequency slice of the orthonormal 2-D DCT-II that excludes
the DC row and column, and a strict greater-than-median bit threshold.
A gradient-energy quality score in [0, 100] flags featureless inputs.

Hashes of visually similar images land within a small Hamming distance of
each other; matching against a corpus is the job of `fcmatch.index`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedImageError
from .raster import DIHEDRAL_NAMES, LumaPlane, RasterImage, dihedral_transform

HASH_BITS = 256
OUTPUT_DIM = 16
PLANE_DIM = 64

# Coefficients this close to zero carry no image signal, only accumulated
# float rounding; snapping them keeps degenerate inputs (constant images)
# bit-identical across platforms.
_SNAP_EPS = 1e-8

_REC601 = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class PdqHash:
    """A 256-bit perceptual fingerprint plus a quality score in [0, 100].

    Bit k (k = 0..255) corresponds to DCT output cell (i, j) with k = 16*i + j
    and maps to the most-significant end of the hex encoding: bit 0 is the MSB
    of the first hex digit.
    """

    bits: int
    quality: int

    def __post_init__(self):
        if not (0 <= self.bits < (1 << HASH_BITS)):
            raise ValueError("bits out of 256-bit range")
        if not (0 <= self.quality <= 100):
            raise ValueError(f"quality {self.quality} out of [0, 100]")

    def to_hex(self) -> str:
        return format(self.bits, "064x")

    @classmethod
    def from_hex(cls, hex_str: str, quality: int = 100) -> "PdqHash":
        s = hex_str.strip().lower()
        if len(s) != 64:
            raise ValueError(f"hash hex must be 64 characters, got {len(s)}")
        return cls(bits=int(s, 16), quality=quality)

    def to_bytes(self) -> bytes:
        return self.bits.to_bytes(32, "big")

    @classmethod
    def from_bytes(cls, raw: bytes, quality: int = 100) -> "PdqHash":
        if len(raw) != 32:
            raise ValueError(f"hash must be 32 bytes, got {len(raw)}")
        return cls(bits=int.from_bytes(raw, "big"), quality=quality)

    def bit(self, k: int) -> int:
        if not (0 <= k < HASH_BITS):
            raise ValueError(f"bit index {k} out of range")
        return (self.bits >> (HASH_BITS - 1 - k)) & 1

    def popcount(self) -> int:
        return self.bits.bit_count()


@dataclass(frozen=True)
class DihedralSet:
    """Hashes of the eight square symmetries of one image, identity first."""

    hashes: tuple

    def __post_init__(self):
        if len(self.hashes) != 8:
            raise ValueError("a dihedral set holds exactly 8 hashes")

    def __getitem__(self, k: int) -> PdqHash:
        return self.hashes[k]

    def __iter__(self):
        return iter(self.hashes)

    def named(self) -> dict:
        return dict(zip(DIHEDRAL_NAMES, self.hashes))


def to_luma(img: RasterImage) -> LumaPlane:
    """Extract the luminance plane; grayscale passes through unchanged."""
    px = img.pixels().astype(np.float64)
    if img.channels == 1:
        samples = px[:, :, 0]
    else:
        r, g, b = _REC601
        samples = r * px[:, :, 0] + g * px[:, :, 1] + b * px[:, :, 2]
        # weighted sum can exceed 255 by float epsilon for white pixels
        samples = np.clip(samples, 0.0, 255.0)
    return LumaPlane(width=img.width, height=img.height, samples=samples)


def _window_size(in_dim: int, out_dim: int) -> int:
    return (in_dim + 2 * out_dim - 1) // (2 * out_dim)


def _box_filter(a: np.ndarray, window: int, axis: int) -> np.ndarray:
    """Running-average box filter with shrinking windows at the edges.

    Output position o averages input positions [o+h-window, o+h-1] clipped
    to the array, where h = (window + 2) // 2.
    """
    if window <= 1:
        return a
    moved = np.moveaxis(a, axis, -1)
    length = moved.shape[-1]
    h = (window + 2) // 2
    csum = np.zeros(moved.shape[:-1] + (length + 1,), dtype=np.float64)
    np.cumsum(moved, axis=-1, out=csum[..., 1:])
    idx = np.arange(length)
    lo = np.maximum(idx + h - window, 0)
    hi = np.minimum(idx + h - 1, length - 1)
    out = (csum[..., hi + 1] - csum[..., lo]) / (hi - lo + 1)
    return np.moveaxis(out, -1, axis)


def downsample64(luma: LumaPlane) -> LumaPlane:
    """Smooth with two box-filter passes per axis and decimate to 64x64."""
    win_rows = _window_size(luma.height, PLANE_DIM)
    win_cols = _window_size(luma.width, PLANE_DIM)
    buf = luma.samples
    for _ in range(2):
        buf = _box_filter(buf, win_cols, axis=1)
        buf = _box_filter(buf, win_rows, axis=0)
    rows = ((np.arange(PLANE_DIM) + 0.5) * luma.height / PLANE_DIM).astype(np.intp)
    cols = ((np.arange(PLANE_DIM) + 0.5) * luma.width / PLANE_DIM).astype(np.intp)
    picked = np.clip(buf[np.ix_(rows, cols)], 0.0, 255.0)
    return LumaPlane(width=PLANE_DIM, height=PLANE_DIM, samples=picked)


def _dct_matrix() -> np.ndarray:
    # Row f holds the orthonormal DCT-II basis vector for frequency f+1;
    # frequency 0 (DC) is deliberately absent.
    u = np.arange(PLANE_DIM)
    f = np.arange(1, OUTPUT_DIM + 1)
    return np.sqrt(2.0 / PLANE_DIM) * np.cos(
        (np.pi / (2 * PLANE_DIM)) * np.outer(f, 2 * u + 1)
    )


_DCT = _dct_matrix()


def dct16(block: LumaPlane) -> np.ndarray:
    """16x16 lowest-frequency AC slice of the 2-D DCT-II of a 64x64 plane.

    out[i][j] weights the samples by cosines of frequencies i+1 and j+1, so
    the DC component is excluded in both dimensions. The mean is subtracted
    before transforming; that leaves every AC coefficient mathematically
    unchanged while making constant inputs produce exact zeros.
    """
    if block.samples.shape != (PLANE_DIM, PLANE_DIM):
        raise MalformedImageError(
            f"dct16 needs a 64x64 plane, got {block.samples.shape}"
        )
    centered = block.samples - block.samples.mean()
    out = _DCT @ centered @ _DCT.T
    out[np.abs(out) <= _SNAP_EPS] = 0.0
    return out


def quality_score(block: LumaPlane) -> int:
    """Gradient energy of the 64x64 plane mapped onto [0, 100]."""
    s = block.samples
    grad = np.abs(np.diff(s, axis=1)).sum() + np.abs(np.diff(s, axis=0)).sum()
    q = int(100.0 * grad / (255.0 * PLANE_DIM * PLANE_DIM))
    return max(0, min(100, q))


def hash(img: RasterImage) -> PdqHash:  # shadows the builtin on purpose, like hashlib
    """Hash an image: bit 16*i+j is set iff dct16 cell (i, j) exceeds the median.

    Ties with the median (all-equal coefficients included) yield 0 bits, so a
    constant image hashes to all zeros with quality 0.
    """
    plane = downsample64(to_luma(img))
    coeffs = dct16(plane)
    median = float(np.median(coeffs))
    bits = 0
    for flag in (coeffs > median).ravel():
        bits = (bits << 1) | int(flag)
    return PdqHash(bits=bits, quality=quality_score(plane))


def dihedral_hashes(img: RasterImage) -> DihedralSet:
    """Hash all eight rotation/reflection variants; element 0 is hash(img)."""
    return DihedralSet(
        hashes=tuple(hash(dihedral_transform(img, k)) for k in range(8))
    )
