"""Raster image containers and the on-disk formats the toolkit accepts.

Three byte formats are supported:

* binary PGM ("P5"), 8-bit, maxval 255 -- grayscale
* binary PPM ("P6"), 8-bit, maxval 255 -- RGB
* raw luma: 8-byte little-endian width, 8-byte little-endian height,
  then width*height grayscale bytes

Decoding of compressed formats (JPEG/PNG) is deliberately out of the core;
transcode externally to one of the formats above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedImageError

MAX_DIMENSION = 1 << 16


@dataclass(frozen=True)
class RasterImage:
    """Decoded 8-bit raster, row-major samples, 1 (gray) or 3 (RGB) channels."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise MalformedImageError(f"channels must be 1 or 3, got {self.channels}")
        if not (1 <= self.width <= MAX_DIMENSION):
            raise MalformedImageError(f"width {self.width} out of range")
        if not (1 <= self.height <= MAX_DIMENSION):
            raise MalformedImageError(f"height {self.height} out of range")
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise MalformedImageError(
                f"data length {len(self.data)} != width*height*channels = {expected}"
            )

    def pixels(self) -> np.ndarray:
        """View the samples as a (height, width, channels) uint8 array."""
        arr = np.frombuffer(self.data, dtype=np.uint8)
        return arr.reshape(self.height, self.width, self.channels)


@dataclass(frozen=True)
class LumaPlane:
    """Real-valued luminance plane, samples in [0, 255], shape (height, width)."""

    width: int
    height: int
    samples: np.ndarray

    def __post_init__(self):
        if self.samples.shape != (self.height, self.width):
            raise MalformedImageError(
                f"sample shape {self.samples.shape} != ({self.height}, {self.width})"
            )
        if not np.all(np.isfinite(self.samples)):
            raise MalformedImageError("non-finite luminance sample")
        lo = float(self.samples.min())
        hi = float(self.samples.max())
        if lo < 0.0 or hi > 255.0:
            raise MalformedImageError(f"luminance out of [0, 255]: min={lo}, max={hi}")


def from_array(arr: np.ndarray) -> RasterImage:
    """Build a RasterImage from a (h, w) or (h, w, c) uint8-compatible array."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, np.newaxis]
    if a.ndim != 3:
        raise MalformedImageError(f"expected 2-D or 3-D array, got ndim={a.ndim}")
    a = np.clip(np.rint(a), 0, 255).astype(np.uint8) if a.dtype != np.uint8 else a
    h, w, c = a.shape
    return RasterImage(width=w, height=h, channels=c, data=a.tobytes())


# -- PNM (PGM/PPM) ------------------------------------------------------------


def _parse_pnm_header(data: bytes):
    """Return (magic, width, height, maxval, offset of first sample byte)."""
    if len(data) < 2 or data[:1] != b"P" or data[1:2] not in (b"5", b"6"):
        raise MalformedImageError("not a binary PGM/PPM file")
    magic = data[:2].decode("ascii")
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and '#' comment lines between header tokens
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise MalformedImageError(f"bad header token {token!r}")
        fields.append(int(token))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MalformedImageError("missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    return magic, width, height, maxval, pos


def decode_pnm(data: bytes) -> RasterImage:
    magic, width, height, maxval, pos = _parse_pnm_header(data)
    if maxval != 255:
        raise MalformedImageError(f"only maxval 255 supported, got {maxval}")
    channels = 1 if magic == "P5" else 3
    expected = width * height * channels
    body = data[pos:]
    if len(body) != expected:
        raise MalformedImageError(
            f"sample section is {len(body)} bytes, expected {expected}"
        )
    return RasterImage(width=width, height=height, channels=channels, data=body)


def encode_pnm(img: RasterImage) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + img.data


# -- raw luma ------------------------------------------------------------------


def decode_raw_luma(data: bytes) -> RasterImage:
    if len(data) < 16:
        raise MalformedImageError("raw luma file shorter than its 16-byte header")
    width = int.from_bytes(data[0:8], "little")
    height = int.from_bytes(data[8:16], "little")
    if not (1 <= width <= MAX_DIMENSION and 1 <= height <= MAX_DIMENSION):
        raise MalformedImageError(f"raw luma dimensions {width}x{height} out of range")
    body = data[16:]
    if len(body) != width * height:
        raise MalformedImageError(
            f"raw luma body is {len(body)} bytes, expected {width * height}"
        )
    return RasterImage(width=width, height=height, channels=1, data=body)


def encode_raw_luma(img: RasterImage) -> bytes:
    if img.channels != 1:
        raise MalformedImageError("raw luma format holds grayscale data only")
    return (
        img.width.to_bytes(8, "little") + img.height.to_bytes(8, "little") + img.data
    )


def decode_image(data: bytes) -> RasterImage:
    """Decode bytes in any supported format, sniffing by content."""
    if data[:2] in (b"P5", b"P6"):
        return decode_pnm(data)
    return decode_raw_luma(data)


def load_image(path) -> RasterImage:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


# -- dihedral transforms -------------------------------------------------------

# Order matches DihedralSet: identity, rotations, then the mirrored variants.
DIHEDRAL_NAMES = (
    "identity",
    "rotate90",
    "rotate180",
    "rotate270",
    "flip_horizontal",
    "flip_vertical",
    "transpose",
    "anti_transpose",
)


def dihedral_transform(img: RasterImage, k: int) -> RasterImage:
    """Apply the k-th of the eight square symmetries (rotations are CCW)."""
    px = img.pixels()
    if k == 0:
        return img
    if k == 1:
        out = np.rot90(px, 1)
    elif k == 2:
        out = np.rot90(px, 2)
    elif k == 3:
        out = np.rot90(px, 3)
    elif k == 4:
        out = px[:, ::-1]
    elif k == 5:
        out = px[::-1, :]
    elif k == 6:
        out = np.swapaxes(px, 0, 1)
    elif k == 7:
        out = np.swapaxes(px[::-1, ::-1], 0, 1)
    else:
        raise ValueError(f"dihedral index {k} out of range 0..7")
    out = np.ascontiguousarray(out)
    h, w, c = out.shape
    return RasterImage(width=w, height=h, channels=c, data=out.tobytes())
