"""Raster decoding and deterministic bilinear resizing.

Images are held as immutable ``(height, width, 3)`` uint8 arrays in R, G, B
order.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptImage, DegenerateSize, UnsupportedFormat

WORKING_SIDE = 224
_SIGNATURES = (b"\x89PNG\r\n\x1a\n", b"\xff\xd8\xff", b"GIF8", b"BM", b"II*\x00", b"MM\x00*")


@dataclass(frozen=True, eq=False)
class ImageRgb:
    """Decoded 8-bit RGB raster.

    ``data`` is a read-only C-contiguous uint8 array of shape
    ``(height, width, 3)``.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.integer) and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        h, w = arr.shape[:2]
        if h < 2 or w < 2:
            raise DegenerateSize(f"image is {w}x{h}; both sides must be >= 2")
        if arr is self.data or np.shares_memory(arr, self.data):
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def channel(self, c: int) -> np.ndarray:
        return self.data[:, :, c]

    def __eq__(self, other):
        if not isinstance(other, ImageRgb):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    def __repr__(self):
        return f"ImageRgb(width={self.width}, height={self.height})"


def decode_image(raw: bytes) -> ImageRgb:
    """Decode PNG/JPEG (or any raster Pillow understands) into an ImageRgb.

    Grayscale inputs are replicated into three channels; alpha is dropped.
    """
    try:
        im = Image.open(io.BytesIO(raw))
    except UnidentifiedImageError as exc:
        if raw.startswith(_SIGNATURES):
            raise CorruptImage("image header is damaged or truncated") from exc
        raise UnsupportedFormat("unrecognised image format") from exc
    try:
        im.load()
    except (OSError, ValueError, SyntaxError) as exc:
        raise CorruptImage(f"failed to decode {im.format} data: {exc}") from exc

    if im.mode in ("1", "L", "LA", "I", "I;16", "F"):
        grey = np.asarray(im.convert("L"))
        arr = np.repeat(grey[:, :, None], 3, axis=2)
    else:
        arr = np.asarray(im.convert("RGB"))
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise DegenerateSize(f"image is {arr.shape[1]}x{arr.shape[0]}; both sides must be >= 2")
    return ImageRgb(arr)


def load_image(path) -> ImageRgb:
    return decode_image(Path(path).read_bytes())


def encode_png(img: ImageRgb) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img.data), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _source_coords(n_in: int, n_out: int):
    # half-pixel centres, clamped to the valid sample range
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: ImageRgb, side: int = WORKING_SIDE) -> ImageRgb:
    """Resize to ``side`` x ``side`` with bilinear interpolation.

    Results are rounded to the nearest integer (halves away from zero).
    """
    if side < 2:
        raise DegenerateSize(f"target side {side} < 2")
    if img.height == side and img.width == side:
        return img  # sample grid coincides with the source pixels
    src = img.data.astype(np.float64)
    y0, y1, wy = _source_coords(img.height, side)
    x0, x1, wx = _source_coords(img.width, side)
    wy = wy[:, None, None]
    wx = wx[None, :, None]

    p00 = src[y0][:, x0]
    p01 = src[y0][:, x1]
    p10 = src[y1][:, x0]
    p11 = src[y1][:, x1]
    top = (1.0 - wx) * p00 + wx * p01
    bottom = (1.0 - wx) * p10 + wx * p11
    out = (1.0 - wy) * top + wy * bottom
    out = np.floor(out + 0.5)
    return ImageRgb(np.clip(out, 0, 255).astype(np.uint8))
