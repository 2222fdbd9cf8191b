"""Depth containers and codecs: PFM, 8-bit grayscale PNG, KITTI point-cloud bins.

Depth maps use 0 as the "no reading" sentinel. Quantization truncates at
``max_range`` and scales linearly to 0..255, rounding half away from zero.
"""

from __future__ import annotations

import io
import logging
import re
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image, PngImagePlugin

from .errors import DataError, FormatError, LengthError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_MAX_RANGE = 10.0
RANGE_KEY = "depth:max_range"
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Dense metric depth, ``values[row, col]`` in meters, top row first."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"depth map must be a non-empty 2D array, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.floating):
            v = v.astype(np.float64)
        if not np.all(np.isfinite(v)):
            raise ValidationError("depth values must be finite")
        if np.any(v < 0):
            raise ValidationError("depth values must be >= 0")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return self.values.shape == other.values.shape and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class QuantizedDepth:
    levels: np.ndarray
    max_range: float = DEFAULT_MAX_RANGE

    def __post_init__(self):
        lv = np.asarray(self.levels)
        if lv.ndim != 2 or lv.size == 0:
            raise ValidationError(f"levels must be a non-empty 2D array, got shape {lv.shape}")
        if lv.dtype != np.uint8:
            if np.any(lv < 0) or np.any(lv > 255) or np.any(lv != np.floor(lv)):
                raise ValidationError("levels must be integers in 0..255")
            lv = lv.astype(np.uint8)
        if not (np.isfinite(self.max_range) and self.max_range > 0):
            raise ValidationError("max_range must be positive and finite")
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "max_range", float(self.max_range))

    @property
    def width(self) -> int:
        return self.levels.shape[1]

    @property
    def height(self) -> int:
        return self.levels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, QuantizedDepth):
            return NotImplemented
        return self.max_range == other.max_range and np.array_equal(self.levels, other.levels)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``xyz`` is (N, 3) in meters; ``intensity`` is (N,) or None.

    Held as float64 in memory; the KITTI codec stores float32, so clouds read
    from disk round-trip bit-exactly.
    """

    xyz: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(xyz)):
            raise ValidationError("point coordinates must be finite")
        object.__setattr__(self, "xyz", xyz)
        if self.intensity is not None:
            it = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if len(it) != len(xyz):
                raise ValidationError("intensity length differs from point count")
            object.__setattr__(self, "intensity", it)

    def __len__(self):
        return len(self.xyz)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        a = self.intensity if self.intensity is not None else np.zeros(len(self))
        b = other.intensity if other.intensity is not None else np.zeros(len(other))
        return (self.xyz.tobytes() == other.xyz.tobytes()) and (a.tobytes() == b.tobytes())


# -- PFM ---------------------------------------------------------------------

_PFM_HEADER = re.compile(rb"\A(P[fF])\s(\d+)\s(\d+)\s([-+0-9.eE]+)\s")


def read_pfm(data: bytes) -> DepthMap:
    """Parse a grayscale PFM byte string into a top-to-bottom DepthMap."""
    if data[:2] == b"PF":
        raise FormatError("color PFM (PF) is not supported; expected grayscale Pf")
    if data[:2] != b"Pf":
        raise FormatError(f"not a grayscale PFM: magic {data[:2]!r}")
    m = _PFM_HEADER.match(data)
    if m is None:
        raise FormatError("malformed PFM header")
    width, height = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as e:
        raise FormatError(f"malformed PFM scale {m.group(4)!r}") from e
    if width < 1 or height < 1:
        raise FormatError("PFM dimensions must be positive")
    if scale == 0 or not np.isfinite(scale):
        raise FormatError("PFM scale must be nonzero")
    dtype = "<f4" if scale < 0 else ">f4"
    n = width * height
    payload = data[m.end():]
    if len(payload) < 4 * n:
        raise LengthError(f"PFM payload holds {len(payload)} bytes, need {4 * n}")
    if len(payload) > 4 * n:
        raise LengthError(f"PFM payload has {len(payload) - 4 * n} trailing bytes")
    vals = np.frombuffer(payload, dtype=dtype, count=n).astype(np.float32)
    if not np.all(np.isfinite(vals)):
        raise DataError("PFM contains non-finite samples")
    neg = vals < 0
    if neg.any():
        logger.warning("read_pfm: clamped %d negative samples to 0", int(neg.sum()))
        vals = np.where(neg, np.float32(0), vals)
    vals = vals.reshape(height, width)[::-1].copy()
    return DepthMap(vals)


def write_pfm(m: DepthMap) -> bytes:
    header = f"Pf\n{m.width} {m.height}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(m.values[::-1], dtype="<f4").tobytes()
    return header + body


# -- quantization ------------------------------------------------------------

def quantize_depth(m: DepthMap, max_range: float = DEFAULT_MAX_RANGE) -> QuantizedDepth:
    if not (max_range > 0 and np.isfinite(max_range)):
        raise ValidationError("max_range must be positive and finite")
    return QuantizedDepth(quantize_values(m.values, max_range), max_range)


def quantize_values(values, max_range: float = DEFAULT_MAX_RANGE) -> np.ndarray:
    """Elementwise level for nonnegative depths; returns uint8 of the same shape."""
    v = np.minimum(np.asarray(values, dtype=np.float64), max_range) / max_range * 255.0
    # inputs are >= 0, so rounding half up is half-away-from-zero; v - floor(v)
    # is exact, unlike floor(v + 0.5)
    f = np.floor(v)
    return (f + (v - f >= 0.5)).astype(np.uint8)


def dequantize_depth(q: QuantizedDepth) -> DepthMap:
    return DepthMap(q.levels.astype(np.float64) / 255.0 * q.max_range)


# -- KITTI bin ---------------------------------------------------------------

def read_kitti_bin(data: bytes) -> PointCloud:
    if len(data) % 16:
        raise FormatError(f"KITTI bin length {len(data)} is not a multiple of 16")
    rec = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    if not np.all(np.isfinite(rec[:, :3])):
        raise DataError("KITTI bin contains non-finite coordinates")
    intensity = rec[:, 3].copy()
    bad = np.isnan(intensity)
    if bad.any():
        logger.warning("read_kitti_bin: replaced %d NaN intensities with 0", int(bad.sum()))
        intensity[bad] = 0.0
    return PointCloud(rec[:, :3].copy(), intensity)


def write_kitti_bin(c: PointCloud) -> bytes:
    rec = np.zeros((len(c), 4), dtype="<f4")
    rec[:, :3] = c.xyz
    if c.intensity is not None:
        rec[:, 3] = c.intensity
    return rec.tobytes()


# -- PNG8 --------------------------------------------------------------------

def _png_ihdr(data: bytes) -> tuple[int, int, int, int, int]:
    if data[:8] != PNG_SIGNATURE:
        raise FormatError("not a PNG file")
    if len(data) < 33 or data[12:16] != b"IHDR":
        raise FormatError("PNG missing IHDR chunk")
    width, height, bit_depth, color_type, _, _, interlace = struct.unpack(">IIBBBBB", data[16:29])
    if zlib.crc32(data[12:29]) != struct.unpack(">I", data[29:33])[0]:
        raise FormatError("PNG IHDR checksum mismatch")
    return width, height, bit_depth, color_type, interlace


def read_png8(data: bytes, default_max_range: float = DEFAULT_MAX_RANGE) -> QuantizedDepth:
    """Decode an 8-bit grayscale, non-interlaced PNG into a QuantizedDepth.

    ``max_range`` comes from the ``depth:max_range`` text chunk; when absent
    it falls back to ``default_max_range`` and logs a warning.
    """
    _, _, bit_depth, color_type, interlace = _png_ihdr(data)
    if color_type != 0 or bit_depth != 8:
        raise FormatError(f"unsupported PNG subtype (bit depth {bit_depth}, color type {color_type});"
                          " need 8-bit grayscale")
    if interlace != 0:
        raise FormatError("interlaced PNG is not supported")
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            levels = np.array(im, dtype=np.uint8)
            text = dict(getattr(im, "text", {}) or {})
    except (OSError, SyntaxError, ValueError) as e:
        raise FormatError(f"corrupt PNG: {e}") from e
    raw = text.get(RANGE_KEY)
    if raw is None:
        logger.warning("PNG has no %s chunk; assuming %g m", RANGE_KEY, default_max_range)
        max_range = default_max_range
    else:
        try:
            max_range = float(raw)
        except ValueError as e:
            raise FormatError(f"bad {RANGE_KEY} value {raw!r}") from e
        if not (np.isfinite(max_range) and max_range > 0):
            raise FormatError(f"bad {RANGE_KEY} value {raw!r}")
    return QuantizedDepth(levels, max_range)


def write_png8(q: QuantizedDepth) -> bytes:
    info = PngImagePlugin.PngInfo()
    info.add_text(RANGE_KEY, repr(q.max_range))
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(q.levels)).save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def write_rgb_png(rgb) -> bytes:
    """Encode an (H, W, 3) float image in [0, 1] as 8-bit RGB PNG."""
    arr = np.floor(np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def png_size(data: bytes) -> tuple[int, int]:
    """(width, height) of any PNG, read from IHDR without decoding."""
    w, h, *_ = _png_ihdr(data)
    return w, h
