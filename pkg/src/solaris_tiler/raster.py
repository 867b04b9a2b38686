"""In-memory rasters, PNG + JSON sidecar I/O, polygon masks and box downsampling."""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DecodeError, DimensionMismatch, FactorMismatch, UnsupportedDepth
from .geo import GeoTransform, Polygon

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
SIDECAR_KEYS = ("crs_id", "origin_x", "origin_y", "pixel_size", "width", "height", "bands")


@dataclass(frozen=True)
class RasterImage:
    """Row-major, band-interleaved samples of shape ``(height, width, bands)``."""

    samples: np.ndarray
    gt: GeoTransform
    crs_id: str

    def __post_init__(self):
        a = np.asarray(self.samples)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ValueError(f"samples must be (h, w, 1|3), got shape {a.shape}")
        if a.dtype not in (np.uint8, np.uint16):
            raise ValueError(f"samples must be uint8 or uint16, got {a.dtype}")
        if not a.flags.c_contiguous or a.flags.writeable:
            a = np.array(a, order="C")
            a.setflags(write=False)
        object.__setattr__(self, "samples", a)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def bands(self) -> int:
        return self.samples.shape[2]

    @property
    def bit_depth(self) -> int:
        return 8 if self.samples.dtype == np.uint8 else 16


@dataclass(frozen=True)
class Mask:
    """Binary raster, ``True`` marks pixels to keep."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool, order="C")
        if b.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def inverted(self) -> "Mask":
        return Mask(~self.bits)

    def to_png(self) -> bytes:
        return _png_bytes(self.bits.astype(np.uint8) * 255)

    @classmethod
    def from_png(cls, data: bytes) -> "Mask":
        img = decode_image(data, GeoTransform(0.0, 0.0, 1.0), "none")
        if img.bands != 1:
            raise DecodeError("mask PNG must be single band")
        return cls(img.samples[:, :, 0] > 0)


# decoding


def _read_ihdr(data: bytes) -> tuple[int, int, int, int, int]:
    if not data.startswith(PNG_SIGNATURE):
        raise DecodeError("not a PNG stream")
    if len(data) < 33 or data[12:16] != b"IHDR":
        raise DecodeError("PNG stream lacks IHDR")
    w, h, depth, color, _comp, _filt, interlace = struct.unpack(">IIBBBBB", data[16:29])
    return w, h, depth, color, interlace


def _iter_chunks(data: bytes):
    pos = len(PNG_SIGNATURE)
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        kind = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + length]
        if len(body) != length:
            raise DecodeError("truncated PNG chunk")
        yield kind, body
        pos += 12 + length
        if kind == b"IEND":
            return


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((height, stride), dtype=np.uint8)
    prior = np.zeros(stride, dtype=np.uint8)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos + 1)
        pos += stride + 1
        if ftype == 0:
            cur = line.copy()
        elif ftype == 1:
            lanes = line.reshape(-1, bpp).astype(np.uint32)
            cur = (np.cumsum(lanes, axis=0) % 256).astype(np.uint8).reshape(-1)
        elif ftype == 2:
            cur = line + prior
        elif ftype in (3, 4):
            cur = bytearray(line.tobytes())
            up = prior.tobytes()
            for i in range(stride):
                left = cur[i - bpp] if i >= bpp else 0
                if ftype == 3:
                    pred = (left + up[i]) >> 1
                else:
                    pred = _paeth(left, up[i], up[i - bpp] if i >= bpp else 0)
                cur[i] = (cur[i] + pred) & 0xFF
            cur = np.frombuffer(bytes(cur), dtype=np.uint8)
        else:
            raise DecodeError(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prior = out[y]
    return out


def _decode_png16(data: bytes, width: int, height: int, color: int) -> np.ndarray:
    channels = {0: 1, 2: 3, 4: 2, 6: 4}[color]
    idat = b"".join(body for kind, body in _iter_chunks(data) if kind == b"IDAT")
    try:
        raw = zlib.decompress(idat)
    except zlib.error as e:
        raise DecodeError(f"corrupt PNG data: {e}") from None
    stride = width * channels * 2
    if len(raw) < height * (stride + 1):
        raise DecodeError("PNG image data too short")
    rows = _unfilter(raw, height, stride, channels * 2)
    px = rows.view(">u2").reshape(height, width, channels).astype(np.uint16)
    if color in (4, 6):
        px = px[:, :, :-1]  # drop alpha
    return px


def decode_image(data: bytes, expected_gt: GeoTransform, crs_id: str) -> RasterImage:
    """Decode a PNG into a raster georeferenced by ``expected_gt``.

    WMS responses carry no georeferencing, so the caller supplies it. Alpha
    channels are dropped; palette images are expanded to RGB.
    """
    width, height, depth, color, interlace = _read_ihdr(data)
    if depth == 16:
        if interlace:
            raise DecodeError("interlaced 16-bit PNG is not supported")
        if color not in (0, 2, 4, 6):
            raise DecodeError(f"unsupported PNG color type {color}")
        return RasterImage(_decode_png16(data, width, height, color), expected_gt, crs_id)
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except Exception as e:  # Pillow raises a zoo of types on corrupt input
        raise DecodeError(f"cannot decode PNG: {e}") from None
    if im.mode == "P":
        im = im.convert("RGBA" if "transparency" in im.info else "RGB")
    if im.mode in ("1", "LA", "La"):
        im = im.convert("L")
    elif im.mode in ("RGBA", "RGBa", "RGBX"):
        im = im.convert("RGB")
    if im.mode not in ("L", "RGB"):
        raise DecodeError(f"unsupported PNG mode {im.mode}")
    return RasterImage(np.asarray(im), expected_gt, crs_id)


# encoding


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def sidecar_dict(img: RasterImage) -> dict:
    return {
        "crs_id": img.crs_id,
        "origin_x": img.gt.origin_x,
        "origin_y": img.gt.origin_y,
        "pixel_size": img.gt.pixel_size,
        "width": img.width,
        "height": img.height,
        "bands": img.bands,
    }


def encode_image(img: RasterImage) -> tuple[bytes, bytes]:
    """Return ``(png_bytes, sidecar_json_bytes)`` for an 8-bit raster."""
    if img.bit_depth != 8:
        raise UnsupportedDepth("only 8-bit rasters can be encoded; convert with to_8bit first")
    arr = img.samples[:, :, 0] if img.bands == 1 else img.samples
    sidecar = json.dumps(sidecar_dict(img), indent=2).encode("ascii") + b"\n"
    return _png_bytes(arr), sidecar


def read_sidecar(data: bytes) -> tuple[GeoTransform, str, dict]:
    d = json.loads(data)
    missing = [k for k in SIDECAR_KEYS if k not in d]
    if missing:
        raise DecodeError(f"sidecar missing keys {missing}")
    return GeoTransform(d["origin_x"], d["origin_y"], d["pixel_size"]), d["crs_id"], d


def load_image(png: bytes, sidecar: bytes) -> RasterImage:
    gt, crs_id, meta = read_sidecar(sidecar)
    img = decode_image(png, gt, crs_id)
    if (img.width, img.height, img.bands) != (meta["width"], meta["height"], meta["bands"]):
        raise DecodeError("sidecar dimensions do not match the PNG")
    return img


def to_8bit(img: RasterImage) -> RasterImage:
    """Per-band min-max stretch of a 16-bit raster to 0..255 (rounded half up)."""
    if img.bit_depth == 8:
        return img
    s = img.samples.astype(np.int64)
    lo = s.min(axis=(0, 1), keepdims=True)
    span = s.max(axis=(0, 1), keepdims=True) - lo
    safe = np.where(span == 0, 1, span)
    out = ((s - lo) * 510 + safe) // (2 * safe)
    out = np.where(span == 0, 0, out)
    return RasterImage(out.astype(np.uint8), img.gt, img.crs_id)


# masks


def rasterize_polygons(polys: Sequence[Polygon], gt: GeoTransform, width: int, height: int) -> Mask:
    """Mark every pixel whose centre is inside any polygon.

    Scanline crossing counts reproduce ``geo.point_in_polygon`` bit for bit:
    same centre coordinates, same half-open edge rule, same intersection
    arithmetic.
    """
    bits = np.zeros((height, width), dtype=bool)
    if width == 0 or height == 0:
        return Mask(bits)
    xs = gt.origin_x + (np.arange(width) + 0.5) * gt.pixel_size
    ys = gt.origin_y - (np.arange(height) + 0.5) * gt.pixel_size
    for poly in polys:
        _, ey0, _, ey1 = poly.envelope
        rows = np.nonzero((ys >= ey0) & (ys <= ey1))[0]
        if rows.size == 0:
            continue
        yr = ys[rows]
        counts = np.zeros((rows.size, width + 1), dtype=np.int32)
        for ring in poly.rings:
            x1, y1 = ring[-1]
            for x2, y2 in ring:
                hit = np.nonzero((y1 >= yr) != (y2 >= yr))[0]
                if hit.size:
                    xi = x1 + (yr[hit] - y1) * (x2 - x1) / (y2 - y1)
                    # number of pixel centres strictly west of the crossing
                    k = np.searchsorted(xs, xi, side="left")
                    np.add.at(counts, (hit, k), 1)
                x1, y1 = x2, y2
        # crossings east of column c = sum of counts at k > c
        east = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1][:, 1:]
        bits[rows] |= (east % 2) == 1
    return Mask(bits)


def apply_mask(img: RasterImage, m: Mask, fill: int = 0) -> RasterImage:
    if (m.width, m.height) != (img.width, img.height):
        raise DimensionMismatch(f"mask is {m.width}x{m.height}, image is {img.width}x{img.height}")
    out = np.where(m.bits[:, :, None], img.samples, np.asarray(fill, dtype=img.samples.dtype))
    return RasterImage(out, img.gt, img.crs_id)


def downsample(img: RasterImage, factor: int) -> RasterImage:
    """Box-filter by an integer factor; block means rounded half up."""
    if factor < 1 or img.width % factor or img.height % factor:
        raise FactorMismatch(f"factor {factor} does not divide {img.width}x{img.height}")
    if factor == 1:
        return img
    h, w, b = img.height // factor, img.width // factor, img.bands
    n = factor * factor
    sums = img.samples.reshape(h, factor, w, factor, b).sum(axis=(1, 3), dtype=np.uint64)
    means = (2 * sums + n) // (2 * n)
    gt = GeoTransform(img.gt.origin_x, img.gt.origin_y, img.gt.pixel_size * factor)
    return RasterImage(means.astype(img.samples.dtype), gt, img.crs_id)
