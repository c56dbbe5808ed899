"""Dense 4-D latent tensors and the spatial primitives built on them.

A latent tensor is a C-contiguous float32 ndarray of shape
(channels, frames, rows, cols), W fastest-varying. All public operations
return new arrays; nothing here mutates its inputs.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, BoundsError, FileFormatError, ShapeError

FLT_MAGIC = b"FLT1"
FLT_VERSION = 1


@dataclass(frozen=True)
class Rect:
    """Spatial window in latent cells: top-left corner plus extent."""

    row: int
    col: int
    height: int
    width: int

    def __post_init__(self):
        if self.row < 0 or self.col < 0:
            raise BoundsError(f"negative corner ({self.row}, {self.col})")
        if self.height < 1 or self.width < 1:
            raise ArgumentError(f"empty window {self.height}x{self.width}")

    def validate_within(self, canvas_h: int, canvas_w: int) -> None:
        if self.row + self.height > canvas_h:
            raise BoundsError(
                f"rows [{self.row}, {self.row + self.height}) exceed canvas "
                f"height {canvas_h}"
            )
        if self.col + self.width > canvas_w:
            raise BoundsError(
                f"cols [{self.col}, {self.col + self.width}) exceed canvas "
                f"width {canvas_w}"
            )

    @property
    def row_slice(self) -> slice:
        return slice(self.row, self.row + self.height)

    @property
    def col_slice(self) -> slice:
        return slice(self.col, self.col + self.width)


def as_latent(x, name: str = "tensor") -> np.ndarray:
    """Coerce to the canonical layout: 4-D, float32, C-contiguous."""
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (C,T,H,W), got {arr.ndim}-D")
    return np.ascontiguousarray(arr, dtype=np.float32)


def ensure_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.isfinite(x).all():
        bad = int(np.count_nonzero(~np.isfinite(x)))
        raise ShapeError(f"{name} contains {bad} non-finite values")
    return x


def crop(canvas: np.ndarray, r: Rect) -> np.ndarray:
    """Extract the spatial window r from a (C,T,H,W) canvas."""
    canvas = as_latent(canvas, "canvas")
    r.validate_within(canvas.shape[2], canvas.shape[3])
    return np.ascontiguousarray(canvas[:, :, r.row_slice, r.col_slice])


def zero_pad(tile: np.ndarray, r: Rect, canvas_shape) -> np.ndarray:
    """Place tile at window r inside an otherwise-zero canvas."""
    tile = as_latent(tile, "tile")
    c, t, h, w = canvas_shape
    if tile.shape[2] != r.height or tile.shape[3] != r.width:
        raise ShapeError(
            f"tile spatial dims {tile.shape[2]}x{tile.shape[3]} do not match "
            f"window {r.height}x{r.width}"
        )
    if tile.shape[0] != c or tile.shape[1] != t:
        raise ShapeError(
            f"tile (C,T)=({tile.shape[0]},{tile.shape[1]}) does not match "
            f"canvas ({c},{t})"
        )
    r.validate_within(h, w)
    out = np.zeros((c, t, h, w), dtype=np.float32)
    out[:, :, r.row_slice, r.col_slice] = tile
    return out


def _axis_indices(src_len: int, out_len: int):
    """Endpoint-aligned sample positions for one axis.

    Returns (lo, hi, frac): integer neighbours and the interpolation weight
    of hi. out_len == 1 degenerates to source index 0.
    """
    if out_len == 1 or src_len == 1:
        lo = np.zeros(out_len, dtype=np.intp)
        return lo, lo.copy(), np.zeros(out_len)
    pos = np.arange(out_len) * ((src_len - 1) / (out_len - 1))
    lo = np.floor(pos).astype(np.intp)
    np.clip(lo, 0, src_len - 2, out=lo)
    frac = pos - lo
    return lo, lo + 1, frac


def trilinear_resize(src: np.ndarray, out_t: int, out_h: int, out_w: int) -> np.ndarray:
    """Endpoint-aligned trilinear interpolation over (T,H,W), channel-wise.

    Corners map to corners; resizing to the source dims returns the source
    bit-exactly. Interpolation runs in float64 and the result is cast back
    to float32.
    """
    src = as_latent(src, "source")
    if out_t < 1 or out_h < 1 or out_w < 1:
        raise ArgumentError(f"output dims must be >= 1, got ({out_t},{out_h},{out_w})")
    c, t, h, w = src.shape
    if (t, h, w) == (out_t, out_h, out_w):
        return src.copy()

    out = src.astype(np.float64)
    for axis, (n_src, n_out) in zip((1, 2, 3), ((t, out_t), (h, out_h), (w, out_w))):
        if n_src == n_out:
            continue
        lo, hi, frac = _axis_indices(n_src, n_out)
        shape = [1, 1, 1, 1]
        shape[axis] = n_out
        frac = frac.reshape(shape)
        out = (1.0 - frac) * np.take(out, lo, axis=axis) + frac * np.take(
            out, hi, axis=axis
        )
    return np.ascontiguousarray(out, dtype=np.float32)


def write_flt(path, tensor: np.ndarray) -> None:
    """Write a latent tensor in the FLT1 container (atomic: write + rename)."""
    tensor = as_latent(tensor, "tensor")
    tmp = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(FLT_MAGIC)
        fh.write(struct.pack("<5I", FLT_VERSION, *tensor.shape))
        fh.write(tensor.astype("<f4", copy=False).tobytes())
    os.replace(tmp, path)


def flt_to_bytes(tensor: np.ndarray) -> bytes:
    tensor = as_latent(tensor, "tensor")
    return (
        FLT_MAGIC
        + struct.pack("<5I", FLT_VERSION, *tensor.shape)
        + tensor.astype("<f4", copy=False).tobytes()
    )


def flt_from_bytes(blob: bytes, name: str = "payload") -> np.ndarray:
    head = len(FLT_MAGIC) + 20
    if len(blob) < head:
        raise FileFormatError(f"{name}: truncated FLT1 header ({len(blob)} bytes)")
    if blob[:4] != FLT_MAGIC:
        raise FileFormatError(f"{name}: bad magic {blob[:4]!r}")
    version, c, t, h, w = struct.unpack("<5I", blob[4:head])
    if version != FLT_VERSION:
        raise FileFormatError(f"{name}: unsupported FLT version {version}")
    count = c * t * h * w
    if count == 0:
        raise FileFormatError(f"{name}: zero-sized tensor {c}x{t}x{h}x{w}")
    if len(blob) != head + 4 * count:
        raise FileFormatError(
            f"{name}: payload holds {len(blob) - head} bytes, header promises "
            f"{4 * count}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=head)
    arr = np.ascontiguousarray(data.reshape(c, t, h, w).astype(np.float32))
    return ensure_finite(arr, name)


def read_flt(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    return flt_from_bytes(blob, name=os.fspath(path))
