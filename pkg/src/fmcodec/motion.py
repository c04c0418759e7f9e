"""Block motion estimation and bilinear warping at three precisions."""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .pixels import Frame, luma_plane, to_planar444

log = logging.getLogger(__name__)

MV_BLOCK = 16
DEFAULT_SEARCH_RANGE = 16

LARGE_DIAMOND = [
    (0, -2),
    (-1, -1),
    (1, -1),
    (-2, 0),
    (2, 0),
    (-1, 1),
    (1, 1),
    (0, 2),
]
SMALL_DIAMOND = [(0, -1), (-1, 0), (1, 0), (0, 1)]
HALF_PEL_RING = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


class WarpPrecisionMode(Enum):
    Fp32 = "fp32"
    Fp16Absolute = "fp16-absolute"
    Fp16RelativeOffset = "fp16-relative"


@dataclass(frozen=True, eq=False)
class MotionField:
    """Per-16x16-block ``(dx, dy)`` vectors in half-pel units."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.int64)
        if v.ndim != 3 or v.shape[-1] != 2:
            raise ValueError(
                f"Motion vectors must be (rows, cols, 2), not {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @staticmethod
    def grid(width, height):
        return (-(-height // MV_BLOCK), -(-width // MV_BLOCK))

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((*cls.grid(width, height), 2), dtype=np.int64))

    def covers(self, width, height):
        return self.vectors.shape[:2] == self.grid(width, height)

    def is_zero(self):
        return not self.vectors.any()

    def __eq__(self, other):
        return isinstance(other, MotionField) and np.array_equal(
            self.vectors, other.vectors
        )


def random_field(width, height, rng, max_half_pel):
    shape = (*MotionField.grid(width, height), 2)
    vectors = rng.integers(-max_half_pel, max_half_pel + 1, size=shape)
    return MotionField(vectors)


class _BlockSearch:
    """SAD search for one block over an edge-padded reference plane."""

    def __init__(self, ref_pad, pad, block, y0, x0, search_range):
        self.ref_pad = ref_pad
        self.pad = pad
        self.block = block
        self.y0 = y0
        self.x0 = x0
        self.bh, self.bw = block.shape
        self.search_range = search_range

    def sample(self, hx, hy):
        iy, fy = divmod(hy, 2)
        ix, fx = divmod(hx, 2)
        y = self.pad + self.y0 + iy
        x = self.pad + self.x0 + ix
        patch = self.ref_pad[y : y + self.bh + 1, x : x + self.bw + 1]
        rows = 0.5 * (patch[:, :-1] + patch[:, 1:]) if fx else patch[:, :-1]
        return 0.5 * (rows[:-1] + rows[1:]) if fy else rows[:-1]

    def sad(self, hx, hy):
        return float(np.abs(self.block - self.sample(hx, hy)).sum())

    def key(self, hx, hy):
        return (self.sad(hx, hy), abs(hx) + abs(hy), hy, hx)

    def full_pel(self):
        r = self.search_range
        cx, cy = 0, 0
        best = self.key(0, 0)
        for _ in range(4 * r + 1):
            moved = False
            for dx, dy in LARGE_DIAMOND:
                x, y = cx + dx, cy + dy
                if abs(x) > r or abs(y) > r:
                    continue
                k = self.key(2 * x, 2 * y)
                if k < best:
                    best, nx, ny, moved = k, x, y, True
            if not moved:
                break
            cx, cy = nx, ny
        moved = False
        for dx, dy in SMALL_DIAMOND:
            x, y = cx + dx, cy + dy
            if abs(x) > r or abs(y) > r:
                continue
            k = self.key(2 * x, 2 * y)
            if k < best:
                best, nx, ny, moved = k, x, y, True
        if moved:
            cx, cy = nx, ny
        return cx, cy

    def half_pel(self, cx, cy):
        limit = 2 * self.search_range
        best_key, best = None, (2 * cx, 2 * cy)
        for dx, dy in HALF_PEL_RING:
            hx, hy = 2 * cx + dx, 2 * cy + dy
            if abs(hx) > limit or abs(hy) > limit:
                continue
            k = self.key(hx, hy)
            if best_key is None or k < best_key:
                best_key, best = k, (hx, hy)
        return best


def estimate_motion(current, reference, search_range=DEFAULT_SEARCH_RANGE):
    """Diamond search on luma, then half-pel refinement, per 16x16 block."""
    if (current.width, current.height) != (reference.width, reference.height):
        raise ValueError(
            f"Cannot estimate motion between {current.width}x{current.height} "
            f"and {reference.width}x{reference.height}"
        )
    cur = luma_plane(current)
    pad = search_range + 2
    ref_pad = np.pad(luma_plane(reference), pad, mode="edge")
    h, w = cur.shape
    gh, gw = MotionField.grid(w, h)
    vectors = np.zeros((gh, gw, 2), dtype=np.int64)
    for by in range(gh):
        for bx in range(gw):
            y0, x0 = by * MV_BLOCK, bx * MV_BLOCK
            block = cur[y0 : y0 + MV_BLOCK, x0 : x0 + MV_BLOCK]
            search = _BlockSearch(ref_pad, pad, block, y0, x0, search_range)
            vectors[by, bx] = search.half_pel(*search.full_pel())
    return MotionField(vectors)


def _bilinear(plane, x0, y0, fx, fy, one):
    h, w = plane.shape
    xa = np.clip(x0, 0, w - 1)
    xb = np.clip(x0 + 1, 0, w - 1)
    ya = np.clip(y0, 0, h - 1)
    yb = np.clip(y0 + 1, 0, h - 1)
    top = (one - fx) * plane[ya, xa] + fx * plane[ya, xb]
    bottom = (one - fy) * plane[yb, xa] + fy * plane[yb, xb]
    return (one - fy) * top + fy * bottom


def _sample_fp32(plane, xs, ys, hx, hy):
    p = plane.astype(np.float32)
    sx = (xs + hx / 2).astype(np.float32)
    sy = (ys + hy / 2).astype(np.float32)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    return _bilinear(
        p,
        x0.astype(np.int64),
        y0.astype(np.int64),
        sx - x0,
        sy - y0,
        np.float32(1),
    )


def _through_fp16_normalized(coord, size):
    # Normalize to [-1, 1], store as binary16, map back in binary32
    extent = np.float32(size - 1)
    g = (np.float32(2) * coord / extent - np.float32(1)).astype(np.float16)
    return (g.astype(np.float32) + np.float32(1)) * extent / np.float32(2)


def _sample_fp16_absolute(plane, xs, ys, hx, hy):
    h, w = plane.shape
    p = plane.astype(np.float32)
    sx = _through_fp16_normalized((xs + hx / 2).astype(np.float32), w)
    sy = _through_fp16_normalized((ys + hy / 2).astype(np.float32), h)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    return _bilinear(
        p,
        x0.astype(np.int64),
        y0.astype(np.int64),
        sx - x0,
        sy - y0,
        np.float32(1),
    )


def _sample_fp16_relative(plane, xs, ys, hx, hy):
    p = plane.astype(np.float32)
    # Integer base stays exact; only offsets and weights go through binary16
    x0 = xs + np.floor_divide(hx, 2)
    y0 = ys + np.floor_divide(hy, 2)
    fx = (np.mod(hx, 2) / 2).astype(np.float16)
    fy = (np.mod(hy, 2) / 2).astype(np.float16)
    one = np.float16(1)
    wx1, wx0 = fx, one - fx
    wy1, wy0 = fy, one - fy
    h, w = p.shape
    xa = np.clip(x0, 0, w - 1)
    xb = np.clip(x0 + 1, 0, w - 1)
    ya = np.clip(y0, 0, h - 1)
    yb = np.clip(y0 + 1, 0, h - 1)
    wx0, wx1, wy0, wy1 = (a.astype(np.float32) for a in (wx0, wx1, wy0, wy1))
    top = wx0 * p[ya, xa] + wx1 * p[ya, xb]
    bottom = wx0 * p[yb, xa] + wx1 * p[yb, xb]
    return wy0 * top + wy1 * bottom


_SAMPLERS = {
    WarpPrecisionMode.Fp32: _sample_fp32,
    WarpPrecisionMode.Fp16Absolute: _sample_fp16_absolute,
    WarpPrecisionMode.Fp16RelativeOffset: _sample_fp16_relative,
}


def _pixel_vectors(field, height, width):
    v = field.vectors
    full = np.repeat(np.repeat(v, MV_BLOCK, axis=0), MV_BLOCK, axis=1)
    full = full[:height, :width]
    return full[..., 0], full[..., 1]


def warp_plane(plane, hx, hy, mode):
    h, w = plane.shape
    ys, xs = np.indices((h, w))
    out = np.empty((h, w), dtype=np.float64)
    whole = (hx % 2 == 0) & (hy % 2 == 0)
    if whole.any():
        xi = np.clip(xs[whole] + hx[whole] // 2, 0, w - 1)
        yi = np.clip(ys[whole] + hy[whole] // 2, 0, h - 1)
        out[whole] = plane[yi, xi]
    frac = ~whole
    if frac.any():
        sample = _SAMPLERS[mode]
        out[frac] = sample(plane, xs[frac], ys[frac], hx[frac], hy[frac])
    return out


def warp_bilinear(reference, field, mode=WarpPrecisionMode.Fp32):
    """Sample ``reference`` at ``(x + dx/2, y + dy/2)`` for every pixel.

    Integer-pel displacements are gathered directly in every mode. Borders
    clamp to the edge. 8-bit 4:2:0 references are upsampled first, so the
    result is always a full-resolution real-valued frame.
    """
    reference = to_planar444(reference)
    w, h = reference.width, reference.height
    if not field.covers(w, h):
        raise ValueError(
            f"Motion grid {field.vectors.shape[:2]} does not cover {w}x{h}"
        )
    hx, hy = _pixel_vectors(field, h, w)
    planes = tuple(warp_plane(p, hx, hy, mode) for p in reference.planes)
    return Frame(w, h, reference.format, planes)


@dataclass(frozen=True)
class WarpErrorStats:
    mode: WarpPrecisionMode
    error_ratio: float
    max_abs_err: float
    rel_tol: float
    abs_tol: float


def warp_error_stats(reference, field, mode, rel_tol=1e-2, abs_tol=1e-3):
    """Compare a warp against the binary32 warp, on values scaled to [0, 1).

    A sample counts as an error when it deviates by more than
    ``max(rel_tol * |ref|, abs_tol)``.
    """
    ref = warp_bilinear(reference, field, WarpPrecisionMode.Fp32).stack() / 256
    out = (
        ref
        if mode is WarpPrecisionMode.Fp32
        else warp_bilinear(reference, field, mode).stack() / 256
    )
    err = np.abs(out - ref)
    exceed = err > np.maximum(rel_tol * np.abs(ref), abs_tol)
    return WarpErrorStats(
        mode=mode,
        error_ratio=float(exceed.mean()),
        max_abs_err=float(err.max()),
        rel_tol=rel_tol,
        abs_tol=abs_tol,
    )


def warp_error_ratio(reference, field, mode, tolerance=1e-2):
    stats = warp_error_stats(reference, field, mode, rel_tol=tolerance)
    return stats.error_ratio
