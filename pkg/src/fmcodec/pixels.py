"""Frames, raw video files, BT.709 conversion, chroma resampling, PSNR.

Planes are numpy arrays indexed ``[row, column]``. 8-bit frames
(``YUV420P8``) hold ``uint8`` planes; the real-valued formats (``YUV444R``,
``RGBR``) hold ``float64`` planes at full resolution. Rounding to 8 bits only
happens when writing files (or when producing a ``YUV420P8`` frame).
"""

import logging
from dataclasses import dataclass, field, replace as dc_replace
from enum import Enum
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)

MIN_DIM = 16
DEFAULT_PSNR_CAP = 100.0
PEAK = 255.0

# Full-range BT.709
KR = 0.2126
KB = 0.0722
KG = 1.0 - KR - KB
CB_SCALE = 1.8556
CR_SCALE = 1.5748

YUV_WEIGHTS = (6, 1, 1)
YUV_RGB_MIX = 0.8

Y4M_MAGIC = b"YUV4MPEG2"
Y4M_CHROMA_420 = {"420", "420jpeg", "420paldv", "420mpeg2"}


class FrameError(Exception):
    """Invalid frame geometry, sample values or file layout."""

    pass


class UnsupportedFormat(FrameError):
    """The file uses a pixel format this toolkit does not read."""

    pass


class PixelFormat(Enum):
    YUV420P8 = "yuv420p8"
    YUV444R = "yuv444r"
    RGBR = "rgbr"

    @property
    def is_real(self):
        return self is not PixelFormat.YUV420P8


# File-level pixel formats (``--pix-fmt``) and the frame format they load as
FILE_FORMATS = {
    "yuv420p": PixelFormat.YUV420P8,
    "rgb24": PixelFormat.RGBR,
}


def chroma_shape(width, height):
    return ((height + 1) // 2, (width + 1) // 2)


@dataclass(frozen=True, eq=False)
class Frame:
    width: int
    height: int
    format: PixelFormat
    planes: Tuple[np.ndarray, np.ndarray, np.ndarray]

    replace = dc_replace

    def __post_init__(self):
        if self.width < MIN_DIM or self.height < MIN_DIM:
            raise FrameError(
                f"Frame is {self.width}x{self.height}, minimum is {MIN_DIM}x{MIN_DIM}"
            )
        if len(self.planes) != 3:
            raise FrameError(f"Expected 3 planes, got {len(self.planes)}")

        planes = []
        for i, (p, shape) in enumerate(zip(self.planes, self.plane_shapes())):
            p = np.asarray(p)
            if p.shape != shape:
                raise FrameError(
                    f"Plane {i} has shape {p.shape}, expected {shape}"
                )
            if not self.format.is_real:
                if p.dtype != np.uint8:
                    if not np.issubdtype(p.dtype, np.integer):
                        raise FrameError(
                            f"Plane {i} of an 8-bit frame has dtype {p.dtype}"
                        )
                    if p.size and (p.min() < 0 or p.max() > 255):
                        raise FrameError(
                            f"Plane {i} holds values outside [0, 255]"
                        )
                p = p.astype(np.uint8)
            else:
                p = p.astype(np.float64)
                if not np.all(np.isfinite(p)):
                    raise FrameError(f"Plane {i} holds non-finite values")
            p.setflags(write=False)
            planes.append(p)
        object.__setattr__(self, "planes", tuple(planes))

    def plane_shapes(self):
        full = (self.height, self.width)
        if self.format is PixelFormat.YUV420P8:
            ch = chroma_shape(self.width, self.height)
            return (full, ch, ch)
        return (full, full, full)

    @classmethod
    def from_stack(cls, stack, format):
        """Build a full-resolution real frame from a ``(3, H, W)`` array."""
        stack = np.asarray(stack)
        _, height, width = stack.shape
        return cls(width, height, format, (stack[0], stack[1], stack[2]))

    def stack(self):
        """The three planes as one ``(3, H, W)`` float64 array."""
        if self.format is PixelFormat.YUV420P8:
            raise FrameError("Subsampled frames cannot be stacked")
        return np.stack(self.planes).astype(np.float64)

    def same_geometry(self, other):
        return (
            self.width == other.width
            and self.height == other.height
            and self.format is other.format
        )


@dataclass
class Clip:
    frames: List[Frame] = field(default_factory=list)
    fps: Fraction = Fraction(30, 1)
    pix_fmt: str = "yuv420p"

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, item):
        return self.frames[item]

    @property
    def width(self):
        return self.frames[0].width

    @property
    def height(self):
        return self.frames[0].height


def frame_bytes(width, height, pix_fmt):
    if pix_fmt == "yuv420p":
        ch, cw = chroma_shape(width, height)
        return width * height + 2 * ch * cw
    elif pix_fmt == "rgb24":
        return width * height * 3
    else:
        raise UnsupportedFormat(f"Unknown pixel format: '{pix_fmt}'")


def _decode_frame(buf, width, height, pix_fmt):
    data = np.frombuffer(buf, dtype=np.uint8)
    if pix_fmt == "yuv420p":
        ch, cw = chroma_shape(width, height)
        n = width * height
        y = data[:n].reshape(height, width)
        u = data[n : n + ch * cw].reshape(ch, cw)
        v = data[n + ch * cw :].reshape(ch, cw)
        return Frame(width, height, PixelFormat.YUV420P8, (y, u, v))
    else:
        rgb = data.reshape(height, width, 3)
        return Frame(
            width,
            height,
            PixelFormat.RGBR,
            (rgb[..., 0], rgb[..., 1], rgb[..., 2]),
        )


def _parse_y4m(data):
    eol = data.find(b"\n")
    if eol < 0:
        raise FrameError("y4m header is not terminated")
    tokens = data[:eol].decode("ascii", errors="replace").split()[1:]
    width = height = None
    fps = Fraction(30, 1)
    for tok in tokens:
        key, value = tok[0], tok[1:]
        if key == "W":
            width = int(value)
        elif key == "H":
            height = int(value)
        elif key == "F":
            num, den = value.split(":")
            fps = Fraction(int(num), int(den))
        elif key == "C":
            if value not in Y4M_CHROMA_420:
                raise UnsupportedFormat(
                    f"Unsupported y4m chroma tag 'C{value}', only C420 is read"
                )
        # Interlacing, aspect ratio and X tags are ignored
    if width is None or height is None:
        raise FrameError("y4m header lacks W or H")

    size = frame_bytes(width, height, "yuv420p")
    frames = []
    pos = eol + 1
    while pos < len(data):
        if not data.startswith(b"FRAME", pos):
            raise FrameError(f"Expected FRAME marker at byte {pos}")
        eol = data.find(b"\n", pos)
        if eol < 0:
            raise FrameError(f"Unterminated FRAME header at byte {pos}")
        start = eol + 1
        if start + size > len(data):
            raise FrameError(
                f"Truncated y4m frame {len(frames)}: needs {size} bytes, "
                f"{len(data) - start} left"
            )
        frames.append(
            _decode_frame(data[start : start + size], width, height, "yuv420p")
        )
        pos = start + size
    return Clip(frames, fps=fps, pix_fmt="yuv420p")


def load_raw(path, width=None, height=None, pix_fmt="yuv420p", fps=None):
    """Read a raw planar file or a y4m file into a ``Clip``.

    y4m files are recognized by their magic; their header supplies the
    dimensions and frame rate (``width``/``height``, if given, must agree).
    """
    with open(path, "rb") as f:
        data = f.read()

    if data.startswith(Y4M_MAGIC):
        clip = _parse_y4m(data)
        if len(clip) and (
            (width is not None and width != clip.width)
            or (height is not None and height != clip.height)
        ):
            raise FrameError(
                f"{path} is {clip.width}x{clip.height}, "
                f"expected {width}x{height}"
            )
        if fps is not None:
            clip.fps = Fraction(fps)
        return clip

    if width is None or height is None:
        raise FrameError(f"{path}: raw video needs a width and a height")
    size = frame_bytes(width, height, pix_fmt)
    if len(data) % size:
        raise FrameError(
            f"{path} is truncated: {len(data)} bytes is not a multiple of "
            f"the {size}-byte {pix_fmt} frame size for {width}x{height}"
        )
    frames = [
        _decode_frame(data[i : i + size], width, height, pix_fmt)
        for i in range(0, len(data), size)
    ]
    log.debug(f"Read {len(frames)} {pix_fmt} frames from {path}")
    return Clip(
        frames,
        fps=Fraction(fps) if fps is not None else Fraction(30, 1),
        pix_fmt=pix_fmt,
    )


def to_8bit(plane):
    return np.clip(np.rint(plane), 0, 255).astype(np.uint8)


def to_file_format(frame, pix_fmt):
    """Convert a frame to what a ``pix_fmt`` file stores (8-bit values)."""
    if pix_fmt == "yuv420p":
        if frame.format is PixelFormat.RGBR:
            frame = rgb_to_yuv_bt709(frame)
        if frame.format is PixelFormat.YUV444R:
            frame = chroma_resample(frame, "down")
        return frame
    elif pix_fmt == "rgb24":
        if frame.format is not PixelFormat.RGBR:
            frame = yuv_to_rgb_bt709(frame)
        return Frame.from_stack(
            np.stack([to_8bit(p) for p in frame.planes]), PixelFormat.RGBR
        )
    else:
        raise UnsupportedFormat(f"Unknown pixel format: '{pix_fmt}'")


def _encode_frame(frame, pix_fmt):
    frame = to_file_format(frame, pix_fmt)
    if pix_fmt == "yuv420p":
        return b"".join(p.tobytes() for p in frame.planes)
    else:
        return np.stack([to_8bit(p) for p in frame.planes], axis=-1).tobytes()


def write_raw(path, frames, pix_fmt="yuv420p"):
    with open(path, "wb") as f:
        for frame in frames:
            f.write(_encode_frame(frame, pix_fmt))


def write_y4m(path, clip):
    frames = list(clip)
    if not frames:
        raise FrameError("Cannot write an empty y4m file")
    fps = Fraction(clip.fps)
    header = (
        f"YUV4MPEG2 W{frames[0].width} H{frames[0].height} "
        f"F{fps.numerator}:{fps.denominator} Ip A1:1 C420\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for frame in frames:
            f.write(b"FRAME\n")
            f.write(_encode_frame(frame, "yuv420p"))


def rgb_to_yuv_bt709(frame):
    """Full-range BT.709 RGB -> YUV444, real-valued (no rounding)."""
    if frame.format is not PixelFormat.RGBR:
        raise FrameError(f"Expected an RGB frame, got {frame.format.name}")
    r, g, b = (p.astype(np.float64) for p in frame.planes)
    y = KR * r + KG * g + KB * b
    u = (b - y) / CB_SCALE + 128.0
    v = (r - y) / CR_SCALE + 128.0
    return Frame(frame.width, frame.height, PixelFormat.YUV444R, (y, u, v))


def yuv_to_rgb_bt709(frame):
    """Inverse of ``rgb_to_yuv_bt709``, clamped to [0, 255]."""
    if frame.format is PixelFormat.YUV420P8:
        frame = chroma_resample(frame, "up")
    if frame.format is not PixelFormat.YUV444R:
        raise FrameError(f"Expected a YUV frame, got {frame.format.name}")
    y, u, v = frame.planes
    r = y + CR_SCALE * (v - 128.0)
    b = y + CB_SCALE * (u - 128.0)
    g = (y - KR * r - KB * b) / KG
    planes = tuple(np.clip(p, 0.0, 255.0) for p in (r, g, b))
    return Frame(frame.width, frame.height, PixelFormat.RGBR, planes)


def luma_plane(frame):
    if frame.format is PixelFormat.RGBR:
        r, g, b = frame.planes
        return KR * r + KG * g + KB * b
    return frame.planes[0].astype(np.float64)


def _upsample_plane(c, height, width):
    # Chroma sample (i, j) sits on luma sample (2i, 2j)
    ch, cw = c.shape
    c = c.astype(np.float64)
    ys = np.arange(height)
    xs = np.arange(width)
    y0 = ys // 2
    x0 = xs // 2
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    fy = ((ys % 2) * 0.5)[:, None]
    fx = ((xs % 2) * 0.5)[None, :]
    top = (1 - fx) * c[y0][:, x0] + fx * c[y0][:, x1]
    bottom = (1 - fx) * c[y1][:, x0] + fx * c[y1][:, x1]
    return (1 - fy) * top + fy * bottom


def _downsample_plane(p):
    h, w = p.shape
    p = np.pad(p, ((0, h % 2), (0, w % 2)), mode="edge")
    h2, w2 = p.shape
    return p.reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))


def chroma_resample(frame, direction):
    """Convert between ``YUV420P8`` (``"down"``) and ``YUV444R`` (``"up"``)."""
    if direction == "up":
        if frame.format is not PixelFormat.YUV420P8:
            raise FrameError(
                f"Chroma upsampling needs a YUV420P8 frame, got {frame.format.name}"
            )
        y, u, v = frame.planes
        return Frame(
            frame.width,
            frame.height,
            PixelFormat.YUV444R,
            (
                y.astype(np.float64),
                _upsample_plane(u, frame.height, frame.width),
                _upsample_plane(v, frame.height, frame.width),
            ),
        )
    elif direction == "down":
        if frame.format is not PixelFormat.YUV444R:
            raise FrameError(
                f"Chroma downsampling needs a YUV444R frame, got {frame.format.name}"
            )
        y, u, v = frame.planes
        return Frame(
            frame.width,
            frame.height,
            PixelFormat.YUV420P8,
            (
                to_8bit(y),
                to_8bit(_downsample_plane(u)),
                to_8bit(_downsample_plane(v)),
            ),
        )
    else:
        raise ValueError(f"direction must be 'up' or 'down', not {direction!r}")


def to_planar444(frame):
    """The full-resolution real-valued view the codec works on."""
    if frame.format is PixelFormat.YUV420P8:
        return chroma_resample(frame, "up")
    return frame


@dataclass(frozen=True)
class QualityReport:
    psnr_y: float
    psnr_u: float
    psnr_v: float
    psnr_weighted: float
    combined_distortion: float
    psnr_rgb: Optional[float] = None


def mse(a, b):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(m, cap=DEFAULT_PSNR_CAP):
    if m <= 0:
        return cap
    return min(cap, 10.0 * np.log10(PEAK * PEAK / m))


def weighted_psnr(y, u, v):
    wy, wu, wv = YUV_WEIGHTS
    return (wy * y + wu * u + wv * v) / (wy + wu + wv)


def psnr(a, b, cap=DEFAULT_PSNR_CAP, rgb=None):
    """Per-plane, weighted and (optionally) RGB PSNR between two frames.

    RGB frames are compared in BT.709 YUV and additionally in RGB. For YUV
    frames, ``rgb`` may supply a pair of RGB views of ``a`` and ``b``.
    """
    if not a.same_geometry(b):
        raise FrameError(
            f"Cannot compare {a.width}x{a.height} {a.format.name} with "
            f"{b.width}x{b.height} {b.format.name}"
        )
    if a.format is PixelFormat.RGBR:
        rgb = (a, b)
        a, b = rgb_to_yuv_bt709(a), rgb_to_yuv_bt709(b)

    mses = [mse(pa, pb) for pa, pb in zip(a.planes, b.planes)]
    py, pu, pv = (psnr_from_mse(m, cap) for m in mses)
    wy, wu, wv = YUV_WEIGHTS
    d_yuv = (wy * mses[0] + wu * mses[1] + wv * mses[2]) / (wy + wu + wv)

    psnr_rgb = None
    combined = d_yuv
    if rgb is not None:
        ra, rb = rgb
        pairs = zip(ra.planes, rb.planes)
        d_rgb = float(np.mean([mse(pa, pb) for pa, pb in pairs]))
        psnr_rgb = psnr_from_mse(d_rgb, cap)
        combined = YUV_RGB_MIX * d_yuv + (1 - YUV_RGB_MIX) * d_rgb

    return QualityReport(
        psnr_y=py,
        psnr_u=pu,
        psnr_v=pv,
        psnr_weighted=weighted_psnr(py, pu, pv),
        combined_distortion=combined,
        psnr_rgb=psnr_rgb,
    )
