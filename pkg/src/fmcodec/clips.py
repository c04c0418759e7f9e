"""Deterministic synthetic test sequences.

* ``static``: one textured picture repeated.
* ``pan``: a slow sub-pel global pan over a textured scene with fresh fine
  detail added on every frame. Small prediction errors pile up on it.
* ``drift``: a whole-pixel pan without grain whose fine detail is redrawn
  every ``DRIFT_EPOCH`` frames. The moving average keeps the old detail
  for a while after each change, unless it is refreshed.
* ``noise``: independent uniform noise per frame.
"""

from fractions import Fraction

import numpy as np

from .pixels import Clip, Frame, PixelFormat, to_file_format

CLIP_NAMES = ("static", "pan", "drift", "noise")
PAN_SPEED = (0.35, 0.15)
DRIFT_SPEED = (1, 0)
DRIFT_EPOCH = 32


class _Texture:
    """Sum of random sinusoids, evaluable at any real coordinate."""

    def __init__(self, rng, waves, amplitude, max_freq):
        self.freqs = rng.uniform(-max_freq, max_freq, size=(waves, 2))
        self.phases = rng.uniform(0, 2 * np.pi, size=waves)
        weights = rng.uniform(0.5, 1.0, size=waves)
        self.amps = amplitude * weights / np.sqrt(waves)

    def __call__(self, ys, xs):
        out = np.zeros(np.broadcast(ys, xs).shape)
        for (fy, fx), phase, amp in zip(self.freqs, self.phases, self.amps):
            out += amp * np.sin(2 * np.pi * (fy * ys + fx * xs) + phase)
        return out


class _Scene:
    def __init__(self, rng):
        self.luma = _Texture(rng, 12, 60.0, 0.08)
        self.redraw_detail(rng)
        self.u = _Texture(rng, 4, 25.0, 0.03)
        self.v = _Texture(rng, 4, 25.0, 0.03)

    def redraw_detail(self, rng):
        self.detail = _Texture(rng, 8, 14.0, 0.3)

    def frame(self, width, height, dx=0.0, dy=0.0, grain=None):
        ys, xs = np.indices((height, width), dtype=np.float64)
        ys = ys + dy
        xs = xs + dx
        y = 128 + self.luma(ys, xs) + self.detail(ys, xs)
        if grain is not None:
            y = y + grain
        planes = (
            np.clip(y, 0, 255),
            np.clip(128 + self.u(ys, xs), 0, 255),
            np.clip(128 + self.v(ys, xs), 0, 255),
        )
        return Frame(width, height, PixelFormat.YUV444R, planes)


def generate_clip(
    name, width=64, height=64, frames=32, seed=0, pix_fmt="yuv420p", fps=30
):
    """Build one of the bundled clips as 8-bit frames in ``pix_fmt``."""
    if name not in CLIP_NAMES:
        raise ValueError(
            f"Unknown clip '{name}', expected one of {', '.join(CLIP_NAMES)}"
        )
    rng = np.random.default_rng(seed)
    out = []
    if name == "noise":
        for _ in range(frames):
            planes = rng.uniform(0, 255, size=(3, height, width))
            frame = Frame.from_stack(planes, PixelFormat.YUV444R)
            out.append(to_file_format(frame, pix_fmt))
    else:
        scene = _Scene(rng)
        if name == "static":
            still = to_file_format(scene.frame(width, height), pix_fmt)
            out = [still] * frames
        elif name == "drift":
            vx, vy = DRIFT_SPEED
            for t in range(frames):
                if t and t % DRIFT_EPOCH == 0:
                    scene.redraw_detail(rng)
                frame = scene.frame(width, height, dx=vx * t, dy=vy * t)
                out.append(to_file_format(frame, pix_fmt))
        else:
            vx, vy = PAN_SPEED
            for t in range(frames):
                grain = rng.normal(0, 2.0, size=(height, width))
                frame = scene.frame(
                    width, height, dx=vx * t, dy=vy * t, grain=grain
                )
                out.append(to_file_format(frame, pix_fmt))
    return Clip(out, fps=Fraction(fps), pix_fmt=pix_fmt)
