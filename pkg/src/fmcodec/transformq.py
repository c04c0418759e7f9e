"""8x8 DCT, q-indexed quantization scalers and their calibration.

Everything that depends on the quality index ``q`` goes through a
``QuantSchedule``: the Lagrange multiplier and the encoder/decoder scalers
are all interpolated log-linearly between two endpoint values.
"""

import logging
import math
from dataclasses import dataclass, fields, replace as dc_replace
from pathlib import Path

import numpy as np
from ovld import ovld
from scipy.fft import dctn, idctn

from .utils import digest64, round_half_away

log = logging.getLogger(__name__)

BLOCK = 8
SCALER_LEVELS = (0.5, 0.707, 1.0, 1.414, 2.0)

# Adjacent scaler settings compared when measuring an RD slope
CALIBRATION_STEP = 2.0 ** 0.25
CALIBRATION_INTERVAL = (1e-3, 1e2)
CALIBRATION_TOLERANCE = 0.1


class ScheduleError(ValueError):
    """Invalid quantization schedule or out-of-range quality index."""

    pass


class CalibrationError(Exception):
    """Scaler calibration could not find a setting matching the target."""

    pass


@dataclass(frozen=True)
class QuantSchedule:
    q_num: int = 64
    lambda_min: float = 1.0
    lambda_max: float = 768.0
    # Rounded from calibrate_scaler_bounds on the bundled pan clip
    s_enc_min: float = 1 / 48
    s_enc_max: float = 0.6
    s_dec_min: float = 48.0
    s_dec_max: float = 1 / 0.6

    replace = dc_replace

    def __post_init__(self):
        if not isinstance(self.q_num, int) or not 2 <= self.q_num <= 255:
            raise ScheduleError(f"q_num must be in [2, 255], not {self.q_num}")
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ScheduleError(
                f"Need 0 < lambda_min <= lambda_max, got "
                f"[{self.lambda_min}, {self.lambda_max}]"
            )
        if not 0 < self.s_enc_min <= self.s_enc_max:
            raise ScheduleError(
                f"Need 0 < s_enc_min <= s_enc_max, got "
                f"[{self.s_enc_min}, {self.s_enc_max}]"
            )
        # Decoder endpoints are free (reciprocal tables run downwards)
        if not (self.s_dec_min > 0 and self.s_dec_max > 0):
            raise ScheduleError(
                f"Decoder scalers must be positive, got "
                f"[{self.s_dec_min}, {self.s_dec_max}]"
            )

    def check_q(self, q):
        if not isinstance(q, (int, np.integer)) or not 0 <= q < self.q_num:
            raise ScheduleError(f"q must be in [0, {self.q_num - 1}], not {q}")
        return int(q)

    def lam(self, q):
        return lambda_for_q(q, self)

    def s_enc(self, q):
        return scaler_for_q(q, (self.s_enc_min, self.s_enc_max), self.q_num)

    def s_dec(self, q):
        return scaler_for_q(q, (self.s_dec_min, self.s_dec_max), self.q_num)

    def with_reciprocal_decoder(self):
        return self.replace(
            s_dec_min=1 / self.s_enc_min, s_dec_max=1 / self.s_enc_max
        )

    def to_cfg(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={value!r}")
        return "\n".join(lines) + "\n"

    def digest(self):
        """64-bit digest of the canonical ``schedule.cfg`` text."""
        return digest64(self.to_cfg())

    @classmethod
    def parse(cls, text, source="<schedule>"):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ScheduleError(f"{source}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ScheduleError(
                    f"{source}:{lineno}: unknown key '{key}', expected one "
                    f"of {', '.join(types)}"
                )
            try:
                values[key] = int(value) if key == "q_num" else float(value)
            except ValueError:
                raise ScheduleError(
                    f"{source}:{lineno}: bad value for {key}: '{value}'"
                )
        return cls(**values)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.parse(f.read(), source=str(path))

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_cfg())


@ovld
def to_schedule(path: (str, Path)):
    return QuantSchedule.load(path)


@ovld
def to_schedule(schedule: QuantSchedule):
    return schedule


@ovld
def to_schedule(obj: object):
    if obj is None:
        return QuantSchedule()
    raise TypeError(f"Cannot make a QuantSchedule out of {obj!r}")


def _log_interp(q, lo, hi, q_num):
    if not isinstance(q, (int, np.integer)) or not 0 <= q < q_num:
        raise ScheduleError(f"q must be in [0, {q_num - 1}], not {q}")
    if q == 0:
        return float(lo)
    if q == q_num - 1:
        return float(hi)
    frac = q / (q_num - 1)
    return math.exp(math.log(lo) + frac * (math.log(hi) - math.log(lo)))


def scaler_for_q(q, bounds, q_num):
    s_min, s_max = bounds
    if s_min <= 0 or s_max <= 0:
        raise ScheduleError(f"Scaler bounds must be positive, got {bounds}")
    return _log_interp(q, s_min, s_max, q_num)


def lambda_for_q(q, schedule):
    return _log_interp(
        q, schedule.lambda_min, schedule.lambda_max, schedule.q_num
    )


def quantize_scalar(value, step):
    if step <= 0:
        raise ValueError(f"Quantization step must be positive, not {step}")
    result = step * round_half_away(np.asarray(value, dtype=np.float64) / step)
    return float(result) if result.ndim == 0 else result


def _block_weights(w):
    w = np.asarray(w, dtype=np.float64)
    return w[..., None, None] if w.ndim else w


def quantize_with_scaler(coeffs, scaler):
    scaled = np.asarray(coeffs, dtype=np.float64) * scaler
    return round_half_away(scaled).astype(np.int64)


def quantize_latent(coeffs, q, w, schedule):
    """Integer levels for coefficient blocks ``(..., 8, 8)``.

    ``w`` is a scalar or an array with one entry per block.
    """
    return quantize_with_scaler(coeffs, schedule.s_enc(q) * _block_weights(w))


def dequantize_latent(levels, q, w, schedule):
    levels = np.asarray(levels, dtype=np.float64)
    return levels * schedule.s_dec(q) / _block_weights(w)


def dct8_forward(block):
    block = np.asarray(block, dtype=np.float64)
    return dctn(block, type=2, norm="ortho", axes=(-2, -1))


def dct8_inverse(coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return idctn(coeffs, type=2, norm="ortho", axes=(-2, -1))


def block_grid(height, width):
    return (-(-height // BLOCK), -(-width // BLOCK))


def blockify(plane):
    """Split a plane into ``(rows, cols, 8, 8)`` blocks, edge-padded."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    gh, gw = block_grid(h, w)
    pad = ((0, gh * BLOCK - h), (0, gw * BLOCK - w))
    padded = np.pad(plane, pad, mode="edge")
    return padded.reshape(gh, BLOCK, gw, BLOCK).swapaxes(1, 2)


def unblockify(blocks, height, width):
    gh, gw = blocks.shape[:2]
    plane = blocks.swapaxes(1, 2).reshape(gh * BLOCK, gw * BLOCK)
    return plane[:height, :width]


def derive_spatial_scalers(context):
    """Per-8x8-block scaler level derived from a decoded context plane.

    Flat blocks are quantized finer, busy blocks coarser, relative to the
    mean block activity of the plane.
    """
    blocks = blockify(context)
    gh, gw = blocks.shape[:2]
    sigma = np.round(blocks.reshape(gh, gw, -1).std(axis=-1, ddof=1), 6)
    mean = round(float(sigma.mean()), 6)
    if mean == 0:
        return np.full((gh, gw), 1.0)
    return np.select(
        [sigma < 0.5 * mean, sigma < mean, sigma < 2 * mean],
        [1.414, 1.0, 0.707],
        default=0.5,
    )


def _coeff_bits(levels):
    from .entropy import CoderContexts, RangeEncoder, write_coeff_block

    enc = RangeEncoder()
    ctx = CoderContexts().plane(0)
    for block in levels:
        write_coeff_block(enc, block, ctx)
    return len(enc.finish()) * 8


class _RDProbe:
    """Rate and distortion of a fixed set of luma blocks at any scaler."""

    def __init__(self, coeffs):
        self.coeffs = coeffs
        self.samples = coeffs.shape[0] * BLOCK * BLOCK
        self.cache = {}

    def measure(self, scaler):
        if scaler not in self.cache:
            levels = quantize_with_scaler(self.coeffs, scaler)
            err = self.coeffs - levels / scaler
            # Orthonormal transform: coefficient MSE is sample MSE
            distortion = float(np.mean(err * err))
            rate = _coeff_bits(levels) / self.samples
            self.cache[scaler] = (distortion, rate)
        return self.cache[scaler]

    def slope(self, scaler):
        d0, r0 = self.measure(scaler)
        d1, r1 = self.measure(scaler * CALIBRATION_STEP)
        if r1 - r0 <= 0:
            return math.inf
        return abs(d0 - d1) / (r1 - r0)


def _calibration_blocks(clip, seed, max_blocks):
    from .pixels import luma_plane

    pool = np.concatenate(
        [
            dct8_forward(blockify(luma_plane(frame) - 128.0)).reshape(
                -1, BLOCK, BLOCK
            )
            for frame in clip
        ]
    )
    rng = np.random.default_rng(seed)
    if len(pool) > max_blocks:
        idx = np.sort(rng.choice(len(pool), size=max_blocks, replace=False))
        pool = pool[idx]
    return pool


def target_slope(lam):
    """Distortion (8-bit MSE) per bit-per-sample at multiplier ``lam``."""
    return 255.0 / lam


def _solve_scaler(probe, lam):
    target = target_slope(lam)
    lo, hi = (math.log(x) for x in CALIBRATION_INTERVAL)
    slope_lo = probe.slope(math.exp(lo))
    slope_hi = probe.slope(math.exp(hi))
    if not (slope_lo >= target >= slope_hi):
        raise CalibrationError(
            f"Cannot bracket slope {target:.6g} for lambda={lam:.6g}: "
            f"scaler interval {CALIBRATION_INTERVAL} gives slopes "
            f"[{slope_lo:.6g}, {slope_hi:.6g}]"
        )
    for _ in range(60):
        mid = (lo + hi) / 2
        scaler = math.exp(mid)
        slope = probe.slope(scaler)
        if abs(slope / target - 1) <= CALIBRATION_TOLERANCE:
            return scaler
        if slope > target:
            lo = mid
        else:
            hi = mid
    scaler = math.exp((lo + hi) / 2)
    log.warning(
        f"Calibration for lambda={lam:.6g} ended outside tolerance "
        f"(slope {probe.slope(scaler):.6g}, target {target:.6g})"
    )
    return scaler


def calibrate_scaler_bounds(clip, schedule=None, seed=0, max_blocks=48):
    """Find encoder scaler endpoints whose RD slope matches lambda.

    Returns ``(s_enc_min, s_enc_max, s_dec_min, s_dec_max)``, the decoder
    endpoints being the reciprocals of the encoder ones.
    """
    schedule = to_schedule(schedule)
    frames = list(clip)
    if len(frames) < 2:
        raise CalibrationError(
            f"Calibration needs at least 2 frames, got {len(frames)}"
        )
    probe = _RDProbe(_calibration_blocks(frames, seed, max_blocks))
    s_min = _solve_scaler(probe, schedule.lam(0))
    if schedule.lambda_min == schedule.lambda_max:
        s_max = s_min
    else:
        s_max = _solve_scaler(probe, schedule.lam(schedule.q_num - 1))
    if s_max < s_min:
        raise CalibrationError(
            f"Calibrated scalers are not increasing: {s_min:.6g} > {s_max:.6g}"
        )
    log.debug(f"Calibrated encoder scalers: [{s_min:.6g}, {s_max:.6g}]")
    return (s_min, s_max, 1 / s_min, 1 / s_max)
