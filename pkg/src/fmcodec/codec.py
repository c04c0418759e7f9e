"""Low-delay conditional coding with temporal state and periodic refresh.

Frames are coded as three full-resolution real-valued planes: 4:2:0 input is
upsampled on the way in, RGB is coded as it is. Each inter frame is
predicted from a motion-aligned context built from the previous
reconstruction and an exponential moving average of past reconstructions.
"""

import logging
from dataclasses import dataclass, replace as dc_replace
from fractions import Fraction
from typing import List

import numpy as np

from .entropy import (
    INTER,
    INTRA,
    BitstreamContainer,
    CoderContexts,
    EntropyError,
    FrameRecord,
    RangeDecoder,
    RangeEncoder,
    coarse_motion,
    quantize_motion,
    read_coeff_block,
    read_motion,
    write_coeff_block,
    write_motion,
)
from .motion import (
    DEFAULT_SEARCH_RANGE,
    MotionField,
    WarpPrecisionMode,
    estimate_motion,
    warp_bilinear,
)
from .pixels import FILE_FORMATS, Frame, PixelFormat, psnr, to_planar444
from .transformq import (
    block_grid,
    blockify,
    dct8_forward,
    dct8_inverse,
    dequantize_latent,
    derive_spatial_scalers,
    quantize_latent,
    to_schedule,
    unblockify,
)
from .utils import EventSource

log = logging.getLogger(__name__)

INTRA_LEVEL = 128.0


class CodecError(Exception):
    """Inconsistent stream, state or configuration."""

    pass


@dataclass(frozen=True)
class CodecConfig:
    q: int = 32
    refresh_period: int = 32
    intra_period: int = -1
    search_range: int = DEFAULT_SEARCH_RANGE
    context_blend: float = 0.5
    ema_decay: float = 0.8
    warp_mode: WarpPrecisionMode = WarpPrecisionMode.Fp32
    psnr_cap: float = 100.0

    replace = dc_replace

    def __post_init__(self):
        if not 0 <= self.refresh_period <= 0xFFFF:
            raise CodecError(
                f"refresh_period must be in [0, 65535], not {self.refresh_period}"
            )
        if self.intra_period != -1 and self.intra_period <= 0:
            raise CodecError(
                f"intra_period must be -1 or positive, not {self.intra_period}"
            )
        if self.search_range < 1:
            raise CodecError(
                f"search_range must be positive, not {self.search_range}"
            )
        if not 0 <= self.context_blend <= 1 or not 0 <= self.ema_decay <= 1:
            raise CodecError("context_blend and ema_decay must be in [0, 1]")


@dataclass(frozen=True)
class FrameCodingDecision:
    frame_type: int
    q: int
    refresh_flag: bool

    @property
    def is_intra(self):
        return self.frame_type == INTRA


def is_refresh(t, refresh_period):
    return refresh_period > 0 and t > 0 and t % refresh_period == 0


def decide_frame(t, q, config):
    intra = t == 0 or (config.intra_period > 0 and t % config.intra_period == 0)
    return FrameCodingDecision(
        frame_type=INTRA if intra else INTER,
        q=q,
        refresh_flag=is_refresh(t, config.refresh_period),
    )


@dataclass(frozen=True)
class TemporalState:
    recon_prev: Frame
    acc_ref: Frame
    mv_pred: MotionField
    contexts: CoderContexts

    replace = dc_replace

    def refreshed(self):
        """State rebuilt from the previous reconstruction alone."""
        return self.replace(
            acc_ref=self.recon_prev,
            mv_pred=MotionField.zeros(
                self.recon_prev.width, self.recon_prev.height
            ),
            contexts=CoderContexts(),
        )


@dataclass
class FrameCoded:
    t: int
    frame_type: int
    q: int
    bits: int
    psnr_weighted: float
    refresh: bool

    @property
    def type_name(self):
        return "intra" if self.frame_type == INTRA else "inter"

    def __str__(self):
        flag = " refresh" if self.refresh else ""
        return (
            f"frame {self.t} {self.type_name}{flag} q={self.q} "
            f"bits={self.bits} psnr={self.psnr_weighted:.3f}"
        )


@dataclass
class FrameDecoded:
    t: int
    frame_type: int
    q: int
    bits: int
    refresh: bool

    def __str__(self):
        kind = "intra" if self.frame_type == INTRA else "inter"
        flag = " refresh" if self.refresh else ""
        return (
            f"decoded frame {self.t} {kind}{flag} q={self.q} bits={self.bits}"
        )


def coding_format(pix_fmt):
    if FILE_FORMATS[pix_fmt] is PixelFormat.RGBR:
        return PixelFormat.RGBR
    return PixelFormat.YUV444R


def _blend(a, b, weight):
    mixed = weight * a.stack() + (1 - weight) * b.stack()
    return Frame.from_stack(mixed, a.format)


def _encode_residual(enc, residual, q, weights, contexts, schedule):
    """Quantize and code ``(3, H, W)`` residual planes; return the levels."""
    all_levels = []
    for p, plane in enumerate(residual):
        coeffs = dct8_forward(blockify(plane))
        levels = quantize_latent(coeffs, q, weights[p], schedule)
        ctx = contexts.plane(p)
        for row in levels:
            for block in row:
                write_coeff_block(enc, block, ctx)
        all_levels.append(levels)
    return all_levels


def _decode_residual(dec, grid, contexts):
    gh, gw = grid
    all_levels = []
    for p in range(3):
        ctx = contexts.plane(p)
        levels = np.empty((gh, gw, 8, 8), dtype=np.int64)
        for by in range(gh):
            for bx in range(gw):
                levels[by, bx] = read_coeff_block(dec, ctx)
        all_levels.append(levels)
    return all_levels


def _reconstruct(prediction, all_levels, q, weights, schedule, fmt):
    h, w = prediction.shape[1:]
    planes = []
    for p, levels in enumerate(all_levels):
        coeffs = dequantize_latent(levels, q, weights[p], schedule)
        planes.append(unblockify(dct8_inverse(coeffs), h, w))
    residual = np.stack(planes)
    return Frame.from_stack(np.clip(prediction + residual, 0.0, 255.0), fmt)


def encode_intra_frame(x, q, schedule=None):
    schedule = to_schedule(schedule)
    q = schedule.check_q(q)
    x = to_planar444(x)
    contexts = CoderContexts()
    weights = (1.0, 1.0, 1.0)
    prediction = np.full((3, x.height, x.width), INTRA_LEVEL)
    enc = RangeEncoder()
    residual = x.stack() - prediction
    levels = _encode_residual(enc, residual, q, weights, contexts, schedule)
    recon = _reconstruct(prediction, levels, q, weights, schedule, x.format)
    record = FrameRecord(INTRA, q, False, b"", enc.finish())
    state = TemporalState(
        recon_prev=recon,
        acc_ref=recon,
        mv_pred=MotionField.zeros(x.width, x.height),
        contexts=contexts,
    )
    return record, state, recon


def decode_intra_frame(record, width, height, format, schedule=None):
    schedule = to_schedule(schedule)
    if record.frame_type != INTRA:
        raise CodecError("Expected an intra record")
    if record.motion:
        raise CodecError("Intra record carries a motion payload")
    contexts = CoderContexts()
    weights = (1.0, 1.0, 1.0)
    prediction = np.full((3, height, width), INTRA_LEVEL)
    dec = RangeDecoder(record.coeff)
    levels = _decode_residual(dec, block_grid(height, width), contexts)
    dec.finish()
    q = record.q
    recon = _reconstruct(prediction, levels, q, weights, schedule, format)
    state = TemporalState(
        recon_prev=recon,
        acc_ref=recon,
        mv_pred=MotionField.zeros(width, height),
        contexts=contexts,
    )
    return recon, state


def _aligned(state, mv, refresh, mode, blend):
    """Context plus the warped accumulated reference (None on refresh)."""
    warped_recon = warp_bilinear(state.recon_prev, mv, mode)
    if refresh:
        return warped_recon, None
    warped_acc = warp_bilinear(state.acc_ref, mv, mode)
    return _blend(warped_recon, warped_acc, blend), warped_acc


def extract_context(state, mv, refresh, mode=WarpPrecisionMode.Fp32, blend=0.5):
    """Motion-aligned prediction for the current frame."""
    context, _ = _aligned(state, mv, refresh, mode, blend)
    return context


def _next_state(recon, warped_acc, mv, contexts, refresh, ema_decay):
    if refresh:
        acc = recon
    else:
        acc = _blend(warped_acc, recon, ema_decay)
    return TemporalState(
        recon_prev=recon, acc_ref=acc, mv_pred=mv, contexts=contexts
    )


def _check_state(x, state):
    prev = state.recon_prev
    if not x.same_geometry(prev):
        raise CodecError(
            f"Frame is {x.width}x{x.height} {x.format.name}, state holds "
            f"{prev.width}x{prev.height} {prev.format.name}"
        )


def encode_inter_frame(x, state, decision, schedule=None, config=None):
    """Code one inter frame; returns ``(record, new_state, reconstruction)``."""
    schedule = to_schedule(schedule)
    config = config or CodecConfig()
    q = schedule.check_q(decision.q)
    refresh = decision.refresh_flag
    x = to_planar444(x)
    _check_state(x, state)
    if refresh:
        state = state.refreshed()
    contexts = state.contexts.copy()

    coarse = coarse_motion(q, schedule.q_num)
    mv = MotionField(
        quantize_motion(
            estimate_motion(x, state.recon_prev, config.search_range).vectors,
            q,
            schedule.q_num,
        )
    )
    enc = RangeEncoder()
    write_motion(enc, mv.vectors, state.mv_pred.vectors, coarse)
    motion = enc.finish()

    context, warped_acc = _aligned(
        state, mv, refresh, config.warp_mode, config.context_blend
    )
    weights = [derive_spatial_scalers(p) for p in context.planes]
    prediction = context.stack()

    enc = RangeEncoder()
    residual = x.stack() - prediction
    levels = _encode_residual(enc, residual, q, weights, contexts, schedule)
    recon = _reconstruct(prediction, levels, q, weights, schedule, x.format)

    record = FrameRecord(INTER, q, refresh, motion, enc.finish())
    new_state = _next_state(
        recon, warped_acc, mv, contexts, refresh, config.ema_decay
    )
    return record, new_state, recon


def decode_inter_frame(record, state, schedule=None, config=None):
    """Mirror of ``encode_inter_frame``; returns ``(frame, new_state)``."""
    schedule = to_schedule(schedule)
    config = config or CodecConfig()
    if record.frame_type != INTER:
        raise CodecError("Expected an inter record")
    q = schedule.check_q(record.q)
    refresh = record.refresh_flag
    if refresh:
        state = state.refreshed()
    contexts = state.contexts.copy()
    prev = state.recon_prev

    dec = RangeDecoder(record.motion)
    coarse = coarse_motion(q, schedule.q_num)
    vectors = read_motion(dec, state.mv_pred.vectors, coarse)
    dec.finish()
    mv = MotionField(vectors)

    context, warped_acc = _aligned(
        state, mv, refresh, config.warp_mode, config.context_blend
    )
    weights = [derive_spatial_scalers(p) for p in context.planes]
    prediction = context.stack()

    dec = RangeDecoder(record.coeff)
    grid = block_grid(prev.height, prev.width)
    levels = _decode_residual(dec, grid, contexts)
    dec.finish()
    recon = _reconstruct(prediction, levels, q, weights, schedule, prev.format)
    new_state = _next_state(
        recon, warped_acc, mv, contexts, refresh, config.ema_decay
    )
    return recon, new_state


class SequenceEncoder:
    """Stateful low-delay encoder, fed one frame at a time."""

    def __init__(
        self,
        width,
        height,
        pix_fmt="yuv420p",
        schedule=None,
        config=None,
        fps=Fraction(30, 1),
    ):
        self.schedule = to_schedule(schedule)
        self.config = config or CodecConfig()
        self.schedule.check_q(self.config.q)
        fps = Fraction(fps)
        self.container = BitstreamContainer(
            width=width,
            height=height,
            pix_fmt=pix_fmt,
            fps_num=fps.numerator,
            fps_den=fps.denominator,
            refresh_period=self.config.refresh_period,
            q_num=self.schedule.q_num,
            digest=self.schedule.digest(),
        )
        self.format = coding_format(pix_fmt)
        self.state = None
        self.t = 0
        self.activity = EventSource()

    def encode(self, frame, q=None):
        q = self.config.q if q is None else q
        x = to_planar444(frame)
        if x.format is not self.format:
            raise CodecError(
                f"Expected {self.format.name} content, got {x.format.name}"
            )
        if (x.width, x.height) != (self.container.width, self.container.height):
            raise CodecError(
                f"Frame {self.t} is {x.width}x{x.height}, sequence is "
                f"{self.container.width}x{self.container.height}"
            )
        decision = decide_frame(self.t, q, self.config)
        if decision.is_intra:
            record, state, recon = encode_intra_frame(x, q, self.schedule)
            record = record.replace(refresh_flag=decision.refresh_flag)
        else:
            record, state, recon = encode_inter_frame(
                x, self.state, decision, self.schedule, self.config
            )
        self.state = state
        self.container.records.append(record)
        event = FrameCoded(
            t=self.t,
            frame_type=record.frame_type,
            q=record.q,
            bits=record.bits,
            psnr_weighted=psnr(x, recon, self.config.psnr_cap).psnr_weighted,
            refresh=record.refresh_flag,
        )
        log.debug(str(event))
        self.activity.emit(event)
        self.t += 1
        return event, recon


class SequenceDecoder:
    def __init__(self, container, schedule=None, config=None):
        self.schedule = to_schedule(schedule)
        self.config = config or CodecConfig()
        if container.q_num != self.schedule.q_num:
            raise CodecError(
                f"Stream uses q_num={container.q_num}, "
                f"schedule has {self.schedule.q_num}"
            )
        if container.digest != self.schedule.digest():
            raise CodecError(
                f"Stream was coded with schedule digest {container.digest:016x}, "
                f"this schedule is {self.schedule.digest():016x}"
            )
        self.container = container
        self.format = coding_format(container.pix_fmt)
        self.state = None
        self.t = 0
        self.activity = EventSource()

    def decode(self, record):
        try:
            if record.frame_type == INTRA:
                frame, state = decode_intra_frame(
                    record,
                    self.container.width,
                    self.container.height,
                    self.format,
                    self.schedule,
                )
            elif self.state is None:
                raise CodecError("Stream starts with an inter frame")
            else:
                frame, state = decode_inter_frame(
                    record, self.state, self.schedule, self.config
                )
        except EntropyError as exc:
            raise CodecError(f"Frame {self.t}: {exc}") from exc
        self.state = state
        event = FrameDecoded(
            t=self.t,
            frame_type=record.frame_type,
            q=record.q,
            bits=record.bits,
            refresh=record.refresh_flag,
        )
        self.activity.emit(event)
        self.t += 1
        return frame

    def __iter__(self):
        for record in self.container.records:
            yield self.decode(record)


@dataclass
class EncodeResult:
    container: BitstreamContainer
    reconstructions: List[Frame]
    log: List[FrameCoded]

    @property
    def total_bits(self):
        return sum(entry.bits for entry in self.log)


def encode_sequence(
    clip, config=None, schedule=None, controller=None, listeners=()
):
    """Encode a whole clip.

    With a ``controller`` (see ``ratecontrol.RateController``), q is taken
    from it before each frame and the frame's bits are fed back after.
    """
    frames = list(clip)
    if not frames:
        raise CodecError("Cannot encode an empty clip")
    encoder = SequenceEncoder(
        frames[0].width,
        frames[0].height,
        pix_fmt=getattr(clip, "pix_fmt", "yuv420p"),
        schedule=schedule,
        config=config,
        fps=getattr(clip, "fps", Fraction(30, 1)),
    )
    for listener in listeners:
        encoder.activity.register(listener)
    recons = []
    entries = []
    for frame in frames:
        q = controller.q if controller is not None else None
        event, recon = encoder.encode(frame, q)
        if controller is not None:
            controller.feed(event.bits)
        recons.append(recon)
        entries.append(event)
    return EncodeResult(encoder.container, recons, entries)


def decode_sequence(container, schedule=None, config=None, listeners=()):
    decoder = SequenceDecoder(container, schedule=schedule, config=config)
    for listener in listeners:
        decoder.activity.register(listener)
    return list(decoder)
