import argparse
import logging
import sys
import traceback
from fractions import Fraction

import blessed
import numpy as np
from ovld import ovld

from .clips import CLIP_NAMES, generate_clip
from .codec import (
    CodecConfig,
    CodecError,
    FrameCoded,
    FrameDecoded,
    decode_sequence,
    encode_sequence,
)
from .entropy import BitstreamContainer, ContainerError, EntropyError
from .evalkit import (
    ABLATION_PERIODS,
    CurveError,
    bd_rate,
    collect_rd_curve,
    default_q_list,
    emit,
    read_rd_curve,
    refresh_ablation,
)
from .motion import WarpPrecisionMode, random_field, warp_error_stats
from .pixels import (
    Clip,
    Frame,
    FrameError,
    PixelFormat,
    load_raw,
    psnr,
    write_raw,
    write_y4m,
)
from .ratecontrol import RateController, RcUpdate, TargetSchedule, rc_run
from .transformq import (
    CalibrationError,
    ScheduleError,
    calibrate_scaler_bounds,
    to_schedule,
)
from .version import version

log = logging.getLogger(__name__)
T = blessed.Terminal()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4

DATA_ERRORS = (
    FrameError,
    ContainerError,
    EntropyError,
    CurveError,
    CalibrationError,
    CodecError,
)


class ValidationError(Exception):
    """Command-line flags that are individually valid but unusable together."""

    pass


@ovld
def default_logger(event: FrameCoded):
    if event.frame_type == 0:
        print(T.bold_green(str(event)))
    elif event.refresh:
        print(T.bold_yellow(str(event)))
    else:
        print(str(event))


@ovld
def default_logger(event: FrameDecoded):
    if event.refresh:
        print(T.bold_yellow(str(event)))
    else:
        print(str(event))


@ovld
def default_logger(event: RcUpdate):
    print(T.bold(str(event)))


@ovld
def default_logger(exc: Exception):
    lines = traceback.format_exception(type(exc), exc, exc.__traceback__)
    print(T.bold_red("".join(lines)), file=sys.stderr)


@ovld
def default_logger(event: object):
    print(event)


def conservative_logger(event):
    if isinstance(event, Exception):
        default_logger(event)


def _load_clip(opts):
    return load_raw(
        opts.input, opts.width, opts.height, opts.pix_fmt, fps=opts.fps
    )


def _write_frames(path, frames, pix_fmt, fps):
    if path.endswith(".y4m"):
        if pix_fmt != "yuv420p":
            raise ValidationError("y4m output is only written for yuv420p")
        write_y4m(path, Clip(frames, fps=fps, pix_fmt=pix_fmt))
    else:
        write_raw(path, frames, pix_fmt)


def _config(opts, schedule):
    q = 32 if getattr(opts, "q", None) is None else opts.q
    if not 0 <= q < schedule.q_num:
        raise ValidationError(
            f"--q must be in [0, {schedule.q_num - 1}], not {q}"
        )
    try:
        return CodecConfig(
            q=q,
            refresh_period=opts.refresh_period,
            intra_period=opts.intra_period,
            search_range=opts.search_range,
        )
    except CodecError as exc:
        raise ValidationError(str(exc))


def _targets(opts):
    try:
        if opts.rc_target_schedule:
            return TargetSchedule.parse(opts.rc_target_schedule)
        elif opts.rc_target_bps is not None:
            return TargetSchedule.constant(opts.rc_target_bps)
    except ValueError as exc:
        raise ValidationError(str(exc))
    return None


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_encode(opts, logger):
    schedule = to_schedule(opts.schedule)
    config = _config(opts, schedule)
    clip = _load_clip(opts)
    targets = _targets(opts)
    controller = RateController(targets, clip.fps) if targets else None
    if controller:
        controller.activity.register(logger)
    result = encode_sequence(
        clip, config, schedule, controller=controller, listeners=[logger]
    )
    result.container.write(opts.output)
    if opts.log:
        emit(result.log, opts.log, "csv")
    if opts.recon:
        recon = result.reconstructions
        _write_frames(opts.recon, recon, clip.pix_fmt, clip.fps)
    mean_db = np.mean([e.psnr_weighted for e in result.log])
    print(
        f"{len(result.log)} frames, {result.total_bits} bits, "
        f"{result.total_bits * float(clip.fps) / len(result.log):.0f} bps, "
        f"weighted PSNR {mean_db:.3f} dB"
    )
    return EXIT_OK


def cmd_decode(opts, logger):
    schedule = to_schedule(opts.schedule)
    container = BitstreamContainer.read(opts.input)
    decoded = []
    frames = decode_sequence(
        container, schedule, listeners=[logger, decoded.append]
    )
    fps = Fraction(container.fps_num, container.fps_den)
    _write_frames(opts.output, frames, container.pix_fmt, fps)
    if opts.log:
        emit(decoded, opts.log, "csv")
    print(f"{len(frames)} frames decoded")
    return EXIT_OK


def cmd_psnr(opts, logger):
    a = load_raw(opts.a, opts.width, opts.height, opts.pix_fmt)
    b = load_raw(opts.b, opts.width, opts.height, opts.pix_fmt)
    if len(a) != len(b) or not len(a):
        raise FrameError(
            f"Frame counts differ or are zero: {len(a)} vs {len(b)}"
        )
    reports = [psnr(fa, fb, opts.cap) for fa, fb in zip(a, b)]
    if opts.log:
        emit(reports, opts.log, "csv")
    keys = ["psnr_y", "psnr_u", "psnr_v", "psnr_weighted"]
    if reports[0].psnr_rgb is not None:
        keys.append("psnr_rgb")
    print(
        " ".join(
            f"{k}={np.mean([getattr(r, k) for r in reports]):.3f}" for k in keys
        )
    )
    return EXIT_OK


def cmd_bdrate(opts, logger):
    anchor = read_rd_curve(opts.anchor)
    test = read_rd_curve(opts.test)
    print(f"{bd_rate(anchor, test):.2f}%")
    return EXIT_OK


def cmd_rc_sim(opts, logger):
    schedule = to_schedule(opts.schedule)
    config = _config(opts, schedule)
    targets = _targets(opts)
    if targets is None:
        raise ValidationError(
            "rc-sim needs --rc-target-bps or --rc-target-schedule"
        )
    clip = _load_clip(opts)
    run = rc_run(clip, targets, clip.fps, config, schedule)
    if opts.log:
        emit(run.log, opts.log, "csv")
    for start, q in run.unreachable:
        print(
            T.bold_yellow(
                f"target unreachable: q pinned at {q} from frame {start}"
            )
        )
    print(f"realized {run.realized_bps:.0f} bps")
    return EXIT_OK


def cmd_warp_bench(opts, logger):
    rng = np.random.default_rng(opts.seed)
    planes = rng.uniform(0, 255, size=(3, opts.height, opts.width))
    reference = Frame.from_stack(planes, PixelFormat.YUV444R)
    field = random_field(opts.width, opts.height, rng, opts.max_half_pel)
    rows = [
        warp_error_stats(reference, field, mode, opts.rel_tol, opts.abs_tol)
        for mode in WarpPrecisionMode
    ]
    emit(rows, opts.output, "csv")
    return EXIT_OK


def cmd_gen_clip(opts, logger):
    clip = generate_clip(
        opts.name,
        width=opts.width,
        height=opts.height,
        frames=opts.frames,
        seed=opts.seed,
        pix_fmt=opts.pix_fmt,
        fps=opts.fps,
    )
    _write_frames(opts.output, clip.frames, clip.pix_fmt, clip.fps)
    return EXIT_OK


def cmd_calibrate(opts, logger):
    schedule = to_schedule(opts.schedule)
    clip = _load_clip(opts)
    s_enc_min, s_enc_max, s_dec_min, s_dec_max = calibrate_scaler_bounds(
        clip, schedule, seed=opts.seed, max_blocks=opts.max_blocks
    )
    calibrated = schedule.replace(
        s_enc_min=s_enc_min,
        s_enc_max=s_enc_max,
        s_dec_min=s_dec_min,
        s_dec_max=s_dec_max,
    )
    calibrated.save(opts.output)
    print(calibrated.to_cfg(), end="")
    return EXIT_OK


def cmd_ablation(opts, logger):
    schedule = to_schedule(opts.schedule)
    config = _config(opts, schedule)
    clip = _load_clip(opts)
    periods = _int_list(opts.periods)
    rows = refresh_ablation(clip, config.q, periods, config, schedule)
    emit(rows, opts.output, "csv")
    return EXIT_OK


def cmd_rdcurve(opts, logger):
    schedule = to_schedule(opts.schedule)
    config = _config(opts, schedule)
    clip = _load_clip(opts)
    qs = _int_list(opts.qs) if opts.qs else default_q_list(schedule.q_num)
    for q in qs:
        if not 0 <= q < schedule.q_num:
            raise ValidationError(f"q={q} is outside [0, {schedule.q_num - 1}]")
    curve = collect_rd_curve(clip, qs, config, schedule, opts.label)
    emit(curve, opts.output, "csv")
    if opts.svg:
        emit(curve, opts.svg, "svg")
    return EXIT_OK


def _input_args(p, with_fps=True):
    p.add_argument("--input", "-i", required=True, help="Raw or y4m input file")
    p.add_argument("--width", type=int, help="Frame width (raw input)")
    p.add_argument("--height", type=int, help="Frame height (raw input)")
    p.add_argument(
        "--pix-fmt",
        choices=("yuv420p", "rgb24"),
        default="yuv420p",
        help="Pixel format of raw input",
    )
    if with_fps:
        p.add_argument("--fps", type=float, default=None, help="Frame rate")


def _coding_args(p):
    p.add_argument("--refresh-period", type=int, default=32)
    p.add_argument("--intra-period", type=int, default=-1)
    p.add_argument("--search-range", type=int, default=16)
    p.add_argument("--schedule", default=None, help="schedule.cfg to use")


def _rc_args(group):
    group.add_argument("--rc-target-bps", type=int, default=None)
    group.add_argument(
        "--rc-target-schedule",
        default=None,
        help="Piecewise targets as frame:bps,frame:bps,...",
    )


def make_parser():
    parser = argparse.ArgumentParser(
        prog="fmcodec",
        description="Low-delay video codec and rate-distortion toolkit.",
    )
    parser.add_argument(
        "--verbose",
        "-v",
        action="store_true",
        help="Show per-frame events and debug logs",
    )
    parser.add_argument("--version", action="store_true", help="Print version")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("encode", help="Encode a clip into a .fmc container")
    _input_args(p)
    _coding_args(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--q", type=int, default=None, help="Fixed q (0..63)")
    _rc_args(group)
    p.add_argument("--output", "-o", required=True, help="Output .fmc file")
    p.add_argument("--log", default=None, help="Per-frame CSV log")
    p.add_argument(
        "--recon", default=None, help="Write encoder reconstructions"
    )
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="Decode a .fmc container")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--output", "-o", required=True, help="Raw or .y4m output")
    p.add_argument("--log", default=None, help="Per-frame CSV log")
    p.add_argument("--schedule", default=None, help="schedule.cfg to use")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("psnr", help="Compare two clips")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--pix-fmt", choices=("yuv420p", "rgb24"), default="yuv420p")
    p.add_argument("--cap", type=float, default=100.0)
    p.add_argument("--log", default=None, help="Per-frame CSV")
    p.set_defaults(func=cmd_psnr)

    p = sub.add_parser("bdrate", help="BD-Rate between two RD curve CSVs")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("rc-sim", help="Encode under rate control")
    _input_args(p)
    _coding_args(p)
    _rc_args(p.add_mutually_exclusive_group(required=True))
    p.add_argument("--log", default=None, help="Per-frame rate control CSV")
    p.set_defaults(func=cmd_rc_sim)

    p = sub.add_parser("warp-bench", help="Half-precision warp error study")
    p.add_argument("--width", type=int, default=1920)
    p.add_argument("--height", type=int, default=1080)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-half-pel", type=int, default=32)
    p.add_argument("--rel-tol", type=float, default=1e-2)
    p.add_argument("--abs-tol", type=float, default=1e-3)
    p.add_argument("--output", "-o", default="-")
    p.set_defaults(func=cmd_warp_bench)

    p = sub.add_parser("gen-clip", help="Write a bundled synthetic clip")
    p.add_argument("--name", choices=CLIP_NAMES, default="pan")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=int, default=30)
    p.add_argument("--pix-fmt", choices=("yuv420p", "rgb24"), default="yuv420p")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_gen_clip)

    p = sub.add_parser("calibrate", help="Calibrate scaler bounds on a clip")
    _input_args(p)
    p.add_argument("--schedule", default=None, help="Base schedule.cfg")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-blocks", type=int, default=48)
    p.add_argument(
        "--output", "-o", required=True, help="schedule.cfg to write"
    )
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ablation", help="Refresh period ablation")
    _input_args(p)
    _coding_args(p)
    p.add_argument("--q", type=int, default=32)
    p.add_argument(
        "--periods", default=",".join(str(x) for x in ABLATION_PERIODS)
    )
    p.add_argument("--output", "-o", default="-")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("rdcurve", help="Collect an RD curve")
    _input_args(p)
    _coding_args(p)
    p.add_argument("--qs", default=None, help="Comma-separated q values")
    p.add_argument("--label", default="")
    p.add_argument("--output", "-o", default="-")
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_rdcurve)

    return parser


def exit_code(exc):
    if isinstance(exc, (ValidationError, ScheduleError)):
        return EXIT_USAGE
    elif isinstance(exc, DATA_ERRORS):
        return EXIT_DATA
    elif isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_FAILURE


def run(argv=None):
    parser = make_parser()
    try:
        opts = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    if opts.version:
        print(version)
        return EXIT_OK
    if not opts.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    if opts.verbose:
        logging.basicConfig(level=logging.DEBUG)
    logger = default_logger if opts.verbose else conservative_logger

    try:
        return opts.func(opts, logger)
    except Exception as exc:
        if opts.verbose:
            logger(exc)
        print(T.bold_red(f"error: {exc}"), file=sys.stderr)
        return exit_code(exc)


def main():  # pragma: no cover
    sys.exit(run())
