"""Rate-distortion measurement: BD-Rate, RD curves, drift and ablations.

CSV layouts are described in ``docs/formats.md``.
"""

import csv
import io
import logging
from dataclasses import asdict, dataclass, is_dataclass
from typing import List, Tuple

import numpy as np
from ovld import ovld
from scipy.interpolate import PchipInterpolator

from .codec import CodecConfig, FrameCoded, encode_sequence
from .entropy import INTER, INTRA
from .transformq import to_schedule

log = logging.getLogger(__name__)

BD_MIN_POINTS = 4
DEFAULT_RD_POINTS = 16
ABLATION_PERIODS = (0, 8, 16, 32, 64, 96)


class CurveError(Exception):
    """RD data that cannot be interpolated or compared."""

    pass


@dataclass(frozen=True)
class RDCurve:
    points: Tuple[Tuple[float, float], ...]
    label: str = ""

    def __post_init__(self):
        points = tuple((float(r), float(d)) for r, d in self.points)
        object.__setattr__(self, "points", points)
        for (r0, d0), (r1, d1) in zip(points, points[1:]):
            if not r1 > r0:
                raise CurveError(
                    f"Curve '{self.label}': bpp must be strictly increasing "
                    f"({r0} then {r1})"
                )
            if d1 < d0:
                raise CurveError(
                    f"Curve '{self.label}': quality drops from {d0} to {d1} "
                    f"as bpp goes from {r0} to {r1}"
                )

    @property
    def bpp(self):
        return np.array([r for r, _ in self.points])

    @property
    def quality(self):
        return np.array([d for _, d in self.points])

    @property
    def bd_ready(self):
        return len(self.points) >= BD_MIN_POINTS

    def __len__(self):
        return len(self.points)


def _log_rate_interpolant(curve):
    if not curve.bd_ready:
        raise CurveError(
            f"Curve '{curve.label}' has {len(curve)} points, BD-Rate needs "
            f"at least {BD_MIN_POINTS}"
        )
    quality = curve.quality
    if np.any(np.diff(quality) <= 0):
        raise CurveError(
            f"Curve '{curve.label}': quality must be strictly increasing "
            "for BD-Rate"
        )
    return PchipInterpolator(quality, np.log(curve.bpp))


def bd_rate(anchor, test):
    """Average bitrate difference of ``test`` against ``anchor``, in percent.

    ln(bpp) is interpolated as a shape-preserving cubic of quality and both
    curves are integrated over the quality interval they share.
    """
    fa = _log_rate_interpolant(anchor)
    ft = _log_rate_interpolant(test)
    lo = max(anchor.quality[0], test.quality[0])
    hi = min(anchor.quality[-1], test.quality[-1])
    if not lo < hi:
        raise CurveError(
            f"Curves '{anchor.label}' and '{test.label}' share no quality "
            f"interval ([{lo}, {hi}])"
        )
    diff = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo)
    return float(np.expm1(diff) * 100) + 0.0


def quality_range(curve):
    if len(curve) < 2:
        raise CurveError(f"Curve '{curve.label}' needs at least 2 points")
    return curve.points[-1][1] - curve.points[0][1]


def default_q_list(q_num=64, count=DEFAULT_RD_POINTS):
    return sorted({int(q) for q in np.round(np.linspace(0, q_num - 1, count))})


def collect_rd_curve(clip, qs=None, config=None, schedule=None, label=""):
    """Encode ``clip`` once per q and collect (bpp, mean weighted PSNR)."""
    schedule = to_schedule(schedule)
    config = config or CodecConfig()
    qs = default_q_list(schedule.q_num) if qs is None else list(qs)
    if qs != sorted(qs):
        raise CurveError(f"q list must be ascending, got {qs}")
    frames = list(clip)
    pixels = frames[0].width * frames[0].height * len(frames)
    points = []
    for q in qs:
        result = encode_sequence(clip, config.replace(q=q), schedule)
        quality = float(np.mean([entry.psnr_weighted for entry in result.log]))
        points.append((result.total_bits / pixels, quality))
        log.debug(f"q={q}: {points[-1][0]:.4f} bpp, {quality:.3f} dB")
    curve = RDCurve(tuple(points), label)
    if not curve.bd_ready:
        log.warning(
            f"Curve '{label}' has {len(curve)} points, below the BD-Rate "
            f"minimum of {BD_MIN_POINTS}"
        )
    return curve


@dataclass
class DriftReport:
    frames: List[Tuple[int, int, float]]
    first_quartile_db: float
    last_quartile_db: float
    slope_db_per_100: float


def drift_report(entries):
    """Quality trend over a per-frame log (``FrameCoded`` entries)."""
    entries = list(entries)
    if not entries:
        raise CurveError("Cannot report drift on an empty log")
    frames = [(e.t, e.bits, e.psnr_weighted) for e in entries]
    index = np.array([f[0] for f in frames], dtype=np.float64)
    quality = np.array([f[2] for f in frames])
    k = max(1, len(frames) // 4)
    slope = np.polyfit(index, quality, 1)[0] * 100 if len(frames) > 1 else 0.0
    return DriftReport(
        frames=frames,
        first_quartile_db=float(quality[:k].mean()),
        last_quartile_db=float(quality[-k:].mean()),
        slope_db_per_100=float(slope),
    )


@dataclass
class AblationRow:
    refresh_period: int
    total_bits: int
    bpp: float
    mean_db: float
    last_quartile_db: float
    bits_delta_pct: float
    db_delta: float


def refresh_ablation(
    clip, q, periods=ABLATION_PERIODS, config=None, schedule=None
):
    """Encode ``clip`` at fixed q for each refresh period.

    Deltas are relative to the first period (0, no refresh, by default).
    """
    config = config or CodecConfig()
    frames = list(clip)
    pixels = frames[0].width * frames[0].height * len(frames)
    rows = []
    base = None
    for period in periods:
        result = encode_sequence(
            clip, config.replace(q=q, refresh_period=period), schedule
        )
        report = drift_report(result.log)
        mean_db = float(np.mean([e.psnr_weighted for e in result.log]))
        bits = result.total_bits
        if base is None:
            base = (bits, report.last_quartile_db)
        rows.append(
            AblationRow(
                refresh_period=period,
                total_bits=bits,
                bpp=bits / pixels,
                mean_db=mean_db,
                last_quartile_db=report.last_quartile_db,
                bits_delta_pct=(bits / base[0] - 1) * 100,
                db_delta=report.last_quartile_db - base[1],
            )
        )
    return rows


@ovld
def csv_row(entry: FrameCoded):
    return {
        "t": entry.t,
        "type": entry.type_name,
        "q": entry.q,
        "bits": entry.bits,
        "psnr_weighted": f"{entry.psnr_weighted:.6f}",
        "refresh": int(entry.refresh),
    }


@ovld
def csv_row(entry: object):
    if is_dataclass(entry):
        row = asdict(entry)
        return {
            k: (v.value if hasattr(v, "value") else v) for k, v in row.items()
        }
    raise TypeError(f"No CSV layout for {type(entry).__name__}")


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return f"{x:.6f}"


@ovld
def render(curve: RDCurve, fmt: str):
    if fmt == "csv":
        return _csv_text(
            ["label", "bpp", "quality_db"],
            [[curve.label, _fmt(r), _fmt(d)] for r, d in curve.points],
        )
    elif fmt == "svg":
        return svg_chart(
            [(curve.label, curve.bpp, curve.quality)],
            xlabel="bpp",
            ylabel="weighted PSNR (dB)",
            title=curve.label or "RD curve",
        )
    raise ValueError(f"Unknown format: '{fmt}'")


@ovld
def render(report: DriftReport, fmt: str):
    if fmt == "csv":
        text = _csv_text(
            ["t", "bits", "psnr_weighted"],
            [[t, bits, _fmt(q)] for t, bits, q in report.frames],
        )
        summary = _csv_text(
            ["first_quartile_db", "last_quartile_db", "slope_db_per_100"],
            [
                [
                    _fmt(report.first_quartile_db),
                    _fmt(report.last_quartile_db),
                    _fmt(report.slope_db_per_100),
                ]
            ],
        )
        return text + "\n" + summary
    elif fmt == "svg":
        return svg_chart(
            [
                (
                    "weighted PSNR",
                    [f[0] for f in report.frames],
                    [f[2] for f in report.frames],
                )
            ],
            xlabel="frame",
            ylabel="weighted PSNR (dB)",
            title="Quality across frames",
        )
    raise ValueError(f"Unknown format: '{fmt}'")


@ovld
def render(entries: list, fmt: str):
    if fmt != "csv":
        raise ValueError(
            f"Per-frame tables are only written as CSV, not '{fmt}'"
        )
    if not entries:
        return ""
    rows = [csv_row(e) for e in entries]
    header = list(rows[0])
    return _csv_text(header, [[row[k] for k in header] for row in rows])


def emit(obj, path, fmt="csv"):
    """Write ``obj`` as CSV or SVG to ``path`` (``"-"`` for stdout)."""
    text = render(obj, fmt)
    if path == "-":
        print(text, end="")
    else:
        with open(path, "w", newline="") as f:
            f.write(text)
    return text


def svg_chart(series, xlabel, ylabel, title, width=640, height=400):
    """Poly-line chart with axes, as self-contained SVG text."""
    left, right, top, bottom = 70, 20, 40, 50
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw = width - left - right
    ph = height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.2f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" '
        'stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" '
        'stroke="black"/>',
        f'<text x="{left + pw / 2:.2f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.2f})">{ylabel}</text>',
    ]
    for value, anchor in ((x0, "start"), (x1, "end")):
        out.append(
            f'<text x="{px(value):.2f}" y="{top + ph + 16}" text-anchor="{anchor}" '
            f'font-family="sans-serif" font-size="10">{value:.4g}</text>'
        )
    for value in (y0, y1):
        out.append(
            f'<text x="{left - 6}" y="{py(value):.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{value:.4g}</text>'
        )
    for i, (label, xs, ys) in enumerate(series):
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        color = colors[i % len(colors)]
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{pts}"/>'
        )
        out.append(
            f'<text x="{left + pw - 4}" y="{top + 14 + 14 * i}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def read_rd_curve(path):
    rows = _read_csv(path)
    try:
        points = tuple((float(r["bpp"]), float(r["quality_db"])) for r in rows)
    except (KeyError, ValueError) as exc:
        raise CurveError(
            f"{path}: expected label,bpp,quality_db columns ({exc})"
        )
    label = rows[0]["label"] if rows else ""
    return RDCurve(points, label)


def read_frame_log(path):
    rows = _read_csv(path)
    try:
        return [
            FrameCoded(
                t=int(r["t"]),
                frame_type=INTRA if r["type"] == "intra" else INTER,
                q=int(r["q"]),
                bits=int(r["bits"]),
                psnr_weighted=float(r["psnr_weighted"]),
                refresh=bool(int(r["refresh"])),
            )
            for r in rows
        ]
    except (KeyError, ValueError) as exc:
        raise CurveError(f"{path}: not a frame log ({exc})")
