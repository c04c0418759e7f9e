"""Buffer-based rate control that picks q for every frame."""

import logging
from bisect import bisect_right
from dataclasses import dataclass, replace as dc_replace
from fractions import Fraction
from typing import List, Tuple

from .codec import encode_sequence
from .utils import EventSource

log = logging.getLogger(__name__)

Q_MIN = 0
Q_MAX = 63
Q_INIT = 32
PINNED_LIMIT = 50


@dataclass(frozen=True)
class RateControlState:
    cbs: float = 0.0
    tbs: float = 0.0
    q: int = Q_INIT
    afs: float = 1.0
    fidx: int = 0

    replace = dc_replace

    def __post_init__(self):
        if self.afs <= 0:
            raise ValueError(
                f"Average frame size must be positive, not {self.afs}"
            )


def rc_update(state, cfs):
    """Account for a coded frame of ``cfs`` bits and choose the next q.

    q only moves after even frames; ``state.fidx`` is the index of the frame
    that was just coded.
    """
    cbs = state.cbs + cfs
    cbs -= state.afs
    fidx = state.fidx + 1
    if state.fidx % 2 == 1:
        return state.replace(cbs=cbs, fidx=fidx)

    q = state.q
    buff_diff = cbs - state.tbs
    tbs = cbs * 0.95
    if buff_diff > 0:
        if cbs > 10 * cfs:
            q -= 12
        elif cbs > 5 * cfs:
            q -= 6
        elif cbs > 2 * cfs:
            q -= 2
        elif buff_diff > 0.5 * cfs and cbs > -cfs:
            q -= 1
    elif buff_diff < 0:
        if cbs < -10 * cfs:
            q += 12
        elif cbs < -5 * cfs:
            q += 6
        elif cbs < -2 * cfs:
            q += 2
        elif buff_diff < -0.5 * cfs and cbs < cfs:
            q += 1
    q = min(max(q, Q_MIN), Q_MAX)
    return state.replace(cbs=cbs, tbs=tbs, q=q, fidx=fidx)


class TargetSchedule:
    """Piecewise-constant target bitrate, as ``(first_frame, bps)`` steps."""

    def __init__(self, steps):
        steps = sorted((int(frame), float(bps)) for frame, bps in steps)
        if not steps or steps[0][0] != 0:
            raise ValueError("Target schedule must start at frame 0")
        if any(bps <= 0 for _, bps in steps):
            raise ValueError("Target bitrates must be positive")
        self.steps = steps
        self._starts = [frame for frame, _ in steps]

    @classmethod
    def constant(cls, bps):
        return cls([(0, bps)])

    @classmethod
    def parse(cls, text):
        """Parse ``"0:200000,150:50000"``."""
        steps = []
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            try:
                frame, bps = item.split(":")
                steps.append((int(frame), float(bps)))
            except ValueError:
                raise ValueError(
                    f"Bad target schedule entry '{item}', expected frame:bps"
                )
        return cls(steps)

    def bps_at(self, t):
        return self.steps[bisect_right(self._starts, t) - 1][1]


@dataclass
class RcUpdate:
    frame: int
    q: int
    bits: int
    avg_bps: float
    target_bps: float

    def __str__(self):
        return (
            f"rc frame {self.frame} q={self.q} bits={self.bits} "
            f"avg={self.avg_bps:.0f}bps target={self.target_bps:.0f}bps"
        )


class RateController:
    """Feeds coded frame sizes to ``rc_update`` and exposes the next q."""

    def __init__(self, targets, fps, q=Q_INIT):
        self.targets = targets
        self.fps = Fraction(fps)
        self.state = RateControlState(q=q, afs=self._afs(0))
        self.total_bits = 0
        self.activity = EventSource()

    def _afs(self, t):
        return self.targets.bps_at(t) / float(self.fps)

    @property
    def q(self):
        return self.state.q

    def feed(self, bits):
        t = self.state.fidx
        coded_q = self.state.q
        self.state = rc_update(self.state.replace(afs=self._afs(t)), bits)
        self.total_bits += bits
        event = RcUpdate(
            frame=t,
            q=coded_q,
            bits=bits,
            avg_bps=self.total_bits * float(self.fps) / (t + 1),
            target_bps=self.targets.bps_at(t),
        )
        log.debug(str(event))
        self.activity.emit(event)
        return event


@dataclass
class RcRun:
    log: List[RcUpdate]
    realized_bps: float
    unreachable: List[Tuple[int, int]]
    fps: float = 30.0

    def window_bps(self, start, stop=None):
        """Average bitrate over frames ``start:stop``."""
        rows = self.log[start:stop]
        return sum(row.bits for row in rows) * self.fps / len(rows)


def pinned_runs(qs, limit=PINNED_LIMIT):
    """``(first_frame, q)`` for every run of q stuck at an end of the range
    for more than ``limit`` frames."""
    runs = []
    start = 0
    for i in range(1, len(qs) + 1):
        if i == len(qs) or qs[i] != qs[start]:
            if qs[start] in (Q_MIN, Q_MAX) and i - start > limit:
                runs.append((start, qs[start]))
            start = i
    return runs


def rc_run(clip, targets, fps=None, config=None, schedule=None):
    """Encode ``clip`` under rate control and report how close it got."""
    if not isinstance(targets, TargetSchedule):
        targets = TargetSchedule.constant(targets)
    fps = Fraction(fps if fps is not None else getattr(clip, "fps", 30))
    controller = RateController(targets, fps)
    entries = []
    controller.activity.register(entries.append)
    result = encode_sequence(
        clip, config=config, schedule=schedule, controller=controller
    )

    unreachable = pinned_runs([row.q for row in entries])
    for start, q in unreachable:
        log.warning(
            f"Target looks unreachable: q pinned at {q} from frame {start} "
            f"for more than {PINNED_LIMIT} frames"
        )
    realized = result.total_bits * float(fps) / len(entries)
    return RcRun(entries, realized, unreachable, fps=float(fps))
