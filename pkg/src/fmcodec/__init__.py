from .codec import (
    CodecConfig,
    SequenceDecoder,
    SequenceEncoder,
    decode_sequence,
    encode_sequence,
)
from .entropy import BitstreamContainer
from .evalkit import RDCurve, bd_rate, collect_rd_curve
from .pixels import Clip, Frame, PixelFormat, load_raw, psnr
from .ratecontrol import RateController, rc_run
from .transformq import QuantSchedule
from .version import version as __version__

__all__ = [
    "CodecConfig",
    "SequenceDecoder",
    "SequenceEncoder",
    "decode_sequence",
    "encode_sequence",
    "BitstreamContainer",
    "RDCurve",
    "bd_rate",
    "collect_rd_curve",
    "Clip",
    "Frame",
    "PixelFormat",
    "load_raw",
    "psnr",
    "RateController",
    "rc_run",
    "QuantSchedule",
    "__version__",
]
