import hashlib

import numpy as np


class EventSource(list):
    def register(self, listener):
        self.append(listener)
        return listener

    def emit(self, *args, **kwargs):
        for listener in self:
            listener(*args, **kwargs)


def round_half_away(x):
    """Round to the nearest integer, ties away from zero.

    Works on scalars and arrays; the result keeps the float dtype.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def digest64(text):
    """Unsigned 64-bit digest of a text, stable across platforms."""
    h = hashlib.blake2b(text.encode("utf8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")
