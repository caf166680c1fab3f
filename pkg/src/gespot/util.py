"""Small shared helpers: atomic file writes, seed derivation, float formatting."""

import os
import tempfile
import zlib

import numpy as np


def write_text_atomic(path, text):
    """Write text via a temp file + rename so readers never see partial output."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix="~")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bytes_atomic(path, data):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sub_rng(seed, *tags):
    """Derive an independent Generator from a root seed and a list of tags.

    Tags are hashed with crc32 (stable across runs and platforms, unlike
    builtin hash()), so every consumer of randomness gets its own named
    stream off the single top-level seed.
    """
    keys = [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng([int(seed)] + keys)


def fmt_float(x):
    """Shortest decimal string that round-trips to the same float64."""
    return repr(float(x))
