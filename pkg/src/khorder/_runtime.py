"""Process-level tuning for the training loop."""

from __future__ import annotations

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator() -> bool:
    """Keep freed blocks in the glibc heap instead of unmapping them.

    Training allocates and frees the same multi-megabyte temporaries every
    step; by default glibc serves them with fresh ``mmap`` calls and pays the
    page faults each time.  Returns whether the tuning was applied.
    """
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, 32 * 2**20) == 1
    ok &= mallopt(_M_TRIM_THRESHOLD, 512 * 2**20) == 1
    ok &= mallopt(_M_TOP_PAD, 64 * 2**20) == 1
    _done = bool(ok)
    return _done
