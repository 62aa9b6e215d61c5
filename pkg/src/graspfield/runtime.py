"""Process-level settings for CPU runs."""

from __future__ import annotations

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3
_tuned = False


def tune_allocator() -> bool:
    """Keep freed heap memory mapped instead of returning it to the OS.

    On hosts where page faults are expensive, glibc's default of unmapping
    large blocks on free makes every fresh tensor pay the fault cost again.
    Raising the mmap and trim thresholds lets the heap recycle those pages.
    Returns False when glibc is unavailable. Safe to call repeatedly.
    """
    global _tuned
    if _tuned:
        return True
    path = ctypes.util.find_library("c")
    if path is None:
        return False
    try:
        libc = ctypes.CDLL(path)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, 32 * 1024 * 1024) and mallopt(_M_TRIM_THRESHOLD, 1 << 30)
    mallopt(_M_TOP_PAD, 64 * 1024 * 1024)
    _tuned = bool(ok)
    return _tuned


def configure(threads: int | None = None, deterministic: bool = True) -> None:
    """Tune the allocator and pin torch threading for reproducible runs."""
    import torch

    tune_allocator()
    if threads is not None:
        torch.set_num_threads(max(1, int(threads)))
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
