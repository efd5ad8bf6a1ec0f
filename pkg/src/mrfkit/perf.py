"""Process-level performance knobs for the numpy-heavy training loop."""

from __future__ import annotations

import ctypes

_tuned = False


def tune_allocator() -> bool:
    """Raise glibc's mmap/trim thresholds so multi-megabyte temporaries are
    recycled through the heap instead of being mmap'ed and returned to the
    OS on every release (which page-faults each reuse). Safe to call more
    than once; returns False on platforms without glibc mallopt."""
    global _tuned
    if _tuned:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6")
        m_mmap_threshold, m_trim_threshold = -3, -1
        ok = libc.mallopt(m_mmap_threshold, 1 << 30) == 1
        ok = libc.mallopt(m_trim_threshold, 1 << 30) == 1 and ok
        _tuned = ok
        return ok
    except OSError:
        return False
