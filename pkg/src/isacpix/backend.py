"""Numerical backend selection.

Hot kernels (scalar denoisers, channel matrix assembly) ship in two
variants: a numba-compiled one and a pure-numpy one. The numpy path is
the reference; set ``ISACPIX_NO_NUMBA=1`` to force it (or simply run
without numba installed).
"""
import os

_TRUTHY = {"1", "true", "yes", "on"}


def numba_requested() -> bool:
    return os.environ.get("ISACPIX_NO_NUMBA", "").strip().lower() not in _TRUTHY


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = numba_requested() and numba_available()
