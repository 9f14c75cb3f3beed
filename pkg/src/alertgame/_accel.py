"""Backend switch for the hot loops.

Kernels are written once in the subset of Python that numba understands.
With numba available they are compiled with ``@njit``; setting
``ALERTGAME_DISABLE_NUMBA=1`` runs the very same functions under the plain
interpreter (numpy arrays, Python scalars), which is slow but handy for
debugging and for cross-checking the compiled path.
"""

import os

_FLAG = os.environ.get("ALERTGAME_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    USE_NUMBA = True
except ImportError:
    USE_NUMBA = False
    _njit = None


def jit(func=None, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` or the identity decorator."""
    if not USE_NUMBA:
        if func is None:
            return lambda f: f
        return func
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)
    if func is None:
        return _njit(**opts)
    return _njit(**opts)(func)


BACKEND = "numba" if USE_NUMBA else "python"
