"""Kernel backend selection.

The compiled extension (``fedanom.backends._fastpath``) is used when it
imported cleanly; otherwise the pure numpy module is a drop-in
replacement. Set ``FEDANOM_BACKEND=pure`` or ``FEDANOM_BACKEND=cython``
to force one side (forcing the extension raises if it is unavailable).
"""

import os

from fedanom.backends import pure

_forced = os.environ.get("FEDANOM_BACKEND", "").strip().lower()

if _forced == "pure":
    active = pure
elif _forced == "cython":
    from fedanom.backends import _fastpath as active
elif _forced:
    raise ImportError(f"unknown FEDANOM_BACKEND value: {_forced!r}")
else:
    try:
        from fedanom.backends import _fastpath as active
    except ImportError:
        active = pure


def get_backend():
    """Return the active kernel module (has a NAME attribute)."""
    return active
