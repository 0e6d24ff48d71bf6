"""Pick the kernel implementation at import time.

The compiled ``_ckernels`` extension is used when it imports; otherwise, or
when ``RELBOLTZ_PURE_PYTHON`` is set to a non-empty value other than ``0``,
the numpy fallback is used.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)


def _load():
    if os.environ.get("RELBOLTZ_PURE_PYTHON", "0") not in ("", "0"):
        return _pykernels, "python"
    try:
        from . import _ckernels
    except ImportError as exc:
        logger.debug("compiled kernels unavailable: %s", exc)
        return _pykernels, "python"
    return _ckernels, "compiled"


kernels, BACKEND = _load()


def available_backends():
    """Map backend name -> kernel module for every importable implementation."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["compiled"] = _ckernels
    return out
