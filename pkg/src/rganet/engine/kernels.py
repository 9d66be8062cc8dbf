"""Kernel backend selection.

The compiled core (``_ckernels``) is used when it was built; otherwise the
numpy implementation takes over. Set ``RGANET_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _pykernels

python_impl = _pykernels
compiled_impl = None

if os.environ.get("RGANET_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as compiled_impl
    except ImportError:
        compiled_impl = None

_active = compiled_impl if compiled_impl is not None else python_impl
BACKEND = "cython" if _active is compiled_impl else "python"

im2col = _active.im2col
col2im = _active.col2im
