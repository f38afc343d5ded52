"""Kernel backend selection.

The Cython extension is used when it was built; otherwise (or when
``ANTISPOOF_PURE_PYTHON`` is set) the numpy versions are used. Both expose
the same functions; results agree to rounding.
"""

import os

from . import _pykernels

if os.environ.get("ANTISPOOF_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

cqt_direct = _impl.cqt_direct
gmm_log_joint = _impl.gmm_log_joint
