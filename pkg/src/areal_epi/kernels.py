"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it has been built; otherwise
the numpy implementation in ``_kernels_py`` is used.  Setting the environment
variable ``AREAL_EPI_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("AREAL_EPI_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

nb_terms = _impl.nb_terms
nb_quantile = _impl.nb_quantile
log_rising_ratio = _impl.log_rising_ratio
QMAX = _kernels_py.QMAX

__all__ = ["BACKEND", "nb_terms", "nb_quantile", "log_rising_ratio", "QMAX"]
