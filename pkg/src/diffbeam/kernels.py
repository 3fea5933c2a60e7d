"""Backend selection for the DP kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``DIFFBEAM_PURE=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("DIFFBEAM_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

target_forward = _impl.target_forward
target_backward = _impl.target_backward
target_viterbi = _impl.target_viterbi
full_forward = _impl.full_forward
full_backward = _impl.full_backward
lattice_forward = _impl.lattice_forward
lattice_adjoint = _impl.lattice_adjoint
