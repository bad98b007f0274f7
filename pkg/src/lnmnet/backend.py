"""Kernel backend selection.

The compiled extension is preferred when present; ``LNMNET_BACKEND=python``
or ``LNMNET_BACKEND=cython`` forces a choice.  Both backends are
bit-identical by contract, so selection affects speed only.
"""

import os

_forced = os.environ.get("LNMNET_BACKEND", "").strip().lower()

if _forced == "python":
    from lnmnet import _kernels_py as kernels
elif _forced == "cython":
    from lnmnet import _kernels as kernels  # type: ignore[no-redef]
elif _forced == "":
    try:
        from lnmnet import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from lnmnet import _kernels_py as kernels  # type: ignore[no-redef]
else:
    raise RuntimeError(f"unknown LNMNET_BACKEND value: {_forced!r}")


def backend_name() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return kernels.BACKEND_NAME
