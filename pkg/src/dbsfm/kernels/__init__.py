"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is picked once at import time from the ``DBSFM_BACKEND``
environment variable: ``numba`` (default when numba imports cleanly) or
``numpy``. Matrix products stay on numpy/BLAS either way; the kernels here
cover the fused elementwise/reduction passes that dominate a training step:
layer normalization, row softmax, the AdamW update, and the masked weighted
mean-absolute-error loss.

Both backends implement the same math. Results agree to floating-point
round-off but are not guaranteed bit-identical across backends; determinism
guarantees hold per backend.
"""

import os

from dbsfm.errors import ConfigError

_ENV_VAR = "DBSFM_BACKEND"
_VALID = ("numba", "numpy")


def _select_backend() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested and requested not in _VALID:
        raise ConfigError(
            f"{_ENV_VAR}={requested!r} is not valid; choose one of {_VALID}"
        )
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise ConfigError(
                f"{_ENV_VAR}=numba requested but numba is not importable"
            )
        return "numpy"
    return "numba"


BACKEND = _select_backend()

if BACKEND == "numba":
    from dbsfm.kernels import _numba as _impl
else:
    from dbsfm.kernels import _numpy as _impl

layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
adamw_update = _impl.adamw_update
masked_wmae_fwd = _impl.masked_wmae_fwd
masked_wmae_bwd = _impl.masked_wmae_bwd

__all__ = [
    "BACKEND",
    "layer_norm_fwd",
    "layer_norm_bwd",
    "softmax_fwd",
    "softmax_bwd",
    "adamw_update",
    "masked_wmae_fwd",
    "masked_wmae_bwd",
]
