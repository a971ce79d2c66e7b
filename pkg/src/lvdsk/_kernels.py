"""Kernel backend selection.

The compiled extension is used when importable; setting the environment
variable ``LVDSK_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("LVDSK_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def component_terms(X, means, inv_var, log_norm, dof, student, impl=None):
    impl = impl or _impl
    return impl.component_terms(_c(X), _c(means), _c(inv_var), _c(log_norm), _c(dof), bool(student))


def bank_loglik(X, log_w, means, inv_var, log_norm, dof, student, impl=None):
    impl = impl or _impl
    return impl.bank_loglik(
        _c(X), _c(log_w), _c(means), _c(inv_var), _c(log_norm), _c(dof), bool(student)
    )


def log_posterior(log_joint, impl=None):
    impl = impl or _impl
    return impl.log_posterior(_c(log_joint))


def available_backends():
    """Map of backend name to implementation module, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
