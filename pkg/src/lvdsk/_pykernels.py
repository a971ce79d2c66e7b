"""Numpy implementations of the hot kernels.

Same signatures as the compiled ``_ckernels`` module; used when the
extension is not built or when ``LVDSK_PURE_PYTHON`` is set.
"""

import numpy as np


def component_terms(X, means, inv_var, log_norm, dof, student):
    """Per-component log-densities and squared Mahalanobis distances.

    Parameters
    ----------
    X : ndarray, shape (T, D)
    means, inv_var : ndarray, shape (K, D)
    log_norm : ndarray, shape (K,)
        Log normalising constant of each component.
    dof : ndarray, shape (K,)
        Degrees of freedom; ignored unless ``student``.
    student : bool

    Returns
    -------
    logpdf, maha : ndarray, shape (T, K)
    """
    diff = X[:, None, :] - means[None, :, :]
    maha = np.einsum("tkd,tkd,kd->tk", diff, diff, inv_var)
    if student:
        D = X.shape[1]
        logpdf = log_norm[None, :] - 0.5 * (dof + D)[None, :] * np.log1p(maha / dof[None, :])
    else:
        logpdf = log_norm[None, :] - 0.5 * maha
    return logpdf, maha


def _logsumexp_rows(a):
    amax = a.max(axis=1)
    safe = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))
    out[~np.isfinite(amax)] = -np.inf
    return out


def bank_loglik(X, log_w, means, inv_var, log_norm, dof, student):
    """Log-density of every frame under every mixture of a bank.

    Shapes: ``X`` (T, D); ``log_w``, ``log_norm``, ``dof`` (C, K);
    ``means``, ``inv_var`` (C, K, D). Returns (T, C).
    """
    T = X.shape[0]
    C = log_w.shape[0]
    out = np.empty((T, C))
    for c in range(C):
        comp, _ = component_terms(X, means[c], inv_var[c], log_norm[c], dof[c], student)
        out[:, c] = _logsumexp_rows(comp + log_w[c][None, :])
    return out


def log_posterior(log_joint):
    """Normalise each row of a log-joint table.

    Returns the posterior table (exact zeros where ``log_joint`` is -inf)
    and the per-row log normaliser, which is -inf for an all -inf row.
    """
    ll = _logsumexp_rows(log_joint)
    safe = np.where(np.isfinite(ll), ll, 0.0)
    post = np.exp(log_joint - safe[:, None])
    post[~np.isfinite(ll)] = 0.0
    return post, ll
