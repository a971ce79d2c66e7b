import os
import subprocess
import sys

import numpy as np
import pytest

from lvdsk import _kernels, _pykernels

from conftest import BACKENDS


def _params(rng, C=4, K=3, D=5):
    log_w = np.log(rng.dirichlet(np.ones(K), size=C))
    means = rng.normal(size=(C, K, D))
    inv_var = 1.0 / rng.uniform(0.2, 2.0, (C, K, D))
    log_norm = rng.normal(size=(C, K))
    dof = rng.uniform(2.5, 30.0, (C, K))
    return log_w, means, inv_var, log_norm, dof


@pytest.mark.parametrize("student", [False, True])
def test_component_terms_matches_loop(backend, rng, student):
    X = rng.normal(size=(7, 4))
    means = rng.normal(size=(3, 4))
    inv_var = rng.uniform(0.5, 2.0, (3, 4))
    log_norm = rng.normal(size=3)
    dof = rng.uniform(3, 10, 3)
    logpdf, maha = backend.component_terms(X, means, inv_var, log_norm, dof, student)
    for t in range(7):
        for k in range(3):
            m = sum((X[t, d] - means[k, d]) ** 2 * inv_var[k, d] for d in range(4))
            lp = log_norm[k] - (0.5 * (dof[k] + 4) * np.log1p(m / dof[k]) if student else 0.5 * m)
            assert maha[t, k] == pytest.approx(m, rel=1e-13)
            assert logpdf[t, k] == pytest.approx(lp, rel=1e-13)


@pytest.mark.parametrize("student", [False, True])
def test_backends_agree_on_bank_loglik(rng, student):
    X = rng.normal(size=(50, 5))
    args = _params(rng)
    ref = _pykernels.bank_loglik(X, *args, student)
    for impl in BACKENDS.values():
        np.testing.assert_allclose(impl.bank_loglik(X, *args, student), ref, rtol=1e-12, atol=1e-12)


def test_bank_loglik_padded_components(backend, rng):
    X = rng.normal(size=(6, 2))
    log_w, means, inv_var, log_norm, dof = _params(rng, C=1, K=3, D=2)
    log_w[0, 2] = -np.inf
    full = backend.bank_loglik(X, log_w, means, inv_var, log_norm, dof, False)
    trimmed = backend.bank_loglik(X, np.ascontiguousarray(log_w[:, :2]), np.ascontiguousarray(means[:, :2]),
                                  np.ascontiguousarray(inv_var[:, :2]), np.ascontiguousarray(log_norm[:, :2]),
                                  np.ascontiguousarray(dof[:, :2]), False)
    np.testing.assert_allclose(full, trimmed, rtol=1e-14)


def test_log_posterior(backend, rng):
    lj = rng.normal(size=(5, 6)) * 30
    lj[0, :3] = -np.inf
    lj[1, :] = -np.inf
    post, ll = backend.log_posterior(lj)
    assert np.all(post[0, :3] == 0.0)
    assert np.all(post[1] == 0.0) and ll[1] == -np.inf
    rows = [0, 2, 3, 4]
    np.testing.assert_allclose(post[rows].sum(axis=1), 1.0, atol=1e-14)
    with np.errstate(divide="ignore"):
        expect = np.log(np.exp(lj[2] - lj[2].max()).sum()) + lj[2].max()
    assert ll[2] == pytest.approx(expect, rel=1e-14)


def test_compiled_backend_is_default_when_built():
    if "cython" not in BACKENDS:
        pytest.skip("extension not built")
    assert _kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    code = "from lvdsk import _kernels; print(_kernels.BACKEND)"
    env = dict(os.environ, LVDSK_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
