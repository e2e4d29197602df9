"""Kernel-level tests: numpy oracles, dtype handling, backend parity."""

import numpy as np
import pytest

from oelab import backend
from oelab import _kernels_py as pure

BACKENDS = list(backend.available_backends().items())


def _rng(seed=0):
    return np.random.default_rng(seed)


@pytest.fixture(params=BACKENDS, ids=[name for name, _ in BACKENDS])
def kern(request):
    return request.param[1]


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_layer_norm_forward_matches_numpy(kern, dtype):
    x = _rng(1).standard_normal((7, 5)).astype(dtype)
    gamma = _rng(2).standard_normal(5).astype(dtype)
    beta = _rng(3).standard_normal(5).astype(dtype)
    eps = 1e-5
    y, mean, rstd = kern.layer_norm_forward(x, gamma, beta, eps)
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    ref = (x - mu) / np.sqrt(var + eps) * gamma + beta
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(y, ref, rtol=tol, atol=tol)
    np.testing.assert_allclose(mean, mu[:, 0], rtol=tol, atol=tol)
    np.testing.assert_allclose(rstd, 1.0 / np.sqrt(var[:, 0] + eps), rtol=tol, atol=tol)
    assert y.dtype == dtype


def test_softmax_rows_sum_to_one(kern):
    x = (_rng(4).standard_normal((6, 9)) * 20).astype(np.float64)
    y = kern.softmax_forward(x)
    np.testing.assert_allclose(y.sum(axis=1), np.ones(6), rtol=1e-12)
    assert (y >= 0).all()


def test_softmax_shift_invariance(kern):
    x = _rng(5).standard_normal((4, 6))
    y1 = kern.softmax_forward(x)
    y2 = kern.softmax_forward(x + 100.0)
    np.testing.assert_allclose(y1, y2, rtol=1e-12, atol=1e-14)


def test_logsumexp_matches_oracle_and_handles_neg_inf(kern):
    x = _rng(6).standard_normal((5, 7)) * 10
    x[0, :3] = -np.inf
    x[2, :] = -np.inf  # fully masked row
    lse = kern.logsumexp_forward(x)
    m = np.max(x, axis=1)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    ref = safe_m + np.log(np.exp(x - safe_m[:, None]).sum(axis=1))
    ref[~np.isfinite(m)] = -np.inf
    np.testing.assert_allclose(lse[np.isfinite(ref)], ref[np.isfinite(ref)], rtol=1e-12)
    assert lse[2] == -np.inf
    assert not np.isnan(lse).any()


def test_logsumexp_backward_is_softmax_weighted(kern):
    x = _rng(7).standard_normal((4, 5))
    lse = kern.logsumexp_forward(x)
    g = _rng(8).standard_normal(4)
    gx = kern.logsumexp_backward(g, x, lse)
    ref = g[:, None] * np.exp(x - lse[:, None])
    np.testing.assert_allclose(gx, ref, rtol=1e-12, atol=1e-14)


def test_relu_gelu_forward_values(kern):
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    np.testing.assert_allclose(kern.relu_forward(x), np.maximum(x, 0.0))
    c = np.sqrt(2.0 / np.pi)
    ref = 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(kern.gelu_forward(x), ref, rtol=1e-12)


def test_adamw_zero_grad_is_pure_decay(kern):
    p = np.full(4, 2.0)
    g = np.zeros(4)
    m = np.zeros(4)
    v = np.zeros(4)
    kern.adamw_update(p, g, m, v, 1, 0.1, 0.9, 0.95, 1e-8, 0.05)
    np.testing.assert_allclose(p, 2.0 * (1.0 - 0.1 * 0.05), rtol=1e-14)
    np.testing.assert_allclose(m, 0.0)
    np.testing.assert_allclose(v, 0.0)


def test_adamw_single_step_closed_form(kern):
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -0.1, 0.7])
    m = np.zeros(3)
    v = np.zeros(3)
    lr, b1, b2, eps, wd = 0.01, 0.9, 0.95, 1e-8, 0.05
    kern.adamw_update(p, g, m, v, 1, lr, b1, b2, eps, wd)
    p_ref = np.array([1.0, -2.0, 0.5])
    p_ref -= lr * wd * p_ref
    m_ref = (1 - b1) * g
    v_ref = (1 - b2) * g * g
    mhat = m_ref / (1 - b1)
    vhat = v_ref / (1 - b2)
    p_ref -= lr * mhat / (np.sqrt(vhat) + eps)
    np.testing.assert_allclose(p, p_ref, rtol=1e-12)
    np.testing.assert_allclose(m, m_ref, rtol=1e-12)
    np.testing.assert_allclose(v, v_ref, rtol=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend unavailable")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backend_parity(dtype):
    names = dict(BACKENDS)
    comp = names["compiled"]
    tol = 2e-5 if dtype == np.float32 else 1e-12
    rng = _rng(9)
    x = rng.standard_normal((8, 6)).astype(dtype)
    gamma = rng.standard_normal(6).astype(dtype)
    beta = rng.standard_normal(6).astype(dtype)
    gy = rng.standard_normal((8, 6)).astype(dtype)

    y_p, mean_p, rstd_p = pure.layer_norm_forward(x, gamma, beta, 1e-5)
    y_c, mean_c, rstd_c = comp.layer_norm_forward(x, gamma, beta, 1e-5)
    np.testing.assert_allclose(y_c, y_p, rtol=tol, atol=tol)
    gx_p, dg_p, db_p = pure.layer_norm_backward(gy, x, gamma, mean_p, rstd_p)
    gx_c, dg_c, db_c = comp.layer_norm_backward(gy, x, gamma, mean_c, rstd_c)
    np.testing.assert_allclose(gx_c, gx_p, rtol=tol, atol=tol)
    np.testing.assert_allclose(dg_c, dg_p, rtol=tol, atol=tol)
    np.testing.assert_allclose(db_c, db_p, rtol=tol, atol=tol)

    s_p = pure.softmax_forward(x)
    s_c = comp.softmax_forward(x)
    np.testing.assert_allclose(s_c, s_p, rtol=tol, atol=tol)
    np.testing.assert_allclose(
        comp.softmax_backward(gy, s_c), pure.softmax_backward(gy, s_p), rtol=tol, atol=tol
    )

    l_p = pure.logsumexp_forward(x)
    l_c = comp.logsumexp_forward(x)
    np.testing.assert_allclose(l_c, l_p, rtol=tol, atol=tol)
    g1 = rng.standard_normal(8).astype(dtype)
    np.testing.assert_allclose(
        comp.logsumexp_backward(g1, x, l_c),
        pure.logsumexp_backward(g1, x, l_p),
        rtol=tol,
        atol=tol,
    )

    flat = np.ascontiguousarray(x.reshape(-1))
    gflat = np.ascontiguousarray(gy.reshape(-1))
    for fwd, bwd in [
        (pure.relu_forward, pure.relu_backward),
        (pure.gelu_forward, pure.gelu_backward),
    ]:
        name = fwd.__name__
        np.testing.assert_allclose(
            getattr(comp, name)(flat), fwd(flat), rtol=tol, atol=tol
        )
        np.testing.assert_allclose(
            getattr(comp, bwd.__name__)(gflat, flat), bwd(gflat, flat), rtol=tol, atol=tol
        )

    p1 = rng.standard_normal(10).astype(dtype)
    p2 = p1.copy()
    g = rng.standard_normal(10).astype(dtype)
    m1 = np.zeros(10, dtype=dtype)
    v1 = np.zeros(10, dtype=dtype)
    m2, v2 = m1.copy(), v1.copy()
    for step in (1, 2, 3):
        pure.adamw_update(p1, g, m1, v1, step, 0.01, 0.9, 0.95, 1e-8, 0.05)
        comp.adamw_update(p2, g, m2, v2, step, 0.01, 0.9, 0.95, 1e-8, 0.05)
    np.testing.assert_allclose(p2, p1, rtol=tol, atol=tol)
    np.testing.assert_allclose(m2, m1, rtol=tol, atol=tol)
    np.testing.assert_allclose(v2, v1, rtol=tol, atol=tol)


def test_backend_flags():
    assert pure.IS_COMPILED is False
    names = dict(BACKENDS)
    if "compiled" in names:
        assert names["compiled"].IS_COMPILED is True
    assert backend.BACKEND_NAME in names
