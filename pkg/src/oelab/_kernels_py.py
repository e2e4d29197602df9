"""Pure-numpy twin of the compiled kernel module.

Every function here has a byte-compatible signature in ``oelab._kernels``;
``oelab.backend`` picks one implementation at import time. Inputs are
C-contiguous float32 or float64 arrays and both backends follow the same
operation order so results agree to rounding.
"""

import numpy as np

IS_COMPILED = False

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def layer_norm_forward(x, gamma, beta, eps):
    """Row-wise layer norm. x: [R, D]. Returns (y, mean, rstd)."""
    mean = x.mean(axis=1)
    var = np.square(x - mean[:, None]).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gamma + beta
    return y, mean, rstd


def layer_norm_backward(gy, x, gamma, mean, rstd):
    """Returns (gx, dgamma, dbeta) for layer_norm_forward."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (gy * xhat).sum(axis=0)
    dbeta = gy.sum(axis=0)
    gh = gy * gamma
    d = x.shape[1]
    gx = rstd[:, None] * (
        gh
        - gh.mean(axis=1)[:, None]
        - xhat * (gh * xhat).mean(axis=1)[:, None]
    )
    del d
    return gx, dgamma, dbeta


def softmax_forward(x):
    """Row-wise stable softmax. x: [R, D]."""
    m = x.max(axis=1)
    e = np.exp(x - m[:, None])
    return e / e.sum(axis=1)[:, None]


def softmax_backward(gy, y):
    """gx = y * (gy - sum(gy * y, axis=1))."""
    dot = (gy * y).sum(axis=1)
    return y * (gy - dot[:, None])


def logsumexp_forward(x):
    """Row-wise log-sum-exp, -inf entries contribute zero weight."""
    m = x.max(axis=1)
    # All -inf row would give nan through exp(-inf - -inf); guard the shift.
    shift = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - shift[:, None])
    with np.errstate(divide="ignore"):  # empty row -> log(0) = -inf, wanted
        return np.log(e.sum(axis=1)) + shift


def logsumexp_backward(glse, x, lse):
    """gx[i, j] = glse[i] * exp(x[i, j] - lse[i])."""
    return glse[:, None] * np.exp(x - lse[:, None])


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(gy, x):
    return gy * (x > 0.0)


def gelu_forward(x):
    """tanh-approximation GELU."""
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(gy, x):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam step, in place on p, m, v.

    Decay is applied to p before the adaptive update; bias correction uses
    1-indexed step.
    """
    if weight_decay != 0.0:
        p -= lr * weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
