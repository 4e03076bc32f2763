"""Flat-vector optimisation helpers: Adam, norm clipping, and a
central-difference gradient oracle for tests."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamHyper:
    alpha: float = 3.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state, hyper=AdamHyper()):
    """One bias-corrected Adam update.

    Returns new ``(params, state)``; the inputs are not modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (grads.shape == params.shape == state.m.shape == state.v.shape):
        raise ValueError(
            f"adam_step length mismatch: params {params.shape}, grads {grads.shape}, "
            f"m {state.m.shape}, v {state.v.shape}"
        )
    if hyper.alpha <= 0 or hyper.eps <= 0:
        raise ValueError("adam_step needs alpha > 0 and eps > 0")
    if not (0.0 <= hyper.beta1 < 1.0 and 0.0 <= hyper.beta2 < 1.0):
        raise ValueError("adam_step needs 0 <= beta1, beta2 < 1")
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads * grads
    m_hat = m / (1.0 - hyper.beta1 ** t)
    v_hat = v / (1.0 - hyper.beta2 ** t)
    new = params - hyper.alpha * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return new, AdamState(m, v, t)


def clip_by_global_norm(grads, max_norm):
    """Scale ``grads`` down so its L2 norm is at most ``max_norm``."""
    norm = float(np.linalg.norm(grads))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    return grads * (max_norm / norm), norm


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        orig = x[i]
        x[i] = orig + eps
        fp = float(f(x))
        x[i] = orig - eps
        fm = float(f(x))
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad
