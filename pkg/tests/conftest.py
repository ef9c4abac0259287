"""Shared test helpers: finite-difference oracle and tiny world builders."""

from __future__ import annotations

import numpy as np

from grefgame.tensor import Tensor


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f at x, one probe per entry."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max relative error with max(1, |analytic|) in the denominator."""
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grad(build_loss, param: Tensor, tol: float = 1e-4, h: float = 1e-5) -> float:
    """Compare autodiff grads on `param` against finite differences.

    build_loss() must construct a fresh scalar loss from param's
    current data each call (define-by-run tape).
    """
    param.zero_grad()  # leaves accumulate across backward passes
    loss = build_loss()
    loss.backward()
    analytic = param.grad.copy()

    def numeric_f(x: np.ndarray) -> float:
        return float(build_loss().data)

    numeric = fd_grad(numeric_f, param.data, h=h)
    err = rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
    return err
