"""Small symmetric-matrix helpers used throughout the package."""
from __future__ import annotations

import numpy as np

from .errors import InputError, NumericalError

JITTER_SCALE = 1e-10


def symmetrize(S):
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def cholesky(S, name="matrix", diagnostics=None):
    """Cholesky factor, retrying once with ``1e-10 * trace/dim`` jitter.

    Jitter use is recorded in ``diagnostics`` (a dict) when one is given.
    """
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    dim = S.shape[-1]
    tr = np.trace(S, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(tr)) or np.any(tr <= 0):
        raise NumericalError(f"{name} is not positive definite", _diag(S))
    jitter = JITTER_SCALE * tr / dim
    eye = np.eye(dim)
    try:
        L = np.linalg.cholesky(S + np.asarray(jitter)[..., None, None] * eye)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{name} is not positive definite", _diag(S)) from None
    if diagnostics is not None:
        diagnostics.setdefault("jitter", []).append((name, float(np.max(jitter))))
    return L


def _diag(S):
    try:
        w = np.linalg.eigvalsh(symmetrize(S))
        return {"min_eig": float(np.min(w)), "max_eig": float(np.max(w)),
                "shape": S.shape, "asymmetry": float(np.max(np.abs(S - np.swapaxes(S, -1, -2))))}
    except np.linalg.LinAlgError:
        return {"shape": S.shape, "finite": bool(np.all(np.isfinite(S)))}


def inv_spd(S, name="matrix"):
    L = cholesky(S, name)
    Linv = np.linalg.inv(L)
    return np.swapaxes(Linv, -1, -2) @ Linv


def logdet_spd(S, name="matrix"):
    L = cholesky(S, name)
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def psd_factor(S, name="matrix", rtol=1e-9):
    """Return ``A`` with ``A @ A.T == S`` for a symmetric PSD ``S``.

    Works for singular matrices; eigen-directions whose variance is at
    roundoff level are dropped, so ``A`` may have fewer columns than rows.
    """
    S = symmetrize(np.asarray(S, dtype=float))
    if not np.all(np.isfinite(S)):
        raise NumericalError(f"{name} contains non-finite entries", {"shape": S.shape})
    w, V = np.linalg.eigh(S)
    top = max(float(w[-1]), 0.0) if w.size else 0.0
    if w.size and w[0] < -rtol * max(top, 1e-300) - 1e-300:
        raise NumericalError(f"{name} is not positive semi-definite", _diag(S))
    keep = w > S.shape[0] * np.finfo(float).eps * top
    return V[:, keep] * np.sqrt(w[keep])


def is_psd(S, rtol=1e-9):
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return True
    if not np.allclose(S, S.T, rtol=1e-8, atol=1e-12 * max(1.0, float(np.max(np.abs(S))))):
        return False
    w = np.linalg.eigvalsh(symmetrize(S))
    return bool(w[0] >= -rtol * max(abs(w[-1]), 1e-300))


def condition_number(S):
    """Ratio of extreme singular values of a symmetric matrix; ``inf`` when singular."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InputError("condition number needs a square matrix")
    scale = max(np.max(np.abs(S)), np.finfo(float).tiny)
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-12 * scale):
        raise InputError("condition number expects a symmetric matrix")
    s = np.linalg.svd(S, compute_uv=False)
    if s[-1] <= S.shape[0] * np.finfo(float).eps * s[0]:
        return float("inf")
    return float(s[0] / s[-1])
