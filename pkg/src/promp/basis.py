"""Phase-dependent feature functions.

The feature vector is ordered ``[1, z, ..., z**degree | rbf_1(z), ..., rbf_R(z)]``
and the per-DoF rows are placed block-diagonally, so a weight vector is laid
out DoF-major: ``w = [w_1 (K), w_2 (K), ..., w_D (K)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class BasisConfig:
    rbf_centers: tuple = ()
    rbf_width: float = 1.0
    poly_degree: int = 1

    def __post_init__(self):
        centers = tuple(float(c) for c in self.rbf_centers)
        object.__setattr__(self, "rbf_centers", centers)
        if any(not (0.0 <= c <= 1.0) for c in centers):
            raise InputError("RBF centers must lie in [0, 1]")
        if any(b <= a for a, b in zip(centers, centers[1:])):
            raise InputError("RBF centers must be strictly increasing")
        if centers and not (self.rbf_width > 0 and math.isfinite(self.rbf_width)):
            raise InputError("rbf_width must be a positive finite number")
        if int(self.poly_degree) != self.poly_degree or self.poly_degree < 0:
            raise InputError("poly_degree must be an integer >= 0")
        object.__setattr__(self, "poly_degree", int(self.poly_degree))

    @property
    def n_rbf(self):
        return len(self.rbf_centers)

    @property
    def K(self):
        return self.n_rbf + self.poly_degree + 1

    @classmethod
    def default(cls, n_rbf=3, poly_degree=1):
        """Equally spaced centers on [0, 1] with width 1/n_rbf."""
        if n_rbf == 0:
            return cls((), 1.0, poly_degree)
        centers = (0.5,) if n_rbf == 1 else tuple(np.linspace(0.0, 1.0, n_rbf))
        return cls(centers, 1.0 / n_rbf, poly_degree)

    def to_dict(self):
        return {
            "rbf_centers": list(self.rbf_centers),
            "rbf_width": self.rbf_width,
            "poly_degree": self.poly_degree,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d.get("rbf_centers", ())), float(d.get("rbf_width", 1.0)),
                   int(d.get("poly_degree", 1)))


def _check_phase(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InputError(f"phase must be finite, got {z}")
    return z


def feature_matrix(cfg: BasisConfig, z, order=0):
    """Features for an array of phases: shape ``(len(z), K)``.

    ``order`` selects the derivative with respect to the phase (0, 1 or 2).
    """
    if order not in (0, 1, 2):
        raise InputError(f"derivative order must be 0, 1 or 2, got {order}")
    z = np.atleast_1d(_check_phase(z))
    cols = []
    for p in range(cfg.poly_degree + 1):
        if order == 0:
            cols.append(z ** p)
        elif order == 1:
            cols.append(p * z ** (p - 1) if p >= 1 else np.zeros_like(z))
        else:
            cols.append(p * (p - 1) * z ** (p - 2) if p >= 2 else np.zeros_like(z))
    if cfg.n_rbf:
        c = np.asarray(cfg.rbf_centers)
        h2 = cfg.rbf_width ** 2
        d = z[:, None] - c[None, :]
        g = np.exp(-0.5 * d * d / h2)
        if order == 1:
            g = -d / h2 * g
        elif order == 2:
            g = (d * d / h2 - 1.0) / h2 * g
        return np.concatenate([np.stack(cols, axis=1), g], axis=1)
    return np.stack(cols, axis=1)


def features(cfg: BasisConfig, z):
    """Feature vector of length K at a single phase."""
    return feature_matrix(cfg, float(_check_phase(z)), 0)[0]


def features_deriv(cfg: BasisConfig, z, order=1):
    if order not in (1, 2):
        raise InputError(f"derivative order must be 1 or 2, got {order}")
    return feature_matrix(cfg, float(_check_phase(z)), order)[0]


def block_feature_matrix(cfg: BasisConfig, z, D, order=0):
    """The ``D x KD`` observation matrix at phase ``z``: ``kron(I_D, phi(z)^T)``."""
    if D < 1:
        raise InputError("D must be >= 1")
    phi = feature_matrix(cfg, float(_check_phase(z)), order)[0]
    return np.kron(np.eye(D), phi[None, :])
