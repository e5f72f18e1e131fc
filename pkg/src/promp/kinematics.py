"""Forward kinematics used for task-space operators.

Only positions are modelled. A planar serial arm stands in for a real robot;
it can be embedded in a vertical plane of 3-D space for the table-tennis
simulation.
"""
from __future__ import annotations

import numpy as np

from .errors import InputError, NumericalError


class ForwardKinematics:
    """Map joint vectors (length ``D``) to task positions (length ``X``)."""

    D: int
    X: int

    def evaluate(self, y):
        raise NotImplementedError

    def jacobian(self, y):
        raise NotImplementedError

    def hessians(self, y):
        """Second derivatives, shape ``(X, D, D)``, or ``None`` if unavailable."""
        return None

    def __call__(self, y):
        return self.evaluate(y)


class PlanarArm(ForwardKinematics):
    def __init__(self, link_lengths):
        L = np.asarray(link_lengths, dtype=float).reshape(-1)
        if L.size == 0 or np.any(~(L > 0)):
            raise InputError("link lengths must be positive")
        self.link_lengths = L
        self.D = L.size
        self.X = 2

    @property
    def reach(self):
        return float(self.link_lengths.sum())

    def _angles(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.D,):
            raise InputError(f"expected {self.D} joint values, got shape {y.shape}")
        return np.cumsum(y)

    def evaluate(self, y):
        th = self._angles(y)
        L = self.link_lengths
        return np.array([L @ np.cos(th), L @ np.sin(th)])

    def jacobian(self, y):
        th = self._angles(y)
        L = self.link_lengths
        # column j accumulates links i >= j
        cs = np.cumsum((L * np.cos(th))[::-1])[::-1]
        sn = np.cumsum((L * np.sin(th))[::-1])[::-1]
        return np.vstack([-sn, cs])

    def hessians(self, y):
        th = self._angles(y)
        L = self.link_lengths
        cs = np.cumsum((L * np.cos(th))[::-1])[::-1]
        sn = np.cumsum((L * np.sin(th))[::-1])[::-1]
        idx = np.maximum.outer(np.arange(self.D), np.arange(self.D))
        return np.stack([-cs[idx], -sn[idx]])

    def to_dict(self):
        return {"type": "planar", "link_lengths": self.link_lengths.tolist()}


class PlaneEmbedding(ForwardKinematics):
    """Place a 2-D kinematic chain in the plane spanned by ``axes`` at ``origin``."""

    def __init__(self, inner, origin=(0.0, 0.0, 0.0), axes=((1.0, 0.0, 0.0), (0.0, 0.0, 1.0))):
        if inner.X != 2:
            raise InputError("only 2-D chains can be embedded")
        self.inner = inner
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.E = np.asarray(axes, dtype=float).T  # 3 x 2
        self.D = inner.D
        self.X = 3

    def evaluate(self, y):
        return self.origin + self.E @ self.inner.evaluate(y)

    def jacobian(self, y):
        return self.E @ self.inner.jacobian(y)

    def hessians(self, y):
        h = self.inner.hessians(y)
        return None if h is None else np.einsum("xa,ajk->xjk", self.E, h)

    def to_dict(self):
        d = self.inner.to_dict()
        d["origin"] = self.origin.tolist()
        return d


class LinearKinematics(ForwardKinematics):
    """``f(y) = A y + c``; the linearisation used by task-space operators is exact."""

    def __init__(self, A, c=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.X, self.D = self.A.shape
        self.c = np.zeros(self.X) if c is None else np.asarray(c, dtype=float).reshape(self.X)

    def evaluate(self, y):
        return self.A @ np.asarray(y, dtype=float) + self.c

    def jacobian(self, y):
        return self.A.copy()

    def hessians(self, y):
        return np.zeros((self.X, self.D, self.D))

    def to_dict(self):
        return {"type": "linear", "A": self.A.tolist(), "c": self.c.tolist()}


def planar_fk(arm: PlanarArm, y):
    return arm.evaluate(y)


def planar_jacobian(arm: PlanarArm, y):
    return arm.jacobian(y)


def numeric_jacobian(fk, y, step=1e-6):
    """Central-difference Jacobian of ``fk`` (a callable or ForwardKinematics)."""
    if step <= 0:
        raise InputError("step must be positive")
    f = fk.evaluate if isinstance(fk, ForwardKinematics) else fk
    y = np.asarray(y, dtype=float)
    cols = []
    for j in range(y.size):
        e = np.zeros_like(y)
        e[j] = step
        cols.append((np.asarray(f(y + e)) - np.asarray(f(y - e))) / (2 * step))
    return np.stack(cols, axis=1)


def check_jacobian(fk: ForwardKinematics, n=100, seed=0, step=1e-6, tol=1e-5, scale=np.pi):
    """Largest analytic-vs-central-difference discrepancy over random configurations."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        y = rng.uniform(-scale, scale, fk.D)
        err = np.max(np.abs(fk.jacobian(y) - numeric_jacobian(fk, y, step)))
        worst = max(worst, float(err))
    if worst >= tol:
        raise NumericalError(f"Jacobian disagrees with finite differences (max error {worst:.3g})",
                             {"max_abs_error": worst})
    return worst


def load_kinematics(desc, check=True):
    """Build kinematics from a config dict such as ``{"type": "planar", "link_lengths": [...]}``."""
    kind = desc.get("type")
    if kind == "planar":
        fk = PlanarArm(desc["link_lengths"])
        if "origin" in desc:
            fk = PlaneEmbedding(fk, desc["origin"])
    elif kind == "linear":
        fk = LinearKinematics(desc["A"], desc.get("c"))
    else:
        raise InputError(f"unknown kinematics type {kind!r}")
    if check and desc.get("check", True):
        check_jacobian(fk)
    return fk
