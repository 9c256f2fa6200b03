"""External magnetic field models, their vector potentials and gauge transforms.

Two field models are supported:

* ``UniformField``: H(x) = H0
* ``LinearField``: H(x) = H0 + G x, with G symmetric (curl-free) and
  traceless (divergence-free).

The vector potential of the linear model is the Poincare (radial) gauge
anchored at the origin, A(x) = 1/2 H0 x x + 1/3 (G x) x x, which reduces to
the symmetric gauge 1/2 H0 x x when G = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import cross, norm

VALIDATION_TOL = 1e-12


class FieldModelError(ValueError):
    """Invalid field model parameters (asymmetric or traced gradient)."""


def _frozen(x, shape, name):
    arr = np.array(x, dtype=float)
    if arr.shape != shape:
        raise FieldModelError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FieldModelError(f"{name} has non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class UniformField:
    H0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H0", _frozen(self.H0, (3,), "H0"))

    @property
    def G(self):
        return np.zeros((3, 3))

    def field(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.H0, x.shape).copy()

    def potential(self, x):
        return 0.5 * cross(self.H0, x)

    def __eq__(self, other):
        return isinstance(other, UniformField) and np.array_equal(self.H0, other.H0)


@dataclass(frozen=True, eq=False)
class LinearField:
    H0: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H0", _frozen(self.H0, (3,), "H0"))
        G = _frozen(self.G, (3, 3), "G")
        scale = max(1.0, float(np.max(np.abs(G))))
        asym = float(np.max(np.abs(G - G.T)))
        if asym > VALIDATION_TOL * scale:
            raise FieldModelError(
                f"gradient matrix must be symmetric (curl H = 0); max |G - G^T| = {asym:.3e}"
            )
        trace = float(np.trace(G))
        if abs(trace) > VALIDATION_TOL * scale:
            raise FieldModelError(f"gradient matrix must be traceless (div H = 0); trace = {trace:.3e}")
        object.__setattr__(self, "G", G)

    def field(self, x):
        x = np.asarray(x, dtype=float)
        return self.H0 + x @ self.G.T

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * cross(self.H0, x) + cross(x @ self.G.T, x) / 3.0

    def __eq__(self, other):
        return (
            isinstance(other, LinearField)
            and np.array_equal(self.H0, other.H0)
            and np.array_equal(self.G, other.G)
        )


def stern_gerlach_field(h, g):
    """H0 = (0, 0, h) with gradient diag(-g, 0, g): field axis z, no variation along y."""
    return LinearField(H0=(0.0, 0.0, h), G=np.diag([-g, 0.0, g]))


def zero_field():
    return UniformField(H0=(0.0, 0.0, 0.0))


@dataclass(frozen=True, eq=False)
class LinearGauge:
    """Lambda(x) = k . x"""

    k: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k", _frozen(self.k, (3,), "k"))

    def value(self, x):
        return np.asarray(x, dtype=float) @ self.k

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.k, x.shape).copy()


@dataclass(frozen=True, eq=False)
class QuadraticGauge:
    """Lambda(x) = x^T Q x with Q symmetric."""

    Q: np.ndarray

    def __post_init__(self):
        Q = _frozen(self.Q, (3, 3), "Q")
        if np.max(np.abs(Q - Q.T)) > VALIDATION_TOL * max(1.0, float(np.max(np.abs(Q)))):
            raise FieldModelError("quadratic gauge matrix must be symmetric")
        object.__setattr__(self, "Q", Q)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum((x @ self.Q) * x, axis=-1)

    def gradient(self, x):
        return 2.0 * (np.asarray(x, dtype=float) @ self.Q)


@dataclass(frozen=True, eq=False)
class PotentialField:
    """A field model whose vector potential has been shifted by grad(Lambda).

    The magnetic field is untouched; only ``potential`` differs from the base.
    """

    base: object
    gauge: object

    @property
    def H0(self):
        return self.base.H0

    @property
    def G(self):
        return self.base.G

    def field(self, x):
        return self.base.field(x)

    def potential(self, x):
        return self.base.potential(x) + self.gauge.gradient(x)


def base_model(f):
    """Strip any gauge wrappers and return the underlying field model."""
    while isinstance(f, PotentialField):
        f = f.base
    return f


def evaluate_field(f, x):
    return f.field(x)


def vector_potential(f, x):
    return f.potential(x)


def gauge_transform(f, g) -> PotentialField:
    return PotentialField(base=f, gauge=g)


def field_parameters(f):
    """(H0, G) of any field model, with G = 0 for the uniform case."""
    base = base_model(f)
    return np.asarray(base.H0, dtype=float), np.asarray(base.G, dtype=float)


def linearity_ratio(f, size):
    """|G| a / |H0|: how much the field changes across an atom of size a.

    Reported as a diagnostic only.  Returns inf when H0 = 0 and G != 0.
    """
    H0, G = field_parameters(f)
    grad = float(np.linalg.norm(G, 2)) * size
    h = float(norm(H0))
    if grad == 0.0:
        return 0.0
    return grad / h if h > 0 else float("inf")


def numerical_curl(func, x, step=1e-5):
    """Central-difference curl of a vector field ``func`` at points x (..., 3)."""
    x = np.asarray(x, dtype=float)
    J = np.empty(x.shape + (3,))  # J[..., i, j] = d func_i / d x_j
    for j in range(3):
        dx = np.zeros(3)
        dx[j] = step
        J[..., :, j] = (func(x + dx) - func(x - dx)) / (2.0 * step)
    return np.stack(
        [J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]],
        axis=-1,
    )


def numerical_divergence(func, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape[:-1])
    for j in range(3):
        dx = np.zeros(3)
        dx[j] = step
        total = total + (func(x + dx)[..., j] - func(x - dx)[..., j]) / (2.0 * step)
    return total
