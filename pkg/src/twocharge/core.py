"""Constants, phase-space states and the lab <-> centre-of-mass transforms.

All quantities are in Gaussian units.  The presets use atomic-style
scaling (electron mass 1, elementary charge 1, Bohr radius 1), where the
speed of light is ~137.036.

Vectors are numpy arrays whose last axis has length 3.  Every state type
accepts leading batch axes, so an ensemble of N atoms is a state whose
fields have shape ``(N, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT_AU = 137.035999084
PROTON_ELECTRON_MASS_RATIO = 1836.15267343


class SingularConfigurationError(ValueError):
    """Raised when the two charges coincide and no softening is active."""


def cross(a, b):
    """Cross product over the last axis (broadcasting, no np.cross overhead)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def dot(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def norm(a):
    return np.sqrt(dot(a, a))


def _vec(x, name):
    arr = np.array(x, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != 3:
        raise ValueError(f"{name} must have a trailing axis of length 3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Constants:
    """Particle masses, charge magnitude, speed of light and Coulomb softening.

    ``softening`` is the length eps in the regularised potential
    ``-e**2 / sqrt(r**2 + eps**2)``; zero means hard Coulomb.
    """

    m_p: float
    m_e: float
    e: float = 1.0
    c: float = SPEED_OF_LIGHT_AU
    softening: float = 0.0

    def __post_init__(self):
        for name in ("m_p", "m_e", "e", "c"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if not np.isfinite(self.softening) or self.softening < 0:
            raise ValueError(f"softening must be >= 0, got {self.softening!r}")

    @classmethod
    def hydrogen(cls, softening=0.0):
        return cls(m_p=PROTON_ELECTRON_MASS_RATIO, m_e=1.0, softening=softening)

    @classmethod
    def positronium(cls, softening=0.0):
        return cls(m_p=1.0, m_e=1.0, softening=softening)

    @property
    def M(self):
        return self.m_p + self.m_e

    @property
    def mu(self):
        return self.m_p * self.m_e / self.M

    @property
    def K_L(self):
        return (self.m_p - self.m_e) / self.M

    def with_softening(self, softening):
        return Constants(self.m_p, self.m_e, self.e, self.c, softening)


@dataclass(frozen=True)
class LabState:
    """Positions and velocities of the positive (p) and negative (e) charge."""

    r_p: np.ndarray
    v_p: np.ndarray
    r_e: np.ndarray
    v_e: np.ndarray

    def __post_init__(self):
        for name in ("r_p", "v_p", "r_e", "v_e"):
            object.__setattr__(self, name, _vec(getattr(self, name), name))

    def as_array(self):
        return np.concatenate([self.r_p, self.v_p, self.r_e, self.v_e], axis=-1)

    @classmethod
    def from_array(cls, y):
        y = np.asarray(y, dtype=float)
        return cls(y[..., 0:3], y[..., 3:6], y[..., 6:9], y[..., 9:12])

    @property
    def separation(self):
        return norm(self.r_e - self.r_p)


@dataclass(frozen=True)
class ComState:
    """Centre of mass R, its velocity Rdot, relative vector r = r_e - r_p and rdot."""

    R: np.ndarray
    Rdot: np.ndarray
    r: np.ndarray
    rdot: np.ndarray

    def __post_init__(self):
        for name in ("R", "Rdot", "r", "rdot"):
            object.__setattr__(self, name, _vec(getattr(self, name), name))

    def as_array(self):
        return np.concatenate([self.R, self.Rdot, self.r, self.rdot], axis=-1)

    @classmethod
    def from_array(cls, y):
        y = np.asarray(y, dtype=float)
        return cls(y[..., 0:3], y[..., 3:6], y[..., 6:9], y[..., 9:12])

    def __getitem__(self, index):
        return ComState(self.R[index], self.Rdot[index], self.r[index], self.rdot[index])

    def __len__(self):
        return self.R.shape[0]


@dataclass(frozen=True)
class DerivedQuantities:
    """Internal angular momentum L, cross-coupling S, rho_dot and total energy E."""

    L: np.ndarray
    S: np.ndarray
    rho_dot: np.ndarray
    E: np.ndarray
    K_L: float
    E_com: np.ndarray = field(default=None)
    E_internal: np.ndarray = field(default=None)


def to_com(s: LabState, k: Constants) -> ComState:
    M = k.M
    return ComState(
        R=(k.m_p * s.r_p + k.m_e * s.r_e) / M,
        Rdot=(k.m_p * s.v_p + k.m_e * s.v_e) / M,
        r=s.r_e - s.r_p,
        rdot=s.v_e - s.v_p,
    )


def to_lab(s: ComState, k: Constants) -> LabState:
    fe = k.m_e / k.M
    fp = k.m_p / k.M
    return LabState(
        r_p=s.R - fe * s.r,
        v_p=s.Rdot - fe * s.rdot,
        r_e=s.R + fp * s.r,
        v_e=s.Rdot + fp * s.rdot,
    )


def coulomb_energy(separation, k: Constants):
    """Potential energy of the pair, softened when ``k.softening > 0``."""
    separation = np.asarray(separation, dtype=float)
    if k.softening == 0.0:
        if np.any(separation == 0.0):
            raise SingularConfigurationError("charges coincide (|r| = 0) and softening is disabled")
        return -k.e**2 / separation
    return -k.e**2 / np.sqrt(separation**2 + k.softening**2)


def derived_quantities(s: ComState, k: Constants) -> DerivedQuantities:
    mu = k.mu
    E_com = 0.5 * k.M * dot(s.Rdot, s.Rdot)
    E_internal = 0.5 * mu * dot(s.rdot, s.rdot) + coulomb_energy(norm(s.r), k)
    return DerivedQuantities(
        L=mu * cross(s.r, s.rdot),
        S=mu * cross(s.r, s.Rdot),
        rho_dot=s.Rdot + k.K_L * s.rdot,
        E=E_com + E_internal,
        K_L=k.K_L,
        E_com=E_com,
        E_internal=E_internal,
    )


def lab_energy(s: LabState, k: Constants):
    kinetic = 0.5 * k.m_p * dot(s.v_p, s.v_p) + 0.5 * k.m_e * dot(s.v_e, s.v_e)
    return kinetic + coulomb_energy(s.separation, k)


def canonical_momenta(s: ComState, f, k: Constants):
    """Momenta conjugate to R and r for a uniform field, in the reduced gauge.

    This is the gauge in which the centre-of-mass Lagrangian depends on the
    field only through ``H . (K_L L + 2 S)``; it differs from the lab-frame
    symmetric gauge by the total derivative ``(e/2c) d/dt [H . (R x r)]``.
    """
    from .fields import UniformField, base_model

    if not isinstance(base_model(f), UniformField):
        raise TypeError("canonical_momenta is defined for a uniform field only")
    H = base_model(f).H0
    Hxr = cross(H, s.r)
    P_R = k.M * s.Rdot - (k.e / k.c) * Hxr
    p_r = k.mu * s.rdot - (k.e / (2.0 * k.c)) * k.K_L * Hxr
    return P_R, p_r


def lab_canonical_momenta(s: LabState, potential, k: Constants):
    """Canonical momenta (p_p, p_e) of the lab Lagrangian in the gauge of ``potential``.

    ``potential`` is anything with a ``potential(x)`` method (a field model or
    a gauge-transformed ``PotentialField``).
    """
    p_p = k.m_p * s.v_p + (k.e / k.c) * potential.potential(s.r_p)
    p_e = k.m_e * s.v_e - (k.e / k.c) * potential.potential(s.r_e)
    return p_p, p_e


def com_momenta_from_lab(p_p, p_e, k: Constants):
    """Momenta conjugate to (R, r) given the lab canonical momenta."""
    return p_p + p_e, (k.m_p * p_e - k.m_e * p_p) / k.M


def circular_angular_frequency(k: Constants, radius):
    """Kepler balance mu * omega**2 * a = e**2 / a**2 (hard Coulomb)."""
    return np.sqrt(k.e**2 / (k.mu * radius**3))


def _orthonormal_frame(normal):
    n = np.asarray(normal, dtype=float)
    n = n / norm(n)[..., None]
    trial = np.where(np.abs(n[..., :1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    u = cross(n, trial)
    u = u / norm(u)[..., None]
    v = cross(n, u)
    return n, u, v


def circular_orbit(k: Constants, radius, normal=(0.0, 0.0, 1.0), phase=0.0, R=(0.0, 0.0, 0.0),
                   Rdot=(0.0, 0.0, 0.0)) -> ComState:
    """Relative motion on a circle of given radius with L along ``normal``.

    ``radius``, ``normal`` and ``phase`` may carry a leading batch axis.
    """
    n, u, v = _orthonormal_frame(normal)
    phase = np.asarray(phase, dtype=float)[..., None]
    radius = np.asarray(radius, dtype=float)[..., None]
    omega = circular_angular_frequency(k, radius)
    r = radius * (np.cos(phase) * u + np.sin(phase) * v)
    rdot = radius * omega * (-np.sin(phase) * u + np.cos(phase) * v)
    shape = np.broadcast_shapes(r.shape, np.shape(R), np.shape(Rdot))
    return ComState(
        R=np.broadcast_to(np.asarray(R, dtype=float), shape),
        Rdot=np.broadcast_to(np.asarray(Rdot, dtype=float), shape),
        r=np.broadcast_to(r, shape),
        rdot=np.broadcast_to(rdot, shape),
    )
