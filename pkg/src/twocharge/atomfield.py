"""Far-field electromagnetic structure of a moving two-charge atom.

With d = x - R and the atom small compared with |d| (but close enough that
retardation is irrelevant), the vector potential of the pair is

    A  = A1 + A2
    A1 = -(e/c) rdot / |d|
    A2 = -(e/c) (d . r) / |d|**3 (Rdot + K_L rdot)

whose curls are the current field H1 (falls off as |d|**-2) and the dipolar
field H2 = (1/c) rho_dot x E_p (falls off as |d|**-3), where E_p is the field
of the electric dipole p = -e r.  Averaged over whole internal periods at
rest, A reduces to the field of a magnetic dipole -(e/2 mu c) K_L L.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import ComState, Constants, cross, derived_quantities, dot, norm, to_lab

K_VALID = 5.0
MIN_PROBES = 20


class ValidityRegionError(ValueError):
    """Observation point too close to the atom for the far-field expansion."""


class AveragingWarning(UserWarning):
    """Time average does not span an integer number of internal periods."""


@dataclass(frozen=True)
class FieldSample:
    """Far-field quantities at one observation point.  Unused entries are None."""

    x: np.ndarray
    A: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    H1: np.ndarray = None
    H2: np.ndarray = None
    E: np.ndarray = None
    E_dipole: np.ndarray = None


@dataclass(frozen=True)
class MomentEstimate:
    mu_avg: np.ndarray
    L_avg: np.ndarray
    g_measured: float
    g_predicted: float
    p: np.ndarray  # electric dipole -e r at the start of the averaging window
    n_periods: int
    period: float
    fit_residual: float  # rms misfit of the dipole model relative to rms <A>
    discarded_ratio: float  # max |<d(r r)/dt . d>| / max |<(r x rdot) x d>| over probes


def _offset(s: ComState, x, k_valid):
    x = np.asarray(x, dtype=float)
    d = x - s.R
    dist = norm(d)
    size = norm(s.r)
    bad = dist <= k_valid * size
    if np.any(bad):
        worst = float(np.min(dist / np.where(size > 0, size, np.inf)))
        raise ValidityRegionError(
            f"observation point within {k_valid:g} atomic radii of the centre of mass "
            f"(|x - R| / |r| = {worst:.3g}); far-field expressions do not apply"
        )
    return d, dist[..., None]


def check_validity(s: ComState, x, k_valid=K_VALID):
    """Raise ValidityRegionError if any point lies within k_valid |r| of R."""
    _offset(s, x, k_valid)


def far_vector_potential(s: ComState, x, k: Constants, k_valid=K_VALID) -> FieldSample:
    d, dist = _offset(s, x, k_valid)
    eoc = k.e / k.c
    rho_dot = s.Rdot + k.K_L * s.rdot
    A1 = -eoc * s.rdot / dist
    A2 = -eoc * (dot(d, s.r)[..., None] / dist**3) * rho_dot
    return FieldSample(x=np.asarray(x, dtype=float), A=A1 + A2, A1=A1, A2=A2)


def field_H1(s: ComState, x, k: Constants, k_valid=K_VALID):
    """Current field -(e/c) rdot x d / |d|**3."""
    d, dist = _offset(s, x, k_valid)
    return -(k.e / k.c) * cross(s.rdot, d) / dist**3


def electric_dipole_field(s: ComState, x, k: Constants, k_valid=K_VALID):
    """Field of p = -e r: [3 (p . d) d - |d|**2 p] / |d|**5."""
    d, dist = _offset(s, x, k_valid)
    p = -k.e * s.r
    return (3.0 * dot(p, d)[..., None] * d - dist**2 * p) / dist**5


def field_H2(s: ComState, x, k: Constants, k_valid=K_VALID):
    """Dipolar field -(e/c) rho_dot x [3 (r . d) d - |d|**2 r] / |d|**5."""
    d, dist = _offset(s, x, k_valid)
    rho_dot = s.Rdot + k.K_L * s.rdot
    q = 3.0 * dot(s.r, d)[..., None] * d - dist**2 * s.r
    return -(k.e / k.c) * cross(rho_dot, q) / dist**5


def field_H2_cross(s: ComState, x, k: Constants, k_valid=K_VALID):
    """The same field written as (1/c) rho_dot x E_p."""
    rho_dot = s.Rdot + k.K_L * s.rdot
    return cross(rho_dot, electric_dipole_field(s, x, k, k_valid)) / k.c


def exact_vector_potential(s: ComState, x, k: Constants):
    """Quasi-static potential of the two point charges, (e/c)[v_p/|x-r_p| - v_e/|x-r_e|]."""
    lab = to_lab(s, k)
    x = np.asarray(x, dtype=float)
    dp = norm(x - lab.r_p)[..., None]
    de = norm(x - lab.r_e)[..., None]
    return (k.e / k.c) * (lab.v_p / dp - lab.v_e / de)


def exact_magnetic_field(s: ComState, x, k: Constants):
    """Curl of exact_vector_potential (low-velocity Biot-Savart for two charges)."""
    lab = to_lab(s, k)
    x = np.asarray(x, dtype=float)
    dp = x - lab.r_p
    de = x - lab.r_e
    return (k.e / k.c) * (
        cross(lab.v_p, dp) / norm(dp)[..., None] ** 3 - cross(lab.v_e, de) / norm(de)[..., None] ** 3
    )


def exact_coulomb_field(s: ComState, x, k: Constants):
    lab = to_lab(s, k)
    x = np.asarray(x, dtype=float)
    dp = x - lab.r_p
    de = x - lab.r_e
    return k.e * (dp / norm(dp)[..., None] ** 3 - de / norm(de)[..., None] ** 3)


def _sample_index(tr, t):
    times = tr.times
    i = int(np.argmin(np.abs(times - t)))
    scale = max(1.0, abs(float(times[-1])))
    if abs(times[i] - t) > 1e-9 * scale:
        raise ValueError(f"t = {t!r} is not a sample time of the trajectory")
    return i


def electric_field(tr, x, k: Constants, t, stencil=1, k_valid=K_VALID):
    """E = E_p - (1/c) dA/dt at sample time t.

    dA/dt is a central difference of far_vector_potential over +-``stencil``
    samples, so t must lie at least ``stencil`` samples inside the trajectory.
    """
    if stencil < 1:
        raise ValueError("stencil must be >= 1")
    i = _sample_index(tr, t)
    if i - stencil < 0 or i + stencil >= len(tr.times):
        raise ValueError(f"t = {t!r} is too close to the ends of the trajectory for the difference stencil")
    s = tr.states[i]
    ahead = far_vector_potential(tr.states[i + stencil], x, k, k_valid).A
    behind = far_vector_potential(tr.states[i - stencil], x, k, k_valid).A
    dA = (ahead - behind) / (tr.times[i + stencil] - tr.times[i - stencil])
    return electric_dipole_field(s, x, k, k_valid) - dA / k.c


def field_sample(tr, x, k: Constants, t, k_valid=K_VALID) -> FieldSample:
    """Every far-field quantity at x and sample time t of a trajectory."""
    s = tr.states[_sample_index(tr, t)]
    fa = far_vector_potential(s, x, k, k_valid)
    return FieldSample(
        x=fa.x,
        A=fa.A,
        A1=fa.A1,
        A2=fa.A2,
        H1=field_H1(s, x, k, k_valid),
        H2=field_H2(s, x, k, k_valid),
        E=electric_field(tr, x, k, t, k_valid=k_valid),
        E_dipole=electric_dipole_field(s, x, k, k_valid),
    )


def field_map(tr, points, k: Constants, t, k_valid=K_VALID):
    """Far-field quantities on an (n, 3) array of points; returns (n, 18) columns A, H1, H2, E, A1, A2."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    fs = field_sample(tr, points, k, t, k_valid)
    return np.concatenate([fs.A, fs.H1, fs.H2, fs.E, fs.A1, fs.A2], axis=-1)


def decay_exponent(distances, magnitudes):
    """Slope of log|F| against log d."""
    slope, _ = np.polyfit(np.log(distances), np.log(magnitudes), 1)
    return float(slope)


def internal_period(tr, k: Constants):
    """Period of the internal motion at the first sample.

    Circular orbits use the Kepler period; anything else is timed from the
    upward zero crossings of the largest component of r.
    """
    s = tr.states[0]
    r = float(norm(s.r))
    v2 = float(dot(s.rdot, s.rdot))
    radial = abs(float(dot(s.r, s.rdot))) / (r * math.sqrt(v2)) if v2 > 0 else 1.0
    if radial < 1e-9 and abs(k.mu * v2 * r / k.e**2 - 1.0) < 1e-9 and k.softening == 0.0:
        return 2.0 * math.pi * math.sqrt(k.mu * r**3 / k.e**2)
    j = int(np.argmax(np.abs(s.r)))
    comp = tr.states.r[:, j] - np.mean(tr.states.r[:, j])
    t = tr.times
    up = np.nonzero((comp[:-1] < 0) & (comp[1:] >= 0))[0]
    if len(up) < 2:
        raise ValueError("trajectory too short to time the internal period (need two crossings)")
    crossings = t[up] - comp[up] * (t[up + 1] - t[up]) / (comp[up + 1] - comp[up])
    return float((crossings[-1] - crossings[0]) / (len(crossings) - 1))


def _time_average(times, values):
    w = np.diff(times)
    mid = 0.5 * (values[1:] + values[:-1])
    return np.tensordot(w, mid, axes=(0, 0)) / (times[-1] - times[0])


def _dipole_kernel(d):
    """Matrix K with K @ m = m x d / |d|**3."""
    d = np.asarray(d, dtype=float)
    n = norm(d)[..., None, None] ** 3
    K = np.zeros(d.shape[:-1] + (3, 3))
    # m x d = -[d]_x m
    K[..., 0, 1] = d[..., 2]
    K[..., 0, 2] = -d[..., 1]
    K[..., 1, 0] = -d[..., 2]
    K[..., 1, 2] = d[..., 0]
    K[..., 2, 0] = d[..., 1]
    K[..., 2, 1] = -d[..., 0]
    return K / n


def averaged_moment(tr, k: Constants, probes, n_periods=None, k_valid=K_VALID) -> MomentEstimate:
    """Time-average A over whole internal periods and fit a magnetic dipole.

    The atom must be at rest (Rdot = 0).  Probes are absolute positions; at
    least 20 are required so the fit is overdetermined.
    """
    probes = np.asarray(probes, dtype=float).reshape(-1, 3)
    if probes.shape[0] < MIN_PROBES:
        raise ValueError(f"need at least {MIN_PROBES} probe points, got {probes.shape[0]}")
    s0 = tr.states[0]
    vscale = max(float(norm(s0.rdot)), 1e-300)
    if float(np.max(norm(tr.states.Rdot))) > 1e-12 * vscale:
        raise ValueError("averaged_moment requires an atom at rest (Rdot = 0 throughout)")
    period = internal_period(tr, k)
    span = float(tr.times[-1] - tr.times[0])
    whole = int(math.floor(span / period + 1e-9))
    if whole < 1:
        raise ValueError(f"trajectory spans {span / period:.3f} periods; at least one whole period is needed")
    if n_periods is None:
        n_periods = whole
    if n_periods > whole:
        raise ValueError(f"requested {n_periods} periods but the trajectory covers only {whole}")
    t_stop = tr.times[0] + n_periods * period
    stop = int(np.searchsorted(tr.times, t_stop + 1e-9 * max(1.0, t_stop), side="right"))
    if abs(tr.times[stop - 1] - t_stop) > 1e-9 * max(1.0, t_stop):
        warnings.warn(
            f"samples do not end on a whole period (last sample {tr.times[stop - 1]:.9g}, "
            f"period boundary {t_stop:.9g}); the average carries a partial-period bias",
            AveragingWarning,
            stacklevel=2,
        )
    times = tr.times[:stop]
    states = tr.states[:stop]
    A = np.stack([far_vector_potential(states, p, k, k_valid).A for p in probes], axis=1)
    A_avg = _time_average(times, A)  # (n_probes, 3)
    d = probes - s0.R
    K = _dipole_kernel(d).reshape(-1, 3)
    mu_avg, *_ = np.linalg.lstsq(K, A_avg.reshape(-1), rcond=None)
    misfit = K @ mu_avg - A_avg.reshape(-1)
    rms_A = float(np.sqrt(np.mean(A_avg**2)))
    fit_residual = float(np.sqrt(np.mean(misfit**2))) / rms_A if rms_A > 0 else 0.0

    L_avg = _time_average(times, derived_quantities(states, k).L)
    L2 = float(dot(L_avg, L_avg))
    mag = float(norm(mu_avg)) / math.sqrt(L2) if L2 > 0 else float("nan")
    g_measured = -math.copysign(mag, float(dot(mu_avg, L_avg))) if L2 > 0 else float("nan")

    # (d.r) rdot = 1/2 (r x rdot) x d + 1/2 d/dt[(d.r) r]; the derivative term should average away
    r = states.r
    rd = states.rdot
    kept = np.stack([_time_average(times, cross(cross(r, rd), dp)) for dp in d])
    dropped = np.stack([_time_average(times, dot(rd, dp)[:, None] * r + dot(r, dp)[:, None] * rd) for dp in d])
    denom = float(np.max(norm(kept)))
    discarded_ratio = float(np.max(norm(dropped))) / denom if denom > 0 else float("inf")
    return MomentEstimate(
        mu_avg=mu_avg,
        L_avg=L_avg,
        g_measured=g_measured,
        g_predicted=gyromagnetic_ratio(k),
        p=-k.e * s0.r,
        n_periods=n_periods,
        period=period,
        fit_residual=fit_residual,
        discarded_ratio=discarded_ratio,
    )


def gyromagnetic_ratio(k: Constants) -> float:
    """e K_L / (2 mu c)."""
    return k.e * k.K_L / (2.0 * k.mu * k.c)


def sphere_probes(center, radius, n=26, seed=0):
    """n points on a sphere, deterministic under the seed."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return np.asarray(center, dtype=float) + radius * u
