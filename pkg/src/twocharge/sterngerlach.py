"""Beam ensembles in inhomogeneous fields and their deflection statistics."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .core import ComState, Constants, circular_orbit, derived_quantities, norm
from .dynamics import IntegratorSpec, force_channels, integrate
from .fields import field_parameters, zero_field

MAX_FAILURE_FRACTION = 0.01
DEFAULT_SOFTENING_FRACTION = 0.05
HISTOGRAM_BINS = 21


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything needed to build and fly a beam.

    ``internal`` is ``"circular"`` (fixed |L|, random phase) or ``"linear"``
    (straight oscillation through the centre, L = 0, random phase).
    ``axis=None`` draws the orbit normal / oscillation axis isotropically;
    otherwise ``axis`` is perturbed by a Gaussian of width ``axis_spread``
    and renormalised.  ``jitter`` is the per-axis std of the initial R.
    ``integrator.t_end`` is the flight time.
    """

    n_atoms: int
    integrator: IntegratorSpec
    internal: str = "circular"
    radius: float = 1.0
    axis: tuple | None = None
    axis_spread: float = 0.0
    beam_velocity: tuple = (0.0, 0.0, 0.0)
    jitter: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    constants: Constants = field(default_factory=Constants.hydrogen)
    field: object = field(default_factory=zero_field)
    equations: str = "reduced"

    def __post_init__(self):
        if isinstance(self.n_atoms, bool) or not isinstance(self.n_atoms, (int, np.integer)) or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be a positive integer, got {self.n_atoms!r}")
        if self.internal not in ("circular", "linear"):
            raise ValueError(f"internal must be 'circular' or 'linear', got {self.internal!r}")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"radius must be positive, got {self.radius!r}")
        if self.internal == "linear" and self.constants.softening <= 0:
            raise ValueError("linear oscillation passes through the force centre and needs softening > 0")
        if self.axis is not None:
            a = np.asarray(self.axis, dtype=float)
            if a.shape != (3,) or not np.all(np.isfinite(a)) or not np.any(a):
                raise ValueError(f"axis must be a nonzero 3-vector, got {self.axis!r}")
        if not (self.axis_spread >= 0 and math.isfinite(self.axis_spread)):
            raise ValueError("axis_spread must be >= 0")
        for name in ("beam_velocity", "jitter"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector")
        if np.any(np.asarray(self.jitter) < 0):
            raise ValueError("jitter must be non-negative")
        if self.equations not in ("reduced", "direct", "simplified"):
            raise ValueError(f"unknown equations {self.equations!r}")

    @property
    def flight_time(self):
        return self.integrator.t_end


def default_linear_constants(radius=1.0):
    """Hydrogen masses with softening 0.05 * radius."""
    return Constants.hydrogen(softening=DEFAULT_SOFTENING_FRACTION * radius)


@functools.lru_cache(maxsize=16)
def _oscillation_table(k: Constants, amplitude: float, samples_per_period: int = 20000):
    """One field-free period of the 1D softened oscillation starting at rest at +amplitude.

    Returns (period, x(t), v(t)) on a uniform time grid covering [0, period].
    """
    # Kepler estimate with semi-major axis amplitude/2, then refine from the turning point
    guess = 2.0 * np.pi * math.sqrt(k.mu * (0.5 * amplitude) ** 3 / k.e**2)
    h = guess / samples_per_period
    y0 = np.zeros((1, 12))
    y0[0, 6] = amplitude
    p = _kernels.pack_params(k, np.zeros(3), np.zeros((3, 3)))
    n = 2 * samples_per_period
    s, status, _ = _kernels.rk4_batch(_kernels.REDUCED, y0, p, h, n, 1, np.zeros(1))
    if status[0] != _kernels.OK:
        raise RuntimeError("reference oscillation failed")
    x = s[:, 0, 6]
    v = s[:, 0, 9]
    # v goes negative first; its first upward zero crossing is the far turning point
    up = np.nonzero((v[:-1] < 0) & (v[1:] >= 0))[0]
    i = int(up[0])
    half = (i + v[i] / (v[i] - v[i + 1])) * h
    period = 2.0 * half
    t = np.arange(n + 1) * h
    keep = t <= period + h
    return period, t[keep], x[keep], v[keep]


def oscillation_period(k: Constants, amplitude: float) -> float:
    """Period of straight-line oscillation through the softened centre."""
    return _oscillation_table(k, float(amplitude))[0]


def _axes(spec, rng):
    n = spec.n_atoms
    if spec.axis is None:
        a = rng.normal(size=(n, 3))
    else:
        a = np.asarray(spec.axis, dtype=float) / np.linalg.norm(spec.axis)
        a = a + spec.axis_spread * rng.normal(size=(n, 3))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _hermite(tq, t, y, dy):
    """Cubic Hermite interpolation on a uniform grid."""
    h = t[1] - t[0]
    i = np.clip(((tq - t[0]) // h).astype(int), 0, len(t) - 2)
    u = (tq - t[i]) / h
    h00 = (1 + 2 * u) * (1 - u) ** 2
    h10 = u * (1 - u) ** 2
    h01 = u * u * (3 - 2 * u)
    h11 = u * u * (u - 1)
    return h00 * y[i] + h10 * h * dy[i] + h01 * y[i + 1] + h11 * h * dy[i + 1]


def build_ensemble(spec: EnsembleSpec) -> ComState:
    """Initial states of every atom as one batched ComState of shape (n_atoms, 3)."""
    rng = np.random.default_rng(spec.seed)
    k = spec.constants
    axes = _axes(spec, rng)
    n = spec.n_atoms
    jitter = np.asarray(spec.jitter, dtype=float)
    if spec.internal == "circular":
        phase = rng.uniform(0.0, 2.0 * np.pi, n)
        R = jitter * rng.normal(size=(n, 3))
        return circular_orbit(k, spec.radius, normal=axes, phase=phase, R=R, Rdot=spec.beam_velocity)
    period, t, x, v = _oscillation_table(k, float(spec.radius))
    tau = rng.uniform(0.0, period, n)
    a = -k.e**2 * x / (k.mu * (x * x + k.softening**2) ** 1.5)
    xs = _hermite(tau, t, x, v)
    # speed from energy conservation so every atom sits exactly on the amplitude's energy shell
    pot = lambda q: -k.e**2 / np.sqrt(q * q + k.softening**2)  # noqa: E731
    speed = np.sqrt(np.maximum(2.0 / k.mu * (pot(float(spec.radius)) - pot(xs)), 0.0))
    vs = (np.sign(_hermite(tau, t, v, a)) * speed)[:, None]
    xs = xs[:, None]
    R = jitter * rng.normal(size=(n, 3))
    Rdot = np.broadcast_to(np.asarray(spec.beam_velocity, dtype=float), (n, 3))
    return ComState(R=R, Rdot=Rdot, r=xs * axes, rdot=vs * axes)


def field_axis(f):
    """Unit vector along H0, or z when the bias field vanishes."""
    H0, _ = field_parameters(f)
    h = float(norm(H0))
    return H0 / h if h > 0 else np.array([0.0, 0.0, 1.0])


def _fmean(x):
    return math.fsum(x) / len(x)


def _fvar(x, m):
    if len(x) < 2:
        return 0.0
    return math.fsum((xi - m) ** 2 for xi in x) / (len(x) - 1)


@dataclass(frozen=True)
class AxisStats:
    mean: np.ndarray
    variance: np.ndarray
    standard_error: np.ndarray

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=float)
        n = values.shape[0]
        mean = np.array([_fmean(values[:, j]) for j in range(3)])
        var = np.array([_fvar(values[:, j], mean[j]) for j in range(3)])
        return cls(mean=mean, variance=var, standard_error=np.sqrt(var / n))

    @property
    def significance(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.mean / self.standard_error


@dataclass(frozen=True)
class DeflectionStats:
    """Endpoints and statistics of one beam run.

    ``displacement`` is R(T) - R(0) - Rdot(0) T, the deviation from free flight.
    Statistics cover surviving atoms only; ``failed`` lists excluded indices.
    """

    n_atoms: int
    flight_time: float
    equations: str
    initial: ComState
    final: ComState
    failed: tuple
    final_R: AxisStats
    displacement: AxisStats
    mean_final_Rdot: np.ndarray
    L_final: np.ndarray
    S_final: np.ndarray
    axis: np.ndarray
    histogram_counts: np.ndarray
    histogram_edges: np.ndarray
    times: np.ndarray
    displacement_mean_history: np.ndarray
    displacement_variance_history: np.ndarray

    @property
    def n_failed(self):
        return len(self.failed)

    @property
    def valid(self):
        return self.n_failed <= MAX_FAILURE_FRACTION * self.n_atoms

    @property
    def survivors(self):
        mask = np.ones(self.n_atoms, dtype=bool)
        mask[list(self.failed)] = False
        return mask

    def displacements(self):
        """Per-atom displacement of the surviving atoms."""
        m = self.survivors
        free = self.initial.R[m] + self.initial.Rdot[m] * self.flight_time
        return self.final.R[m] - free

    def axial_deflection(self):
        """(mean, standard error) of the displacement along the field axis."""
        d = self.displacements() @ self.axis
        m = _fmean(d)
        return m, math.sqrt(_fvar(d, m) / len(d))

    def report(self) -> str:
        lines = [
            "# deflection statistics (Gaussian units; lengths in the scenario length unit)",
            f"equations = {self.equations}",
            f"n_atoms = {self.n_atoms}",
            f"n_failed = {self.n_failed}",
            f"valid = {str(self.valid).lower()}",
            f"flight_time = {self.flight_time:.17g}",
            f"field_axis = {_fmt(self.axis)}",
            f"final_R_mean = {_fmt(self.final_R.mean)}",
            f"final_R_variance = {_fmt(self.final_R.variance)}",
            f"final_Rdot_mean = {_fmt(self.mean_final_Rdot)}",
            f"displacement_mean = {_fmt(self.displacement.mean)}",
            f"displacement_variance = {_fmt(self.displacement.variance)}",
            f"displacement_standard_error = {_fmt(self.displacement.standard_error)}",
            f"displacement_significance = {_fmt(self.displacement.significance)}",
            f"axial_histogram_edges = {_fmt(self.histogram_edges)}",
            f"axial_histogram_counts = {' '.join(str(int(c)) for c in self.histogram_counts)}",
        ]
        if self.failed:
            lines.append(f"failed_atoms = {' '.join(str(i) for i in self.failed)}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    return " ".join(f"{x:.17g}" for x in np.asarray(v, dtype=float).ravel())


def run_beam(ensemble: ComState, f=None, spec: EnsembleSpec | None = None, equations=None) -> DeflectionStats:
    """Fly every atom of ``ensemble`` through ``f`` for ``spec.flight_time``."""
    if spec is None:
        raise ValueError("run_beam needs an EnsembleSpec for constants and integrator settings")
    f = spec.field if f is None else f
    equations = spec.equations if equations is None else equations
    k = spec.constants
    tr = integrate(equations, ensemble, f, k, spec.integrator, allow_failures=True)
    status = np.atleast_1d(tr.status)
    failed = tuple(int(i) for i in np.nonzero(status != _kernels.OK)[0])
    ok = status == _kernels.OK
    if not np.any(ok):
        raise RuntimeError("every atom in the beam failed to integrate")
    final = tr.states[-1]
    initial = ensemble
    free = initial.R[None] + initial.Rdot[None] * tr.times[:, None, None]
    disp_t = tr.states.R - free
    mean_hist = np.array([[_fmean(disp_t[i, ok, j]) for j in range(3)] for i in range(len(tr.times))])
    var_hist = np.array(
        [[_fvar(disp_t[i, ok, j], mean_hist[i, j]) for j in range(3)] for i in range(len(tr.times))]
    )
    disp = disp_t[-1, ok]
    axis = field_axis(f)
    axial = disp @ axis
    lo, hi = float(np.min(axial)), float(np.max(axial))
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(axial, bins=HISTOGRAM_BINS, range=(lo, hi))
    dq = derived_quantities(final, k) if k.softening > 0 or np.all(norm(final.r) > 0) else None
    return DeflectionStats(
        n_atoms=len(initial),
        flight_time=float(tr.times[-1]),
        equations=tr.equations,
        initial=initial,
        final=final,
        failed=failed,
        final_R=AxisStats.of(final.R[ok]),
        displacement=AxisStats.of(disp),
        mean_final_Rdot=np.array([_fmean(final.Rdot[ok, j]) for j in range(3)]),
        L_final=dq.L if dq is not None else None,
        S_final=dq.S if dq is not None else None,
        axis=axis,
        histogram_counts=counts,
        histogram_edges=edges,
        times=tr.times,
        displacement_mean_history=mean_hist,
        displacement_variance_history=var_hist,
    )


def simulate(spec: EnsembleSpec, equations=None) -> DeflectionStats:
    return run_beam(build_ensemble(spec), spec.field, spec, equations)


@dataclass(frozen=True)
class PositroniumReport:
    stats: DeflectionStats
    K_L: float
    orbital_channel_max: float  # largest |K_L L . grad H| force over all atoms and samples
    cross_channel_rms: float  # rms of the S-channel force at the end of flight


def positronium_scenario(spec: EnsembleSpec) -> PositroniumReport:
    """Run an equal-mass beam and report the vanishing internal-L force channel."""
    k = spec.constants
    if k.m_p != k.m_e:
        raise ValueError(f"positronium needs equal masses, got m_p={k.m_p!r}, m_e={k.m_e!r}")
    ens = build_ensemble(spec)
    stats = run_beam(ens, spec.field, spec)
    orb0 = force_channels(ens, spec.field, k).orbital
    ch = force_channels(stats.final, spec.field, k)
    orbital_max = float(max(np.max(np.abs(orb0)), np.max(np.abs(ch.orbital))))
    cross_rms = float(np.sqrt(np.mean(np.sum(ch.cross_coupling**2, axis=-1))))
    return PositroniumReport(stats=stats, K_L=k.K_L, orbital_channel_max=orbital_max, cross_channel_rms=cross_rms)


def with_constants(spec: EnsembleSpec, constants: Constants) -> EnsembleSpec:
    """Same beam, different particle constants (e.g. a hydrogen contrast run)."""
    return replace(spec, constants=constants)


def mirror_internal(s: ComState, normal=(1.0, 0.0, 0.0)) -> ComState:
    """Reflect r and rdot through the plane with the given normal; R and Rdot are kept.

    For a plane containing the field axis this negates the field-axis
    components of L and S, and with them the first-order gradient force.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)

    def reflect(v):
        return v - 2.0 * (v @ n)[..., None] * n

    return ComState(s.R, s.Rdot, reflect(s.r), reflect(s.rdot))
