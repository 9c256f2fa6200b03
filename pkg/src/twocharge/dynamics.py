"""Equations of motion, integration and invariant monitoring.

Three formulations are available:

* ``direct``: both charges in the lab frame with Coulomb + Lorentz forces.
  This is the oracle; it uses only H, never the vector potential.
* ``reduced``: centre-of-mass / relative equations.  Exact for a uniform
  field; for a linear field the centre-of-mass force includes the
  (Rdot . grad) H and grad[H . (K_L L + 2 S)] terms and the result carries
  an O(a**2) error in the atomic size a.
* ``simplified``: the reduced form without the (Rdot . grad) H x r term,
  appropriate where Rdot has no component along the field gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import (
    ComState,
    Constants,
    DerivedQuantities,
    LabState,
    SingularConfigurationError,
    cross,
    derived_quantities,
    dot,
    norm,
    to_com,
    to_lab,
)
from .fields import LinearField, UniformField, base_model, field_parameters

DEFAULT_STEPS_PER_PERIOD = 2000
MAX_SAMPLE_BYTES = 1_000_000_000


class IntegrationError(RuntimeError):
    """Integration stopped: collision, non-finite state or step-size underflow."""

    def __init__(self, message, time=None, state=None, index=None):
        super().__init__(message)
        self.time = time
        self.state = state
        self.index = index


def _params(f, k):
    H0, G = field_parameters(f)
    return _kernels.pack_params(k, H0, G)


def _eval(kind, y, f, k):
    y = np.asarray(y, dtype=float)
    flat = np.ascontiguousarray(y.reshape(-1, 12))
    return _kernels.rhs_batch(kind, flat, _params(f, k)).reshape(y.shape)


def _require_nonsingular(separation, k):
    if k.softening == 0.0 and np.any(np.asarray(separation) == 0.0):
        raise SingularConfigurationError("charges coincide and softening is disabled")


def direct_derivative(s: LabState, f, k: Constants) -> LabState:
    """Time derivative of a lab state; the returned fields are (v_p, a_p, v_e, a_e)."""
    _require_nonsingular(s.separation, k)
    return LabState.from_array(_eval(_kernels.DIRECT, s.as_array(), f, k))


def reduced_uniform_derivative(s: ComState, f, k: Constants) -> ComState:
    if not isinstance(base_model(f), UniformField):
        raise TypeError("reduced_uniform_derivative needs a uniform field; use reduced_inhomogeneous_derivative")
    _require_nonsingular(norm(s.r), k)
    return ComState.from_array(_eval(_kernels.REDUCED, s.as_array(), f, k))


def reduced_inhomogeneous_derivative(s: ComState, f, k: Constants) -> ComState:
    if not isinstance(base_model(f), LinearField):
        raise TypeError("reduced_inhomogeneous_derivative needs a linear field; use reduced_uniform_derivative")
    _require_nonsingular(norm(s.r), k)
    return ComState.from_array(_eval(_kernels.REDUCED, s.as_array(), f, k))


def simplified_sg_derivative(s: ComState, f, k: Constants) -> ComState:
    if not isinstance(base_model(f), LinearField):
        raise TypeError("simplified_sg_derivative needs a linear field")
    _require_nonsingular(norm(s.r), k)
    return ComState.from_array(_eval(_kernels.SIMPLIFIED, s.as_array(), f, k))


def dropped_term(s: ComState, f, k: Constants):
    """(e/c) grad(Rdot . H) x r: the CoM force the simplified equation omits."""
    _, G = field_parameters(f)
    return (k.e / k.c) * cross(s.Rdot @ G, s.r)


@dataclass(frozen=True)
class ForceChannels:
    """Individual centre-of-mass force terms of the reduced equation."""

    relative_current: np.ndarray  # (e/c) H x rdot
    convective: np.ndarray  # (e/c) [(Rdot . grad) H] x r
    orbital: np.ndarray  # -(e/2 mu c) K_L (L . grad) H
    cross_coupling: np.ndarray  # -(e/mu c) (S . grad) H

    @property
    def total(self):
        return self.relative_current + self.convective + self.orbital + self.cross_coupling


def force_channels(s: ComState, f, k: Constants) -> ForceChannels:
    H0, G = field_parameters(f)
    H = H0 + s.R @ G.T
    dq = derived_quantities(s, k)
    eoc = k.e / k.c
    return ForceChannels(
        relative_current=eoc * cross(H, s.rdot),
        convective=eoc * cross(s.Rdot @ G.T, s.r),
        orbital=-(eoc / (2.0 * k.mu)) * k.K_L * (dq.L @ G.T),
        cross_coupling=-(eoc / k.mu) * (dq.S @ G.T),
    )


_NAMES = {
    "direct": _kernels.DIRECT,
    "reduced": _kernels.REDUCED,
    "simplified": _kernels.SIMPLIFIED,
}
_FUNCTIONS = {
    direct_derivative: ("direct", None),
    reduced_uniform_derivative: ("reduced", UniformField),
    reduced_inhomogeneous_derivative: ("reduced", LinearField),
    simplified_sg_derivative: ("simplified", LinearField),
}


def _resolve(equations, f):
    if callable(equations):
        try:
            name, required = _FUNCTIONS[equations]
        except KeyError:
            raise ValueError(f"unknown derivative function {equations!r}") from None
        if required is not None and not isinstance(base_model(f), required):
            raise TypeError(f"{equations.__name__} cannot be used with {type(base_model(f)).__name__}")
        return name
    if equations not in _NAMES:
        raise ValueError(f"equations must be one of {sorted(_NAMES)}, got {equations!r}")
    if equations == "simplified" and not isinstance(base_model(f), LinearField):
        raise TypeError("simplified equations need a linear field")
    return equations


@dataclass(frozen=True)
class IntegratorSpec:
    """How to integrate.

    ``step=None`` picks (internal period) / ``steps_per_period`` from the
    osculating Kepler orbit of the initial state.  For ``rk45`` the same rule
    sets the sample spacing and the first trial step; ``tol`` is used as both
    relative and (scaled) absolute tolerance.
    """

    t_end: float
    method: str = "rk4"
    step: float | None = None
    steps_per_period: int = DEFAULT_STEPS_PER_PERIOD
    tol: float = 1e-10
    sample_every: int = 1
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"method must be 'rk4' or 'rk45', got {self.method!r}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be positive, got {self.t_end!r}")
        if self.step is not None and not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError(f"step must be positive, got {self.step!r}")
        if self.steps_per_period < 1:
            raise ValueError("steps_per_period must be >= 1")
        if not (0 < self.tol <= 1e-3):
            raise ValueError(f"tol must lie in (0, 1e-3], got {self.tol!r}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")


def osculating_period(s: ComState, k: Constants):
    """Kepler period of the instantaneous relative orbit (per atom).

    Unbound states fall back to the circular period at the current radius.
    """
    r = norm(s.r)
    _require_nonsingular(r, k)
    potential = -k.e**2 / np.sqrt(r**2 + k.softening**2)
    energy = 0.5 * k.mu * dot(s.rdot, s.rdot) + potential
    bound = energy < 0
    a = np.where(bound, k.e**2 / (2.0 * np.abs(np.where(bound, energy, -1.0))), r)
    return 2.0 * np.pi * np.sqrt(k.mu * a**3 / k.e**2)


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution.  ``states`` arrays have shape (n_samples, *batch, 3)."""

    times: np.ndarray
    states: ComState
    monitors: DerivedQuantities
    constants: Constants
    equations: str
    step: float
    status: np.ndarray = field(default=None)
    failure_times: np.ndarray = field(default=None)

    def __post_init__(self):
        t = self.times
        if t.ndim != 1 or t.shape[0] != self.states.R.shape[0]:
            raise ValueError("times and states must have matching lengths")
        if t.shape[0] > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def failed(self):
        return np.asarray(self.status) != _kernels.OK

    def final(self) -> ComState:
        return self.states[-1]


_FAILURE_TEXT = {
    _kernels.SINGULAR: "charges collided (|r| reached the singularity floor or closed faster than the step resolves)",
    _kernels.NONFINITE: "state became non-finite",
    _kernels.UNDERFLOW: "adaptive step size underflow",
    _kernels.MAX_STEPS: "maximum number of steps exceeded",
}


def integrate(equations, s0, f, k: Constants, spec: IntegratorSpec, allow_failures=False) -> Trajectory:
    """Integrate one state or a batch of states.

    ``equations`` is a derivative function from this module or one of
    ``"direct"``, ``"reduced"``, ``"simplified"``.  ``s0`` may be a LabState or
    ComState; samples are always returned in centre-of-mass coordinates.

    With ``allow_failures`` a failed atom is frozen at its last good state and
    flagged in ``Trajectory.status`` instead of raising.
    """
    name = _resolve(equations, f)
    kind = _NAMES[name]
    com0 = to_com(s0, k) if isinstance(s0, LabState) else s0
    single = com0.R.ndim == 1
    batch_shape = com0.R.shape[:-1]
    com_flat = ComState.from_array(com0.as_array().reshape(-1, 12))
    y0 = to_lab(com_flat, k).as_array() if kind == _kernels.DIRECT else com_flat.as_array()
    y0 = np.ascontiguousarray(y0)
    r0 = norm(com_flat.r)
    _require_nonsingular(r0, k)

    if spec.step is None:
        h_nominal = float(np.min(osculating_period(com_flat, k))) / spec.steps_per_period
    else:
        h_nominal = spec.step
    every = spec.sample_every
    n_intervals = max(1, math.ceil(spec.t_end / (h_nominal * every) - 1e-9))
    n_steps = n_intervals * every
    h = spec.t_end / n_steps
    n_bytes = (n_intervals + 1) * y0.shape[0] * 12 * 8
    if n_bytes > MAX_SAMPLE_BYTES:
        raise ValueError(
            f"{n_intervals + 1} samples x {y0.shape[0]} states would need {n_bytes / 1e9:.1f} GB; "
            "increase sample_every"
        )
    floor = 1e-8 * r0 if k.softening == 0.0 else np.zeros_like(r0)
    p = _params(f, k)

    if spec.method == "rk4":
        samples, status, fail_step = _kernels.rk4_batch(kind, y0, p, h, n_steps, every, floor)
        times = np.arange(n_intervals + 1) * (h * every)
        times[-1] = spec.t_end
        fail_times = np.where(fail_step >= 0, fail_step * h, np.nan)
    else:
        times = np.arange(n_intervals + 1) * (h * every)
        times[-1] = spec.t_end
        atol = np.empty(12)
        pos = max(float(np.max(r0)), 1e-300)
        vel = max(float(np.max(norm(com_flat.rdot))), float(np.max(norm(com_flat.Rdot))), 1e-300)
        atol[[0, 1, 2, 6, 7, 8]] = spec.tol * pos
        atol[[3, 4, 5, 9, 10, 11]] = spec.tol * vel
        samples, status, fail_times, _ = _kernels.dp45_batch(
            kind, y0, p, times, spec.tol, atol, h, floor, spec.max_steps
        )

    if np.any(status != _kernels.OK) and not allow_failures:
        i = int(np.argmax(status != _kernels.OK))
        last = samples[-1, i]
        state = LabState.from_array(last) if kind == _kernels.DIRECT else ComState.from_array(last)
        where = f" (atom {i})" if not single else ""
        raise IntegrationError(
            f"{_FAILURE_TEXT[int(status[i])]} at t = {fail_times[i]:.6g}{where}",
            time=float(fail_times[i]),
            state=state,
            index=None if single else i,
        )

    if kind == _kernels.DIRECT:
        states = to_com(LabState.from_array(samples), k)
    else:
        states = ComState.from_array(samples)
    arr = states.as_array().reshape((len(times),) + batch_shape + (12,))
    states = ComState.from_array(arr)
    with np.errstate(divide="ignore"):
        monitors = derived_quantities(states, k) if k.softening > 0 or np.all(norm(states.r) > 0) else None
    return Trajectory(
        times=times,
        states=states,
        monitors=monitors,
        constants=k,
        equations=name,
        step=h,
        status=status.reshape(batch_shape) if not single else status[0],
        failure_times=fail_times.reshape(batch_shape) if not single else fail_times[0],
    )


def reverse(s: ComState) -> ComState:
    """Same positions, all velocities negated."""
    return ComState(s.R, -s.Rdot, s.r, -s.rdot)


@dataclass(frozen=True)
class CouplingReport:
    times: np.ndarray
    E_com: np.ndarray
    E_internal: np.ndarray
    E_total: np.ndarray
    com_excursion: float
    internal_excursion: float
    total_excursion: float
    max_total_deviation: float
    relative_total_drift: float


def monitor_coupling(tr: Trajectory, k: Constants | None = None) -> CouplingReport:
    """Energy bookkeeping between the CoM and internal channels."""
    k = tr.constants if k is None else k
    m = tr.monitors if tr.monitors is not None else derived_quantities(tr.states, k)
    E_com = np.asarray(m.E_com)
    E_int = np.asarray(m.E_internal)
    E_tot = E_com + E_int
    dev = np.max(np.abs(E_tot - E_tot[0]))
    return CouplingReport(
        times=tr.times,
        E_com=E_com,
        E_internal=E_int,
        E_total=E_tot,
        com_excursion=float(np.max(np.ptp(E_com, axis=0))),
        internal_excursion=float(np.max(np.ptp(E_int, axis=0))),
        total_excursion=float(np.max(np.ptp(E_tot, axis=0))),
        max_total_deviation=float(dev),
        relative_total_drift=float(np.max(np.abs(E_tot - E_tot[0]) / np.abs(E_tot[0]))),
    )


@dataclass(frozen=True)
class TrajectoryComparison:
    rms_R: float
    rms_r: float
    max_R: float
    max_r: float
    scale: float


def compare_trajectories(a: Trajectory, b: Trajectory, scale=None) -> TrajectoryComparison:
    """RMS over matched samples of |dR| and |dr|, divided by ``scale``.

    The default scale is the initial internal orbit size |r(0)| of ``a``.
    """
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=1e-12, atol=0.0):
        raise ValueError("trajectories must share sample times")
    if scale is None:
        scale = float(np.max(norm(a.states.r[0])))
    dR = norm(a.states.R - b.states.R)
    dr = norm(a.states.r - b.states.r)
    return TrajectoryComparison(
        rms_R=float(np.sqrt(np.mean(dR**2))) / scale,
        rms_r=float(np.sqrt(np.mean(dr**2))) / scale,
        max_R=float(np.max(dR)) / scale,
        max_r=float(np.max(dr)) / scale,
        scale=scale,
    )


def fit_order(sizes, errors):
    """Least-squares slope of log(error) against log(size)."""
    slope, _ = np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(errors, float)), 1)
    return float(slope)
