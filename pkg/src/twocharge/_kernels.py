"""Compiled right-hand sides and per-atom integration loops.

State layout (12 floats per atom):
    lab frame:  r_p, v_p, r_e, v_e
    CoM frame:  R, Rdot, r, rdot

Parameter vector (17 floats): m_p, m_e, e, c, eps, H0[3], G[9] (row-major).

Every atom is integrated independently in its own loop, so results do not
depend on batch composition or ordering.
"""
import math

import numpy as np
from numba import njit

DIRECT = 0
REDUCED = 1
SIMPLIFIED = 2

OK = 0
SINGULAR = 1
NONFINITE = 2
UNDERFLOW = 3
MAX_STEPS = 4


def pack_params(k, H0, G):
    p = np.empty(17)
    p[0] = k.m_p
    p[1] = k.m_e
    p[2] = k.e
    p[3] = k.c
    p[4] = k.softening
    p[5:8] = H0
    p[8:17] = np.asarray(G, dtype=float).reshape(9)
    return p


@njit(cache=True, inline="always")
def _cross(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


@njit(cache=True, inline="always")
def _matvec(p, x, y, z):
    return (
        p[8] * x + p[9] * y + p[10] * z,
        p[11] * x + p[12] * y + p[13] * z,
        p[14] * x + p[15] * y + p[16] * z,
    )


@njit(cache=True)
def rhs(kind, y, p, out):
    m_p = p[0]
    m_e = p[1]
    e = p[2]
    c = p[3]
    eps2 = p[4] * p[4]
    eoc = e / c
    if kind == DIRECT:
        dx = y[0] - y[6]
        dy = y[1] - y[7]
        dz = y[2] - y[8]
        r2 = dx * dx + dy * dy + dz * dz + eps2
        s = -e * e / (r2 * math.sqrt(r2))
        fx = s * dx
        fy = s * dy
        fz = s * dz
        gx, gy, gz = _matvec(p, y[0], y[1], y[2])
        hx = p[5] + gx
        hy = p[6] + gy
        hz = p[7] + gz
        lx, ly, lz = _cross(y[3], y[4], y[5], hx, hy, hz)
        out[0] = y[3]
        out[1] = y[4]
        out[2] = y[5]
        out[3] = (fx + eoc * lx) / m_p
        out[4] = (fy + eoc * ly) / m_p
        out[5] = (fz + eoc * lz) / m_p
        gx, gy, gz = _matvec(p, y[6], y[7], y[8])
        hx = p[5] + gx
        hy = p[6] + gy
        hz = p[7] + gz
        lx, ly, lz = _cross(y[9], y[10], y[11], hx, hy, hz)
        out[6] = y[9]
        out[7] = y[10]
        out[8] = y[11]
        out[9] = (-fx - eoc * lx) / m_e
        out[10] = (-fy - eoc * ly) / m_e
        out[11] = (-fz - eoc * lz) / m_e
        return

    M = m_p + m_e
    mu = m_p * m_e / M
    K_L = (m_p - m_e) / M
    Rx, Ry, Rz = y[0], y[1], y[2]
    Vx, Vy, Vz = y[3], y[4], y[5]
    rx, ry, rz = y[6], y[7], y[8]
    wx, wy, wz = y[9], y[10], y[11]
    gx, gy, gz = _matvec(p, Rx, Ry, Rz)
    hx = p[5] + gx
    hy = p[6] + gy
    hz = p[7] + gz

    # K_L L + 2 S with L = mu r x rdot, S = mu r x Rdot
    lx, ly, lz = _cross(rx, ry, rz, wx, wy, wz)
    sx, sy, sz = _cross(rx, ry, rz, Vx, Vy, Vz)
    qx = mu * (K_L * lx + 2.0 * sx)
    qy = mu * (K_L * ly + 2.0 * sy)
    qz = mu * (K_L * lz + 2.0 * sz)
    # grad_R [H . q] = G^T q = G q for a curl-free field
    gqx, gqy, gqz = _matvec(p, qx, qy, qz)

    ax, ay, az = _cross(hx, hy, hz, wx, wy, wz)
    fx = eoc * ax - 0.5 * eoc / mu * gqx
    fy = eoc * ay - 0.5 * eoc / mu * gqy
    fz = eoc * az - 0.5 * eoc / mu * gqz
    if kind == REDUCED:
        # [(Rdot . grad) H] x r
        gvx, gvy, gvz = _matvec(p, Vx, Vy, Vz)
        bx, by, bz = _cross(gvx, gvy, gvz, rx, ry, rz)
        fx += eoc * bx
        fy += eoc * by
        fz += eoc * bz

    r2 = rx * rx + ry * ry + rz * rz + eps2
    s = -e * e / (r2 * math.sqrt(r2))
    ux, uy, uz = _cross(Vx + K_L * wx, Vy + K_L * wy, Vz + K_L * wz, hx, hy, hz)
    out[0] = Vx
    out[1] = Vy
    out[2] = Vz
    out[3] = fx / M
    out[4] = fy / M
    out[5] = fz / M
    out[6] = wx
    out[7] = wy
    out[8] = wz
    out[9] = (s * rx - eoc * ux) / mu
    out[10] = (s * ry - eoc * uy) / mu
    out[11] = (s * rz - eoc * uz) / mu


@njit(cache=True)
def rhs_batch(kind, y, p):
    out = np.empty_like(y)
    for i in range(y.shape[0]):
        rhs(kind, y[i], p, out[i])
    return out


@njit(cache=True, inline="always")
def _separation2(kind, y):
    if kind == DIRECT:
        dx = y[6] - y[0]
        dy = y[7] - y[1]
        dz = y[8] - y[2]
    else:
        dx = y[6]
        dy = y[7]
        dz = y[8]
    return dx * dx + dy * dy + dz * dz


@njit(cache=True)
def _check(kind, y, floor2):
    for j in range(12):
        if not math.isfinite(y[j]):
            return NONFINITE
    if _separation2(kind, y) <= floor2:
        return SINGULAR
    return OK


@njit(cache=True)
def _unresolved(kind, y, yn):
    """The step moved r by more than half the separation: an encounter the
    fixed step cannot resolve (only checked for the unsoftened potential)."""
    if kind == DIRECT:
        ax = (y[6] - y[0]) - (yn[6] - yn[0])
        ay = (y[7] - y[1]) - (yn[7] - yn[1])
        az = (y[8] - y[2]) - (yn[8] - yn[2])
    else:
        ax = y[6] - yn[6]
        ay = y[7] - yn[7]
        az = y[8] - yn[8]
    step2 = ax * ax + ay * ay + az * az
    r2 = min(_separation2(kind, y), _separation2(kind, yn))
    return 4.0 * step2 > r2


@njit(cache=True)
def rk4_batch(kind, y0, p, h, n_steps, every, floor):
    """Fixed-step RK4 for each atom.  Returns (samples, status, fail_step).

    A positive ``floor`` marks the unsoftened potential: besides |r| <= floor,
    a step that moves r by more than half the separation is a collision.

    samples has shape (n_steps // every + 1, n_atoms, 12).  After a failure an
    atom's remaining samples repeat its last good state.
    """
    n_atoms = y0.shape[0]
    n_samples = n_steps // every + 1
    samples = np.empty((n_samples, n_atoms, 12))
    status = np.zeros(n_atoms, dtype=np.int64)
    fail_step = np.full(n_atoms, -1, dtype=np.int64)
    k1 = np.empty(12)
    k2 = np.empty(12)
    k3 = np.empty(12)
    k4 = np.empty(12)
    tmp = np.empty(12)
    y = np.empty(12)
    yn = np.empty(12)
    for a in range(n_atoms):
        floor2 = floor[a] * floor[a]
        for j in range(12):
            y[j] = y0[a, j]
        samples[0, a] = y
        k = 1
        for step in range(1, n_steps + 1):
            rhs(kind, y, p, k1)
            for j in range(12):
                tmp[j] = y[j] + 0.5 * h * k1[j]
            rhs(kind, tmp, p, k2)
            for j in range(12):
                tmp[j] = y[j] + 0.5 * h * k2[j]
            rhs(kind, tmp, p, k3)
            for j in range(12):
                tmp[j] = y[j] + h * k3[j]
            rhs(kind, tmp, p, k4)
            for j in range(12):
                yn[j] = y[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            code = _check(kind, yn, floor2)
            if code == OK and floor2 > 0.0 and _unresolved(kind, y, yn):
                code = SINGULAR
            if code != OK:
                status[a] = code
                fail_step[a] = step
                while k < n_samples:
                    samples[k, a] = y
                    k += 1
                break
            for j in range(12):
                y[j] = yn[j]
            if step % every == 0:
                samples[k, a] = y
                k += 1
    return samples, status, fail_step


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# b - b* (fifth minus embedded fourth order weights)
_E1 = 35.0 / 384.0 - 5179.0 / 57600.0
_E3 = 500.0 / 1113.0 - 7571.0 / 16695.0
_E4 = 125.0 / 192.0 - 393.0 / 640.0
_E5 = -2187.0 / 6784.0 + 92097.0 / 339200.0
_E6 = 11.0 / 84.0 - 187.0 / 2100.0
_E7 = -1.0 / 40.0


@njit(cache=True)
def dp45_batch(kind, y0, p, t_samples, rtol, atol, h0, floor, max_steps):
    """Adaptive Dormand-Prince 5(4) per atom, landing exactly on t_samples."""
    n_atoms = y0.shape[0]
    n_samples = t_samples.shape[0]
    samples = np.empty((n_samples, n_atoms, 12))
    status = np.zeros(n_atoms, dtype=np.int64)
    fail_time = np.full(n_atoms, np.nan)
    n_accepted = np.zeros(n_atoms, dtype=np.int64)
    k1 = np.empty(12)
    k2 = np.empty(12)
    k3 = np.empty(12)
    k4 = np.empty(12)
    k5 = np.empty(12)
    k6 = np.empty(12)
    k7 = np.empty(12)
    tmp = np.empty(12)
    y = np.empty(12)
    yn = np.empty(12)
    for a in range(n_atoms):
        floor2 = floor[a] * floor[a]
        for j in range(12):
            y[j] = y0[a, j]
        samples[0, a] = y
        t = t_samples[0]
        h = h0
        idx = 1
        steps = 0
        failed = False
        rhs(kind, y, p, k1)
        while idx < n_samples:
            target = t_samples[idx]
            if steps >= max_steps:
                status[a] = MAX_STEPS
                failed = True
                break
            hs = h
            land = False
            if t + hs >= target:
                hs = target - t
                land = True
            if hs <= 1e-14 * max(1.0, abs(t)):
                status[a] = UNDERFLOW
                failed = True
                break
            for j in range(12):
                tmp[j] = y[j] + hs * _A21 * k1[j]
            rhs(kind, tmp, p, k2)
            for j in range(12):
                tmp[j] = y[j] + hs * (_A31 * k1[j] + _A32 * k2[j])
            rhs(kind, tmp, p, k3)
            for j in range(12):
                tmp[j] = y[j] + hs * (_A41 * k1[j] + _A42 * k2[j] + _A43 * k3[j])
            rhs(kind, tmp, p, k4)
            for j in range(12):
                tmp[j] = y[j] + hs * (_A51 * k1[j] + _A52 * k2[j] + _A53 * k3[j] + _A54 * k4[j])
            rhs(kind, tmp, p, k5)
            for j in range(12):
                tmp[j] = y[j] + hs * (
                    _A61 * k1[j] + _A62 * k2[j] + _A63 * k3[j] + _A64 * k4[j] + _A65 * k5[j]
                )
            rhs(kind, tmp, p, k6)
            for j in range(12):
                yn[j] = y[j] + hs * (
                    _B1 * k1[j] + _B3 * k3[j] + _B4 * k4[j] + _B5 * k5[j] + _B6 * k6[j]
                )
            rhs(kind, yn, p, k7)
            err = 0.0
            for j in range(12):
                ej = hs * (
                    _E1 * k1[j] + _E3 * k3[j] + _E4 * k4[j] + _E5 * k5[j] + _E6 * k6[j] + _E7 * k7[j]
                )
                sc = atol[j] + rtol * max(abs(y[j]), abs(yn[j]))
                ej = abs(ej) / sc
                if not ej <= err:
                    err = ej
            steps += 1
            if err <= 1.0:
                code = _check(kind, yn, floor2)
                if code != OK:
                    status[a] = code
                    failed = True
                    fail_time[a] = t + hs
                    break
                if land:
                    t = target
                else:
                    t = t + hs
                for j in range(12):
                    y[j] = yn[j]
                    k1[j] = k7[j]
                n_accepted[a] += 1
                if land:
                    samples[idx, a] = y
                    idx += 1
            if not math.isfinite(err):
                factor = 0.2
            elif err == 0.0:
                factor = 5.0
            else:
                factor = min(5.0, max(0.2, 0.9 * err ** -0.2))
            if land and err <= 1.0:
                # keep the unclipped step for the next interval
                h = max(h, hs * factor) if hs < h else hs * factor
            else:
                h = hs * factor
        if failed:
            if not math.isfinite(fail_time[a]):
                fail_time[a] = t
            while idx < n_samples:
                samples[idx, a] = y
                idx += 1
    return samples, status, fail_time, n_accepted
