"""Compiled Dormand-Prince 8(5,3) stepper with dense output and hyperplane events.

The tableau is taken from ``scipy.integrate``; the stepping loop, step-size
control and event location run under numba so that right-hand sides written
with ``numba.njit`` never cross into the interpreter.
"""

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dc

N_STAGES = _dc.N_STAGES
A = np.ascontiguousarray(_dc.A[:N_STAGES, :N_STAGES])
B = np.ascontiguousarray(_dc.B)
C = np.ascontiguousarray(_dc.C[:N_STAGES])
E3 = np.ascontiguousarray(_dc.E3)
E5 = np.ascontiguousarray(_dc.E5)
D = np.ascontiguousarray(_dc.D)
A_EXTRA = np.ascontiguousarray(_dc.A[N_STAGES + 1:])
C_EXTRA = np.ascontiguousarray(_dc.C[N_STAGES + 1:])
N_EXT = _dc.N_STAGES_EXTENDED
POWER = _dc.INTERPOLATOR_POWER

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0

# status codes returned by integrate()
DONE = 0
EVENT = 1
UNDERFLOW = -1
MAX_STEPS = -2
NONFINITE = -3


@njit(cache=True)
def _rms(v):
    return np.sqrt(np.sum(v * v) / v.size)


@njit(cache=False)  # takes a dispatcher argument; on-disk caching would key on it
def _initial_step(fun, t0, y0, f0, prm, direction, rtol, atol, span):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * direction * f0
    f1 = fun(t0 + h0 * direction, y1, prm)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1, span)


@njit(cache=False)  # takes a dispatcher argument; on-disk caching would key on it
def _rk_step(fun, t, y, f, h, prm, K):
    n = y.size
    K[0] = f
    for s in range(1, N_STAGES):
        dy = np.zeros(n)
        for j in range(s):
            dy += A[s, j] * K[j]
        K[s] = fun(t + C[s] * h, y + h * dy, prm)
    acc = np.zeros(n)
    for j in range(N_STAGES):
        acc += B[j] * K[j]
    y_new = y + h * acc
    f_new = fun(t + h, y_new, prm)
    K[N_STAGES] = f_new
    return y_new, f_new


@njit(cache=True)
def _error_norm(K, h, scale):
    n = scale.size
    err5 = np.zeros(n)
    err3 = np.zeros(n)
    for j in range(N_STAGES + 1):
        err5 += E5[j] * K[j]
        err3 += E3[j] * K[j]
    err5 /= scale
    err3 /= scale
    e5 = np.sum(err5 * err5)
    e3 = np.sum(err3 * err3)
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / np.sqrt((e5 + 0.01 * e3) * n)


@njit(cache=False)  # takes a dispatcher argument; on-disk caching would key on it
def _dense_coeffs(fun, t_old, y_old, y_new, f_new, h, prm, K):
    n = y_old.size
    for k in range(3):
        s = N_STAGES + 1 + k
        dy = np.zeros(n)
        for j in range(s):
            dy += A_EXTRA[k, j] * K[j]
        K[s] = fun(t_old + C_EXTRA[k] * h, y_old + h * dy, prm)
    F = np.empty((POWER, n))
    f_old = K[0]
    delta = y_new - y_old
    F[0] = delta
    F[1] = h * f_old - delta
    F[2] = 2.0 * delta - h * (f_new + f_old)
    for i in range(4):
        acc = np.zeros(n)
        for j in range(N_EXT):
            acc += D[i, j] * K[j]
        F[3 + i] = h * acc
    return F


@njit(cache=True)
def dense_eval(y_old, F, x):
    """Evaluate one step's interpolant at normalized position ``x`` in [0, 1]."""
    y = np.zeros(y_old.size)
    for i in range(POWER):
        y += F[POWER - 1 - i]
        if i % 2 == 0:
            y *= x
        else:
            y *= 1.0 - x
    return y + y_old


@njit(cache=True)
def _locate(y_old, F, idx, value):
    # Illinois regula falsi on the interpolant, g(0) and g(1) bracket a root
    a, b = 0.0, 1.0
    ga = y_old[idx] - value
    gb = dense_eval(y_old, F, 1.0)[idx] - value
    if ga == 0.0:
        return 0.0
    if gb == 0.0:
        return 1.0
    side = 0
    x = 0.5
    for _ in range(200):
        x = (a * gb - b * ga) / (gb - ga)
        if not (a < x < b):
            x = 0.5 * (a + b)
        gx = dense_eval(y_old, F, x)[idx] - value
        if gx == 0.0 or abs(gx) < 1e-15 or b - a < 1e-16:
            return x
        if (gx > 0.0) == (gb > 0.0):
            b, gb = x, gx
            if side == 1:
                ga *= 0.5
            side = 1
        else:
            a, ga = x, gx
            if side == -1:
                gb *= 0.5
            side = -1
    return x


@njit(cache=False)  # takes a dispatcher argument; on-disk caching would key on it
def integrate(fun, t0, y0, t1, prm, rtol, atol, dense,
              ev_idx, ev_val, ev_dir, side_idx, side_sign, ev_count, max_steps):
    """Propagate ``y' = fun(t, y, prm)`` from ``t0`` to ``t1``.

    When ``ev_idx >= 0`` the hyperplane ``y[ev_idx] == ev_val`` is armed: a
    crossing counts when d/dt of the component has the sign of ``ev_dir``
    (0 accepts both) and, if ``side_idx >= 0``, ``side_sign * y[side_idx] > 0``
    at the crossing. Integration stops at the ``ev_count``-th counted crossing.

    Returns ``(status, ts, ys, Fs, hs, n_steps, nfev)`` where ``hs`` holds the
    full signed length of each step (the last one may overshoot an event). On EVENT the last entries
    of ``ts``/``ys`` are the located crossing.
    """
    n = y0.size
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    cap = 256
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    Fs = np.empty((cap if dense else 1, POWER, n))
    hs = np.empty(cap)
    ts[0] = t0
    ys[0] = y0
    if span == 0.0:
        return DONE, ts[:1], ys[:1], Fs[:0], hs[:0], 0, 0

    K = np.empty((N_EXT, n))
    y = y0.copy()
    t = t0
    f = fun(t, y, prm)
    nfev = 1
    h_abs = _initial_step(fun, t0, y0, f, prm, direction, rtol, atol, span)
    nfev += 1
    n_steps = 0
    counted = 0
    status = DONE

    while direction * (t1 - t) > 0.0:
        if n_steps >= max_steps:
            status = MAX_STEPS
            break
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        rejected = False
        accepted = False
        while not accepted:
            if h_abs < min_step:
                status = UNDERFLOW
                break
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t1) > 0.0:
                t_new = t1
            h = t_new - t
            h_abs = abs(h)
            y_new, f_new = _rk_step(fun, t, y, f, h, prm, K)
            nfev += N_STAGES
            if not np.all(np.isfinite(y_new)):
                h_abs *= MIN_FACTOR
                rejected = True
                continue
            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            err = _error_norm(K, h, scale)
            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                h_abs *= factor
                accepted = True
            else:
                h_abs *= max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
                rejected = True
        if status != DONE:
            break

        F = np.empty((1, 1))
        have_F = False
        if dense:
            F = _dense_coeffs(fun, t, y, y_new, f_new, h, prm, K)
            nfev += 3
            have_F = True

        if ev_idx >= 0:
            g_old = y[ev_idx] - ev_val
            g_new = y_new[ev_idx] - ev_val
            crossed = (g_old < 0.0 < g_new) or (g_old > 0.0 > g_new) or (g_new == 0.0 and g_old != 0.0)
            if n_steps == 0 and g_old == 0.0 and g_new != 0.0:
                crossed = True
            if crossed:
                slope = (g_new - g_old) * direction
                ok = ev_dir == 0 or (ev_dir > 0 and slope > 0.0) or (ev_dir < 0 and slope < 0.0)
                if ok:
                    if not have_F:
                        F = _dense_coeffs(fun, t, y, y_new, f_new, h, prm, K)
                        nfev += 3
                    x = _locate(y, F, ev_idx, ev_val)
                    y_ev = dense_eval(y, F, x)
                    if side_idx < 0 or side_sign * y_ev[side_idx] > 0.0:
                        counted += 1
                        if counted >= ev_count:
                            if n_steps + 2 > ts.size:
                                ts, ys, Fs, hs = _grow(ts, ys, Fs, hs, dense)
                            if dense:
                                Fs[n_steps] = F
                            hs[n_steps] = h
                            n_steps += 1
                            ts[n_steps] = t + x * h
                            ys[n_steps] = y_ev
                            status = EVENT
                            break

        if n_steps + 2 > ts.size:
            ts, ys, Fs, hs = _grow(ts, ys, Fs, hs, dense)
        if dense:
            Fs[n_steps] = F
        hs[n_steps] = h
        n_steps += 1
        ts[n_steps] = t_new
        ys[n_steps] = y_new
        t = t_new
        y = y_new
        f = f_new

    if dense:
        return status, ts[:n_steps + 1], ys[:n_steps + 1], Fs[:n_steps], hs[:n_steps], n_steps, nfev
    return status, ts[:n_steps + 1], ys[:n_steps + 1], Fs[:0], hs[:n_steps], n_steps, nfev


@njit(cache=True)
def _grow(ts, ys, Fs, hs, dense):
    cap = 2 * ts.size
    ts2 = np.empty(cap)
    ts2[:ts.size] = ts
    hs2 = np.empty(cap)
    hs2[:hs.size] = hs
    ys2 = np.empty((cap, ys.shape[1]))
    ys2[:ys.shape[0]] = ys
    if dense:
        Fs2 = np.empty((cap, Fs.shape[1], Fs.shape[2]))
        Fs2[:Fs.shape[0]] = Fs
        return ts2, ys2, Fs2, hs2
    return ts2, ys2, Fs, hs2


@njit(cache=False)  # takes a dispatcher argument; on-disk caching would key on it
def endpoint(fun, t0, y0, t1, prm, rtol, atol, max_steps):
    """Endpoint-only propagation; no history is kept."""
    n = y0.size
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    if span == 0.0:
        return DONE, y0.copy(), t0
    K = np.empty((N_EXT, n))
    y = y0.copy()
    t = t0
    f = fun(t, y, prm)
    h_abs = _initial_step(fun, t0, y0, f, prm, direction, rtol, atol, span)
    steps = 0
    while direction * (t1 - t) > 0.0:
        if steps >= max_steps:
            return MAX_STEPS, y, t
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        rejected = False
        while True:
            if h_abs < min_step:
                return UNDERFLOW, y, t
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t1) > 0.0:
                t_new = t1
            h = t_new - t
            h_abs = abs(h)
            y_new, f_new = _rk_step(fun, t, y, f, h, prm, K)
            if not np.all(np.isfinite(y_new)):
                h_abs *= MIN_FACTOR
                rejected = True
                continue
            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            err = _error_norm(K, h, scale)
            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                h_abs *= factor
                break
            h_abs *= max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
            rejected = True
        steps += 1
        t = t_new
        y = y_new
        f = f_new
    return DONE, y, t
