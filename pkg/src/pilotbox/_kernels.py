"""Compiled trajectory kernels.

Single-trajectory adaptive integration of the guidance ODE with the classical
Fehlberg 4(5) embedded pair, plus a parallel batch driver. Everything here is
deterministic: each trajectory's arithmetic is a fixed sequence independent of
thread scheduling, so batch results are bit-identical for identical inputs.

Falls back to pure-Python execution when numba is unavailable (slow but
semantically identical), so the package stays importable everywhere.
"""

import math

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


PI = math.pi

# Trajectory status codes (mirrored by integrator.TrajectoryStatus).
COMPLETED = 0
VALIDATED = 1
TOLERANCE_FLOOR = 2
STEP_LIMIT = 3
NODE_ABORT = 4
BUFFER_FULL = 5  # recording buffer exhausted; internal to _endpoint_recorded

# Fehlberg 4(5): six stages, 4th-order solution propagated, 5th-order
# difference as the per-step error estimate.
_C2, _C3, _C4, _C5, _C6 = 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0
_A21 = 1.0 / 4.0
_A31, _A32 = 3.0 / 32.0, 9.0 / 32.0
_A41, _A42, _A43 = 1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0
_A51, _A52, _A53, _A54 = 439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0
_A61, _A62, _A63, _A64, _A65 = -8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0
_B1, _B3, _B4, _B5 = 25.0 / 216.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0
_E1, _E3, _E4, _E5, _E6 = 1.0 / 360.0, -128.0 / 4275.0, -2197.0 / 75240.0, 1.0 / 50.0, 2.0 / 55.0

TABLEAU_ID = "fehlberg-4(5)-classic"


@njit(cache=True, inline="always")
def _velocity(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi, x, y, t, node_floor):
    """Guidance velocity at one spacetime point.

    Uses angle-sum towers for sin(k x) and the time factor exp(-i E t) built
    as powers of w = exp(-i t / 2), since every energy is (m^2 + n^2) / 2.
    Returns (vx, vy, density, ok); ok is False below the node floor.
    """
    s1 = math.sin(x)
    c1 = math.cos(x)
    sx[1] = s1
    cx[1] = c1
    for k in range(2, kmax + 1):
        sx[k] = sx[k - 1] * c1 + cx[k - 1] * s1
        cx[k] = cx[k - 1] * c1 - sx[k - 1] * s1
    s1 = math.sin(y)
    c1 = math.cos(y)
    sy[1] = s1
    cy[1] = c1
    for k in range(2, kmax + 1):
        sy[k] = sy[k - 1] * c1 + cy[k - 1] * s1
        cy[k] = cy[k - 1] * c1 - sy[k - 1] * s1

    half = 0.5 * t
    wr = math.cos(half)
    wi = -math.sin(half)
    w2r = wr * wr - wi * wi
    w2i = 2.0 * wr * wi
    odr = wr  # w^(2k-1), starts at w^1
    odi = wi
    pr[1] = wr
    pi[1] = wi
    for k in range(2, kmax + 1):
        tr = odr * w2r - odi * w2i
        ti = odr * w2i + odi * w2r
        odr = tr
        odi = ti
        ar = pr[k - 1] * odr - pi[k - 1] * odi
        ai = pr[k - 1] * odi + pi[k - 1] * odr
        pr[k] = ar
        pi[k] = ai

    psr = 0.0
    psm = 0.0
    gxr = 0.0
    gxi = 0.0
    gyr = 0.0
    gyi = 0.0
    for j in range(ms.shape[0]):
        m = ms[j]
        n = ns[j]
        ar = cre[j] * pr[m] - cim[j] * pi[m]
        ai = cre[j] * pi[m] + cim[j] * pr[m]
        tr = ar * pr[n] - ai * pi[n]
        ti = ar * pi[n] + ai * pr[n]
        smn = sx[m] * sy[n]
        dgx = m * cx[m] * sy[n]
        dgy = n * sx[m] * cy[n]
        psr += tr * smn
        psm += ti * smn
        gxr += tr * dgx
        gxi += ti * dgx
        gyr += tr * dgy
        gyi += ti * dgy

    dens = psr * psr + psm * psm
    if dens < node_floor:
        return 0.0, 0.0, dens, False
    inv = 1.0 / dens
    vx = (psr * gxi - psm * gxr) * inv
    vy = (psr * gyi - psm * gyr) * inv
    return vx, vy, dens, True


@njit(cache=True, inline="always")
def _rkf_step(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi, x, y, t, h, node_floor):
    """One embedded 4(5) attempt of signed size h.

    Returns (x4, y4, err_x, err_y, ok); ok is False when any stage fell below
    the node floor (the attempt must be retried with a smaller step).
    """
    k1x, k1y, _, ok = _velocity(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi,
                                x, y, t, node_floor)
    if not ok:
        return 0.0, 0.0, 0.0, 0.0, False
    k2x, k2y, _, ok = _velocity(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi,
                                x + h * _A21 * k1x,
                                y + h * _A21 * k1y,
                                t + _C2 * h, node_floor)
    if not ok:
        return 0.0, 0.0, 0.0, 0.0, False
    k3x, k3y, _, ok = _velocity(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi,
                                x + h * (_A31 * k1x + _A32 * k2x),
                                y + h * (_A31 * k1y + _A32 * k2y),
                                t + _C3 * h, node_floor)
    if not ok:
        return 0.0, 0.0, 0.0, 0.0, False
    k4x, k4y, _, ok = _velocity(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi,
                                x + h * (_A41 * k1x + _A42 * k2x + _A43 * k3x),
                                y + h * (_A41 * k1y + _A42 * k2y + _A43 * k3y),
                                t + _C4 * h, node_floor)
    if not ok:
        return 0.0, 0.0, 0.0, 0.0, False
    k5x, k5y, _, ok = _velocity(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi,
                                x + h * (_A51 * k1x + _A52 * k2x + _A53 * k3x + _A54 * k4x),
                                y + h * (_A51 * k1y + _A52 * k2y + _A53 * k3y + _A54 * k4y),
                                t + _C5 * h, node_floor)
    if not ok:
        return 0.0, 0.0, 0.0, 0.0, False
    k6x, k6y, _, ok = _velocity(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi,
                                x + h * (_A61 * k1x + _A62 * k2x + _A63 * k3x + _A64 * k4x + _A65 * k5x),
                                y + h * (_A61 * k1y + _A62 * k2y + _A63 * k3y + _A64 * k4y + _A65 * k5y),
                                t + _C6 * h, node_floor)
    if not ok:
        return 0.0, 0.0, 0.0, 0.0, False

    x4 = x + h * (_B1 * k1x + _B3 * k3x + _B4 * k4x + _B5 * k5x)
    y4 = y + h * (_B1 * k1y + _B3 * k3y + _B4 * k4y + _B5 * k5y)
    err_x = abs(h * (_E1 * k1x + _E3 * k3x + _E4 * k4x + _E5 * k5x + _E6 * k6x))
    err_y = abs(h * (_E1 * k1y + _E3 * k3y + _E4 * k4y + _E5 * k5y + _E6 * k6y))
    return x4, y4, err_x, err_y, True


@njit(cache=True)
def _integrate_to(ms, ns, cre, cim, kmax, sx, cx, sy, cy, pr, pi,
                  x, y, t, t_target, h, delta, node_floor, max_steps, safety, steps):
    """Advance one trajectory from t to t_target with the running step h.

    A step of size h is accepted only when both per-component error estimates
    are below |h| * delta and the endpoint stays strictly inside the box;
    otherwise the step shrinks. The attempt counter (accepted + rejected)
    is capped at max_steps. Returns (x, y, t, h, status, steps) with h left
    at its unclipped value so a caller can continue across segments.
    """
    direction = 1.0 if t_target >= t else -1.0
    hmin = 4.44e-16 * (1.0 + abs(t) + abs(t_target))
    if (h > 0.0) != (t_target > t):
        h = -h
    while True:
        remaining = t_target - t
        if direction * remaining <= hmin:
            return x, y, t_target, h, COMPLETED, steps
        if steps >= max_steps:
            return x, y, t, h, STEP_LIMIT, steps
        hh = h
        clipped = False
        if direction * hh >= direction * remaining:
            hh = remaining
            clipped = True
        xn, yn, err_x, err_y, ok = _rkf_step(ms, ns, cre, cim, kmax,
                                             sx, cx, sy, cy, pr, pi,
                                             x, y, t, hh, node_floor)
        steps += 1
        if not ok:
            h = 0.5 * hh
            if abs(h) <= hmin:
                return x, y, t, h, NODE_ABORT, steps
            continue
        tol = abs(hh) * delta
        err = err_x if err_x > err_y else err_y
        if err_x < tol and err_y < tol:
            if xn <= 0.0 or xn >= PI or yn <= 0.0 or yn >= PI:
                # Walls are nodal lines; a step proposing to exit is rejected.
                h = 0.5 * hh
                if abs(h) <= hmin:
                    return x, y, t, h, TOLERANCE_FLOOR, steps
                continue
            if clipped:
                return xn, yn, t_target, h, COMPLETED, steps
            x = xn
            y = yn
            t = t + hh
            if err > 0.0:
                fac = safety * (tol / err) ** 0.2
                if fac > 10.0:
                    fac = 10.0
                elif fac < 0.1:
                    fac = 0.1
            else:
                fac = 10.0
            h = hh * fac
        else:
            fac = safety * (tol / err) ** 0.2
            if fac < 0.1:
                fac = 0.1
            h = hh * fac
            if abs(h) <= hmin:
                return x, y, t, h, TOLERANCE_FLOOR, steps


@njit(cache=True)
def _endpoint(ms, ns, cre, cim, kmax, x0, y0, t0, t1, delta, node_floor,
              max_steps, safety, h0_frac):
    sx = np.empty(kmax + 1)
    cx = np.empty(kmax + 1)
    sy = np.empty(kmax + 1)
    cy = np.empty(kmax + 1)
    pr = np.empty(kmax + 1)
    pi = np.empty(kmax + 1)
    span = abs(t1 - t0)
    if span == 0.0:
        return x0, y0, COMPLETED, 0
    h = (t1 - t0) * h0_frac
    x, y, _, _, status, steps = _integrate_to(ms, ns, cre, cim, kmax,
                                              sx, cx, sy, cy, pr, pi,
                                              x0, y0, t0, t1, h, delta,
                                              node_floor, max_steps, safety, 0)
    return x, y, status, steps


@njit(cache=True, parallel=True)
def _endpoints_batch(ms, ns, cre, cim, kmax, xs, ys, idx, t0, t1, delta,
                     node_floor, max_steps, safety, h0_frac,
                     out_x, out_y, out_status, out_steps):
    for j in prange(idx.shape[0]):
        i = idx[j]
        x, y, status, steps = _endpoint(ms, ns, cre, cim, kmax, xs[i], ys[i],
                                        t0, t1, delta, node_floor, max_steps,
                                        safety, h0_frac)
        out_x[i] = x
        out_y[i] = y
        out_status[i] = status
        out_steps[i] = steps


@njit(cache=True)
def _endpoint_recorded(ms, ns, cre, cim, kmax, x0, y0, t0, t1, delta,
                       node_floor, max_steps, safety, h0_frac,
                       rec_t, rec_x, rec_y, rec_h):
    """Endpoint run that also logs every accepted step (t, x, y, h_accepted).

    Identical acceptance logic to _integrate_to, so the endpoint matches a
    plain _endpoint run bit for bit. Returns (x, y, status, steps, count);
    count == len(rec_t) means the recording buffer filled and the run stopped.
    """
    sx = np.empty(kmax + 1)
    cx = np.empty(kmax + 1)
    sy = np.empty(kmax + 1)
    cy = np.empty(kmax + 1)
    pr = np.empty(kmax + 1)
    pi = np.empty(kmax + 1)
    cap = rec_t.shape[0]
    count = 0
    span = abs(t1 - t0)
    if span == 0.0:
        return x0, y0, COMPLETED, 0, 0
    direction = 1.0 if t1 >= t0 else -1.0
    hmin = 4.44e-16 * (1.0 + abs(t0) + abs(t1))
    h = (t1 - t0) * h0_frac
    x = x0
    y = y0
    t = t0
    steps = 0
    while True:
        remaining = t1 - t
        if direction * remaining <= hmin:
            return x, y, COMPLETED, steps, count
        if steps >= max_steps:
            return x, y, STEP_LIMIT, steps, count
        hh = h
        clipped = False
        if direction * hh >= direction * remaining:
            hh = remaining
            clipped = True
        xn, yn, err_x, err_y, ok = _rkf_step(ms, ns, cre, cim, kmax,
                                             sx, cx, sy, cy, pr, pi,
                                             x, y, t, hh, node_floor)
        steps += 1
        if not ok:
            h = 0.5 * hh
            if abs(h) <= hmin:
                return x, y, NODE_ABORT, steps, count
            continue
        tol = abs(hh) * delta
        err = err_x if err_x > err_y else err_y
        if err_x < tol and err_y < tol:
            if xn <= 0.0 or xn >= PI or yn <= 0.0 or yn >= PI:
                h = 0.5 * hh
                if abs(h) <= hmin:
                    return x, y, TOLERANCE_FLOOR, steps, count
                continue
            x = xn
            y = yn
            t = t1 if clipped else t + hh
            if count < cap:
                rec_t[count] = t
                rec_x[count] = x
                rec_y[count] = y
                rec_h[count] = hh
                count += 1
            else:
                return x, y, BUFFER_FULL, steps, count
            if clipped:
                return x, y, COMPLETED, steps, count
            if err > 0.0:
                fac = safety * (tol / err) ** 0.2
                if fac > 10.0:
                    fac = 10.0
                elif fac < 0.1:
                    fac = 0.1
            else:
                fac = 10.0
            h = hh * fac
        else:
            fac = safety * (tol / err) ** 0.2
            if fac < 0.1:
                fac = 0.1
            h = hh * fac
            if abs(h) <= hmin:
                return x, y, TOLERANCE_FLOOR, steps, count


@njit(cache=True)
def _through_times(ms, ns, cre, cim, kmax, x0, y0, times, delta, node_floor,
                   max_steps, safety, h0_frac, out_x, out_y):
    """Integrate through a monotone time grid, landing on each entry exactly.

    times[0] is the start; out arrays receive positions at every entry.
    Returns (status, filled) where filled counts valid entries.
    """
    sx = np.empty(kmax + 1)
    cx = np.empty(kmax + 1)
    sy = np.empty(kmax + 1)
    cy = np.empty(kmax + 1)
    pr = np.empty(kmax + 1)
    pi = np.empty(kmax + 1)
    x = x0
    y = y0
    out_x[0] = x
    out_y[0] = y
    span = abs(times[times.shape[0] - 1] - times[0])
    if span == 0.0:
        for j in range(times.shape[0]):
            out_x[j] = x
            out_y[j] = y
        return COMPLETED, times.shape[0]
    h = (times[times.shape[0] - 1] - times[0]) * h0_frac
    steps = 0
    for j in range(1, times.shape[0]):
        x, y, _, h, status, steps = _integrate_to(ms, ns, cre, cim, kmax,
                                                  sx, cx, sy, cy, pr, pi,
                                                  x, y, times[j - 1], times[j],
                                                  h, delta, node_floor,
                                                  max_steps, safety, steps)
        if status != COMPLETED:
            return status, j
        out_x[j] = x
        out_y[j] = y
    return COMPLETED, times.shape[0]


def warmup():
    """Force JIT compilation of all kernels on a tiny problem."""
    ms = np.array([1], dtype=np.int64)
    ns = np.array([1], dtype=np.int64)
    cre = np.array([2.0 / PI])
    cim = np.array([0.0])
    _endpoint(ms, ns, cre, cim, 1, 1.0, 1.0, 0.0, 0.01, 1e-6, 1e-12, 10**6, 0.9, 1e-4)
    xs = np.array([1.0])
    ys = np.array([1.0])
    idx = np.arange(1)
    ox = np.empty(1)
    oy = np.empty(1)
    ost = np.empty(1, dtype=np.int64)
    osteps = np.empty(1, dtype=np.int64)
    _endpoints_batch(ms, ns, cre, cim, 1, xs, ys, idx, 0.0, 0.01, 1e-6,
                     1e-12, 10**6, 0.9, 1e-4, ox, oy, ost, osteps)
    buf = np.empty(16)
    _endpoint_recorded(ms, ns, cre, cim, 1, 1.0, 1.0, 0.0, 0.01, 1e-6, 1e-12,
                       10**6, 0.9, 1e-4, buf, buf.copy(), buf.copy(), buf.copy())
    times = np.array([0.0, 0.005, 0.01])
    _through_times(ms, ns, cre, cim, 1, 1.0, 1.0, times, 1e-6, 1e-12, 10**6,
                   0.9, 1e-4, np.empty(3), np.empty(3))
