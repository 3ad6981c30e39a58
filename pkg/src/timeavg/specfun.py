"""Complex error function and the smeared top-hat kernel.

``erf`` at complex argument is evaluated with a Maclaurin series inside a
disc of radius ``SERIES_RADIUS`` and through the Faddeeva function
``w(z) = exp(-z**2) erfc(-iz)`` outside it.  The Faddeeva evaluation is the
Poppe-Wijers scheme (truncated Laplace continued fraction, with a Taylor
correction near the real axis), vectorized over numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Interval

SERIES_RADIUS = 2.0
_SERIES_TERMS = 48
_TWO_OVER_SQRT_PI = 1.1283791670955126
_SQRT_I = np.exp(0.25j * np.pi)
_EPS = np.finfo(float).eps
_LOG_MAX = 709.78


@dataclass(frozen=True)
class ComplexErfResult:
    value: complex
    estimated_abs_error: float


def faddeeva_upper(x, y):
    """w(x + iy) for x >= 0, y >= 0 (arrays broadcast together)."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    x = x.ravel()
    y = y.ravel()
    u = np.empty_like(x)
    v = np.empty_like(x)

    xs = x / 6.3
    ys = y / 4.4
    qrho = xs * xs + ys * ys
    xquad = (x - y) * (x + y)
    yquad = 2.0 * x * y

    taylor = qrho < 0.085264
    if np.any(taylor):
        xt, yt = x[taylor], y[taylor]
        xq, yq = xquad[taylor], yquad[taylor]
        q = (1.0 - 0.85 * ys[taylor]) * np.sqrt(qrho[taylor])
        n_terms = np.rint(6.0 + 72.0 * q).astype(int)
        nmax = int(n_terms.max())
        xsum = np.zeros_like(xt)
        ysum = np.zeros_like(xt)
        started = np.zeros(xt.shape, bool)
        for i in range(nmax, 0, -1):
            start = n_terms == i
            xsum[start] = 1.0 / (2 * i + 1)
            started |= start
            xaux = (xsum * xq - ysum * yq) / i
            ynew = (xsum * yq + ysum * xq) / i
            xnew = xaux + 1.0 / (2 * i - 1)
            xsum = np.where(started, xnew, xsum)
            ysum = np.where(started, ynew, ysum)
        u1 = 1.0 - _TWO_OVER_SQRT_PI * (xsum * yt + ysum * xt)
        v1 = _TWO_OVER_SQRT_PI * (xsum * xt - ysum * yt)
        damp = np.exp(-xq)
        u2 = damp * np.cos(yq)
        v2 = -damp * np.sin(yq)
        u[taylor] = u1 * u2 - v1 * v2
        v[taylor] = u1 * v2 + v1 * u2

    cf = ~taylor
    if np.any(cf):
        xc, yc = x[cf], y[cf]
        q = qrho[cf]
        far = q > 1.0
        h = np.where(far, 0.0, 1.88 * (1.0 - ys[cf]) * np.sqrt(np.clip(1.0 - q, 0.0, None)))
        near_q = (1.0 - ys[cf]) * np.sqrt(np.clip(1.0 - q, 0.0, None))
        kapn = np.where(far, 0, np.rint(7.0 + 34.0 * near_q)).astype(int)
        nu = np.where(far,
                      (3.0 + 1442.0 / (26.0 * np.sqrt(q) + 77.0)).astype(int),
                      np.rint(16.0 + 26.0 * near_q).astype(int))
        use_h = h > 0.0
        h2 = np.where(use_h, 2.0 * h, 1.0)
        qlambda = np.where(use_h, h2 ** kapn, 0.0)
        rx = np.zeros_like(xc)
        ry = np.zeros_like(xc)
        sx = np.zeros_like(xc)
        sy = np.zeros_like(xc)
        for n in range(int(nu.max()), -1, -1):
            active = n <= nu
            np1 = n + 1
            tx = yc + h + np1 * rx
            ty = xc - np1 * ry
            c = 0.5 / (tx * tx + ty * ty)
            rx = np.where(active, c * tx, rx)
            ry = np.where(active, c * ty, ry)
            acc = active & use_h & (n <= kapn)
            if np.any(acc):
                tx2 = qlambda + sx
                sxn = rx * tx2 - ry * sy
                syn = ry * tx2 + rx * sy
                sx = np.where(acc, sxn, sx)
                sy = np.where(acc, syn, sy)
                qlambda = np.where(acc, qlambda / h2, qlambda)
        uc = _TWO_OVER_SQRT_PI * np.where(use_h, sx, rx)
        vc = _TWO_OVER_SQRT_PI * np.where(use_h, sy, ry)
        uc = np.where(yc == 0.0, np.exp(-xc * xc), uc)
        u[cf] = uc
        v[cf] = vc
    return u + 1j * v


def _erf_series(z):
    z2 = z * z
    term = z.copy()
    total = z.copy()
    magnitude = np.abs(z)
    for n in range(1, _SERIES_TERMS):
        term = term * (-z2) / n
        total = total + term / (2 * n + 1)
        magnitude = magnitude + np.abs(term) / (2 * n + 1)
    return _TWO_OVER_SQRT_PI * total, _TWO_OVER_SQRT_PI * magnitude


def _erf_first_quadrant_far(x, y):
    # erfc(z) = exp(-z^2) w(iz), and w(-y + ix) = conj(w(y + ix))
    w = np.conj(faddeeva_upper(y, x))
    expo = -((x - y) * (x + y)) - 2j * x * y + np.log(w)
    with np.errstate(over="ignore", invalid="ignore"):
        erfc = np.exp(expo)
        huge = expo.real > _LOG_MAX
        if np.any(huge):
            ph = expo.imag[huge]
            re = np.nan_to_num(np.cos(ph) * np.inf, nan=0.0)
            im = np.nan_to_num(np.sin(ph) * np.inf, nan=0.0)
            erfc[huge] = re + 1j * im
    return 1.0 - erfc, np.abs(erfc)


def _erf_with_error(z):
    z = np.asarray(z, dtype=complex)
    shape = z.shape
    z = z.ravel()
    if not np.all(np.isfinite(z)):
        raise ValueError("erf requires finite arguments")
    # reduce to the first quadrant: erf(-z) = -erf(z), erf(conj z) = conj erf(z)
    flip_sign = z.real < 0
    zr = np.where(flip_sign, -z, z)
    flip_conj = zr.imag < 0
    zq = np.where(flip_conj, np.conj(zr), zr)

    out = np.empty_like(zq)
    err = np.empty(zq.shape)
    small = np.abs(zq) <= SERIES_RADIUS
    if np.any(small):
        val, mag = _erf_series(zq[small])
        out[small] = val
        err[small] = 4.0 * _EPS * mag
    if np.any(~small):
        zb = zq[~small]
        val, scale = _erf_first_quadrant_far(zb.real, zb.imag)
        out[~small] = val
        err[~small] = 4e-14 * scale + _EPS
    out = np.where(flip_conj, np.conj(out), out)
    out = np.where(flip_sign, -out, out)
    # exact real axis: use the libm value
    real_axis = z.imag == 0.0
    if np.any(real_axis):
        from math import erf as _erf_real
        out[real_axis] = [complex(_erf_real(t)) for t in z.real[real_axis]]
        err[real_axis] = _EPS
    return out.reshape(shape), err.reshape(shape)


def erf_complex(z):
    """Vectorized erf for complex arrays."""
    return _erf_with_error(z)[0]


def cerf(z: complex) -> ComplexErfResult:
    """erf(z) for a single finite complex argument, with an error estimate."""
    val, err = _erf_with_error(np.array([z], dtype=complex))
    return ComplexErfResult(complex(val[0]), float(err[0]))


def e_delta_smeared(z, ell, delta_range: Interval):
    """Smeared top hat ``E(z, ell)`` on the interval, built from erf along the
    principal sqrt(i) = exp(i pi/4) ray.  Vectorized over ``z``."""
    if not ell > 0:
        raise ValueError("ell must be positive; use e_delta for the exact top hat (ell = 0)")
    z = np.asarray(z, dtype=float)
    scale = _SQRT_I * ell

    def edge(e):
        # erf tends to +-1 along the rays at angle -+pi/4 (Fresnel limit)
        if math.isinf(e):
            return np.full(z.shape, -math.copysign(1.0, e), dtype=complex)
        return erf_complex((z - e) / scale)

    val = 0.5 * (edge(delta_range.a) - edge(delta_range.b))
    return val if val.ndim else complex(val)


def e_delta(z, delta_range: Interval):
    """Exact top hat: 1 inside, 0 outside, 1/2 on the endpoints."""
    z = np.asarray(z, dtype=float)
    a, b = delta_range.a, delta_range.b
    val = np.where((z > a) & (z < b), 1.0, 0.0)
    val = np.where((z == a) | (z == b), 0.5, val)
    return val if val.ndim else float(val)
