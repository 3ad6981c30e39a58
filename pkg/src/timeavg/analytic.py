"""Closed-form kernels of the class operator and the Heisenberg projection for
the free particle (omega = 0) and the harmonic oscillator.

Both kernels have the form K(x'', T; x', 0) E(xbar_cl, ell): the propagator
times a smeared top hat evaluated at the time average of the classical path.
They differ only in the smearing length ell (lambda_C for the class operator,
lambda_P for the projection).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .core import GaussianState, Grid, GridState, Interval, SystemParams
from .specfun import e_delta, e_delta_smeared

KERNELS = ("C", "P", "limit")


class ScaleDegenerateError(ValueError):
    """omega*T outside [0, pi): caustic, non-unique classical path or bad radicand."""


def _check_window(params: SystemParams) -> float:
    theta = params.omega_t
    if not 0.0 <= theta < math.pi:
        raise ScaleDegenerateError(
            f"omega*T = {theta:.6g} outside [0, pi); classical path not unique")
    return theta


def _theta_over_sin(theta: float) -> float:
    if theta < 1e-4:
        return 1.0 + theta * theta / 6.0 + 7.0 * theta ** 4 / 360.0
    return theta / math.sin(theta)


def _one_minus_cos_over_sq(theta: float) -> float:
    """(1 - cos t) / t**2 without cancellation."""
    if theta == 0.0:
        return 0.5
    s = math.sin(0.5 * theta)
    return 2.0 * s * s / (theta * theta)


def _lambda_c_bracket(theta: float) -> float:
    """(1 - cos t)/t**4 - sin(t)/(2 t**3); equals 1/24 at t = 0."""
    if theta < 1.0:
        # sum_{n>=2} (-1)^n (2n-2) / (2n)! t^(2n-4) / 2
        total = 0.0
        t2 = theta * theta
        power = 1.0
        for n in range(2, 24):
            total += (-1) ** n * (2 * n - 2) / math.factorial(2 * n) * power
            power *= t2
        return 0.5 * total
    return (1.0 - math.cos(theta)) / theta ** 4 - 0.5 * math.sin(theta) / theta ** 3


def xbar_coefficient(params: SystemParams) -> float:
    """c with xbar_cl = c (x' + x''); tan(wT/2)/(wT), 1/2 for the free particle."""
    theta = _check_window(params)
    if theta < 1e-4:
        return 0.5 + theta * theta / 24.0 + theta ** 4 / 240.0
    return math.tan(0.5 * theta) / theta


@dataclass(frozen=True)
class ScaleConstants:
    lam: float
    lambda_p: float
    lambda_c: float
    t_spread: float | None = None


def scale_constants(params: SystemParams, state: GaussianState | None = None) -> ScaleConstants:
    theta = _check_window(params)
    base = params.hbar * params.horizon / params.mass
    ratio = _theta_over_sin(theta)
    lp2 = 2.0 * base * ratio * _one_minus_cos_over_sq(theta) ** 2
    lc2 = 4.0 * base * ratio * _lambda_c_bracket(theta)
    if not (lp2 > 0 and lc2 > 0):
        raise ScaleDegenerateError("non-positive smearing scale")
    ts = state.t_spread(params) if state is not None else None
    return ScaleConstants(params.lam, math.sqrt(lp2), math.sqrt(lc2), ts)


def smearing_length(params: SystemParams, kernel: str) -> float:
    sc = scale_constants(params)
    if kernel == "C":
        return sc.lambda_c
    if kernel == "P":
        return sc.lambda_p
    raise ValueError(f"no smearing length for kernel {kernel!r}")


def xbar_classical(params: SystemParams, x2, x1):
    return xbar_coefficient(params) * (np.asarray(x1, float) + np.asarray(x2, float))


@dataclass(frozen=True)
class ClassicalPathSummary:
    """Time average of the unique classical path from x1 at 0 to x2 at T."""
    xbar_cl: float
    x1: float
    x2: float


def classical_path_summary(params: SystemParams, x2: float, x1: float) -> ClassicalPathSummary:
    return ClassicalPathSummary(float(xbar_classical(params, x2, x1)), float(x1), float(x2))


def _propagator_parts(params: SystemParams):
    """K = pref * exp(i (A d^2 + B s^2)) with d = x2 - x1, s = x2 + x1."""
    theta = _check_window(params)
    m, hb, T = params.mass, params.hbar, params.horizon
    ratio = _theta_over_sin(theta)
    pref = np.sqrt(m * ratio / (2j * math.pi * hb * T))
    # S = m/(2T) (theta/sin) [d^2 - (x1^2 + x2^2) 2 sin^2(theta/2)]
    #   with x1^2 + x2^2 = (d^2 + s^2)/2
    c0 = m * ratio / (2.0 * T * hb)
    q = math.sin(0.5 * theta) ** 2
    return pref, c0 * (1.0 - q), -c0 * q


def propagator(params: SystemParams, x2, x1):
    """<x2| exp(-iHT/hbar) |x1> (free or harmonic)."""
    pref, A, B = _propagator_parts(params)
    x2 = np.asarray(x2, float)
    x1 = np.asarray(x1, float)
    d = x2 - x1
    s = x2 + x1
    return pref * np.exp(1j * (A * d * d + B * s * s))


def c_matrix_element(params: SystemParams, delta_range: Interval, x2, x1):
    ell = smearing_length(params, "C")
    return propagator(params, x2, x1) * e_delta_smeared(
        xbar_classical(params, x2, x1), ell, delta_range)


def p_matrix_element(params: SystemParams, delta_range: Interval, x2, x1):
    ell = smearing_length(params, "P")
    return propagator(params, x2, x1) * e_delta_smeared(
        xbar_classical(params, x2, x1), ell, delta_range)


def fit_smearing_length(kernel: str, params: SystemParams, delta_range: Interval,
                        points: int = 161, span: float = 8.0) -> float:
    """Smearing length recovered from a kernel's profile across the upper edge.

    The kernel divided by the propagator, sampled on the diagonal x' = x''
    through xbar_cl = b, is fitted by least squares to E_Delta(xbar, ell)
    with ell free.  The sampling window is +-span lambda.
    """
    element = {"C": c_matrix_element, "P": p_matrix_element}[kernel]
    coef = xbar_coefficient(params)
    xbar = delta_range.b + params.lam * np.linspace(-span, span, points)
    x = xbar / (2.0 * coef)
    profile = element(params, delta_range, x, x) / propagator(params, x, x)

    def residual(log_ell):
        diff = e_delta_smeared(xbar, math.exp(log_ell[0]), delta_range) - profile
        return np.concatenate([diff.real, diff.imag])

    # the chirped tails make the cost multimodal; start from a coarse scan
    scan = np.log(params.lam) + np.linspace(math.log(0.1), math.log(10.0), 401)
    costs = [np.sum(residual([v]) ** 2) for v in scan]
    fit = least_squares(residual, [scan[int(np.argmin(costs))]], xtol=1e-14, ftol=1e-15,
                        gtol=1e-15)
    if not fit.success:
        raise RuntimeError(f"edge-profile fit failed: {fit.message}")
    return math.exp(fit.x[0])


def classical_limit_form(params: SystemParams, delta_range: Interval, x2, x1):
    """e_Delta(xbar_cl) K, the common hbar -> 0 form of both kernels."""
    return propagator(params, x2, x1) * e_delta(xbar_classical(params, x2, x1), delta_range)


def xbar_eigenfunction(params: SystemParams, xbar, x):
    """Delta-normalized position representation <x|xbar>."""
    theta = _check_window(params)
    m, hb, T = params.mass, params.hbar, params.horizon
    if theta == 0.0:
        norm = 1.0
        alpha = 1.0
        inv_beta = 2.0 * m / (hb * T)
    else:
        half = 0.5 * theta
        norm = half / abs(math.sin(half))
        alpha = math.sin(theta) / theta
        inv_beta = m / (hb * T) / _one_minus_cos_over_sq(theta)
    x = np.asarray(x, float)
    xbar = np.asarray(xbar, float)
    return (math.sqrt(m / (math.pi * hb * T)) * norm
            * np.exp(1j * inv_beta * (xbar * x - 0.5 * alpha * x * x)))


def class_function(params: SystemParams, delta_range: Interval, u):
    """f with C_Delta = exp(-iHT/hbar) f(xbar) for linear dynamics.

    Both kernels are the propagator times a top hat whose Fourier transform
    carries the phase exp(-i q^2 ell^2 / 4); a function of xbar contributes
    lambda_P^2 by itself, so f carries the remaining lambda_C^2 - lambda_P^2.
    A negative remainder gives the complex conjugate smearing.
    """
    sc = scale_constants(params)
    rem = sc.lambda_c ** 2 - sc.lambda_p ** 2
    if rem == 0.0:
        return e_delta(u, delta_range) + 0j
    val = e_delta_smeared(u, math.sqrt(abs(rem)), delta_range)
    return val if rem > 0 else np.conj(val)


def xbar_distribution(params: SystemParams, state: GaussianState) -> tuple[float, float]:
    """(mean, std) of the time-averaged position in a Gaussian state.

    xbar = cx x + cp T p / m is linear, so its distribution is Gaussian with
    position variance d^2/4 and momentum variance hbar^2/d^2.
    """
    theta = _check_window(params)
    cx = 1.0 if theta == 0.0 else math.sin(theta) / theta
    cpt = _one_minus_cos_over_sq(theta) * params.horizon / params.mass
    mean = cx * state.x0 + cpt * state.p0
    var = (cx * state.width) ** 2 / 4.0 + (cpt * params.hbar / state.width) ** 2
    return mean, math.sqrt(var)


def projection_probability(params: SystemParams, state: GaussianState,
                           delta_range: Interval) -> float:
    """||P_Delta psi||^2 from the closed-form distribution of xbar."""
    mean, std = xbar_distribution(params, state)
    lo = (delta_range.a - mean) / (math.sqrt(2.0) * std)
    hi = (delta_range.b - mean) / (math.sqrt(2.0) * std)
    # difference of erfc on the side away from the mean keeps tails accurate
    if lo > 0:
        return 0.5 * (math.erfc(lo) - math.erfc(hi))
    if hi < 0:
        return 0.5 * (math.erfc(-hi) - math.erfc(-lo))
    return 1.0 - 0.5 * (math.erfc(-lo) + math.erfc(hi))


def _kernel_sum_factor(kernel: str, params: SystemParams, delta_range: Interval, xbar):
    if kernel == "limit":
        return e_delta(xbar, delta_range)
    return e_delta_smeared(xbar, smearing_length(params, kernel), delta_range)


def spectral_refine(state: GridState, factor: int) -> np.ndarray:
    """Band-limited interpolation of the amplitudes onto a grid ``factor`` times finer."""
    if factor == 1:
        return np.array(state.values)
    n = state.grid.n
    spec = np.fft.fft(state.values)
    padded = np.zeros(n * factor, dtype=complex)
    half = n // 2
    padded[:half] = spec[:half]
    padded[-half:] = spec[-half:]
    # split the Nyquist bin symmetrically
    padded[half] = 0.5 * spec[half]
    padded[-half] = 0.5 * spec[half]
    return np.fft.ifft(padded) * factor


def auto_refine(kernel: str, params: SystemParams, delta_range: Interval, grid: Grid,
                support: tuple[float, float]) -> int:
    """Refinement factor resolving the integrand's local wavenumbers on the x' grid."""
    pref, A, B = _propagator_parts(params)
    span = grid.x_max - grid.x_min + (support[1] - support[0])
    k_prop = 2.0 * (abs(A) + abs(B)) * span
    k_e = 0.0
    if kernel != "limit":
        ell = smearing_length(params, kernel)
        c = xbar_coefficient(params)
        zmax = c * (max(abs(grid.x_min), abs(grid.x_max)) + max(abs(support[0]), abs(support[1])))
        k_e = c * (zmax + delta_range.reach) / ell ** 2
    k_state = math.pi / grid.dx
    need = 1.2 * (k_prop + k_e) + k_state
    factor = 1
    while math.pi / (grid.dx / factor) < need and factor < 64:
        factor *= 2
    return factor


@dataclass(frozen=True)
class KernelApplication:
    state: GridState
    probability: float
    refine: int
    kernel: str


def apply_kernel_to_state(kernel: str, params: SystemParams, delta_range: Interval,
                          state: GridState, refine: int | None = None,
                          support_tol: float = 1e-17, block: int = 256) -> KernelApplication:
    """Trapezoid quadrature of kernel(x'', x') psi(x') on the state grid.

    The input amplitudes are band-limit interpolated onto a grid ``refine``
    times finer before summing.  Kernels depend on x'' - x' and x'' + x'
    only, so the smeared top hat is evaluated once per distinct sum.
    """
    if kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {KERNELS}")
    grid = state.grid
    amp = np.abs(state.values)
    keep = np.nonzero(amp > support_tol * amp.max())[0]
    support = (grid.x[keep[0]], grid.x[keep[-1]])
    if refine is None:
        refine = auto_refine(kernel, params, delta_range, grid, support)
    fine = spectral_refine(state, refine)
    h = grid.dx / refine
    n, r = grid.n, refine
    j_lo = max(keep[0] * r - r, 0)
    j_hi = min(keep[-1] * r + r + 1, n * r)
    cols = np.arange(j_lo, j_hi)
    psi_cols = fine[cols]

    pref, A, B = _propagator_parts(params)
    # indices: diff = i r - j in [-(n r - 1), (n - 1) r]; sum = i r + j
    diff_idx = np.arange(-(n * r - 1), (n - 1) * r + 1)
    d_vals = diff_idx * h
    kd = pref * np.exp(1j * A * d_vals * d_vals)
    sum_idx = np.arange(0, (n - 1) * r + n * r)
    s_vals = 2.0 * grid.x_min + sum_idx * h
    xbar = xbar_coefficient(params) * s_vals
    ks = np.exp(1j * B * s_vals * s_vals) * _kernel_sum_factor(kernel, params, delta_range, xbar)

    out = np.empty(n, dtype=complex)
    offset = n * r - 1
    for i0 in range(0, n, block):
        rows = np.arange(i0, min(i0 + block, n))[:, None] * r
        mat = kd[rows - cols + offset] * ks[rows + cols]
        out[i0:i0 + block] = (mat @ psi_cols) * h
    result = GridState(grid, out)
    return KernelApplication(result, result.norm2, refine, kernel)


def free_evolution(params: SystemParams, state: GridState) -> GridState:
    """Exact evolution for time T by the propagator quadrature (delta -> infinity limit)."""
    big = Interval(0.0, 1e12)
    return apply_kernel_to_state("limit", params, big, state).state
