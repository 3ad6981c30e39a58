"""Decoherence-functional matrices over partitions of the time-averaged position.

``D[a, b] = <C_a psi | C_b psi>`` over the cells of a partition plus its two
unbounded tails.  The class representation uses the closed-form kernels; the
projection representation uses the grid spectral projectors of xbar, which
are exactly orthogonal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import erfcinv, wofz

from .analytic import (apply_kernel_to_state, class_function, projection_probability,
                       scale_constants, smearing_length, xbar_distribution)
from .core import GaussianState, Grid, GridState, Interval, Partition, SystemParams
from .oracle import (EvolutionPlan, PotentialSpec, QuadratureError, XbarOperator,
                     build_xbar_operator, class_operator_apply, potential_for,
                     projection_apply)
from .specfun import e_delta_smeared, faddeeva_upper

REPRESENTATIONS = ("class", "projection")
CLASS_METHODS = ("spectral", "grid")


class CoverageError(ValueError):
    """The partition does not cover the packet's time-average distribution."""


@dataclass(frozen=True)
class DecoherenceReport:
    representation: str
    hbar: float
    eps_max: float
    probabilities: np.ndarray = field(repr=False)
    defect: float = 0.0
    worst_pair: tuple = ()


@dataclass(frozen=True)
class DecoherenceMatrix:
    partition: Partition
    entries: np.ndarray = field(repr=False)
    representation: str = "class"
    hbar: float = 1.0

    def __post_init__(self):
        d = self.entries
        scale = max(1.0, float(np.max(np.abs(d))))
        herm = float(np.max(np.abs(d - d.conj().T)))
        if herm > 1e-10 * scale:
            raise ValueError(f"decoherence matrix not Hermitian (defect {herm:.3g})")
        if np.min(d.diagonal().real) < -1e-12:
            raise ValueError("negative diagonal entry in decoherence matrix")

    @property
    def probabilities(self) -> np.ndarray:
        return self.entries.diagonal().real.copy()

    def report(self, floor: float = 0.0) -> DecoherenceReport:
        """eps_max over pairs whose diagonals both exceed ``floor``."""
        p = self.probabilities
        eps, worst = 0.0, ()
        for i in range(len(p)):
            for j in range(i + 1, len(p)):
                if p[i] <= floor or p[j] <= floor:
                    continue
                r = abs(self.entries[i, j]) / math.sqrt(p[i] * p[j])
                if r > eps:
                    eps, worst = r, (i, j)
        return DecoherenceReport(self.representation, self.hbar, eps, p,
                                 abs(float(np.sum(p)) - 1.0), worst)


def tail_probability(params: SystemParams, state: GaussianState, partition: Partition) -> float:
    lo, *_, hi = partition.intervals()
    return projection_probability(params, state, lo) + projection_probability(params, state, hi)


def required_extent(params: SystemParams, state: GaussianState, tol: float = 1e-8):
    """Smallest symmetric range about the mean whose complement has probability tol."""
    mean, std = xbar_distribution(params, state)
    half = math.sqrt(2.0) * std * float(erfcinv(tol))
    return mean - half, mean + half


def _check_coverage(params, state, partition, tol):
    p_tail = tail_probability(params, state, partition)
    if p_tail >= tol:
        lo, hi = required_extent(params, state, tol)
        raise CoverageError(
            f"tail probability {p_tail:.3g} >= {tol:g}; partition must extend over at "
            f"least [{lo:.6g}, {hi:.6g}]")
    return p_tail


def decoherence_matrix(rep: str, params: SystemParams, partition: Partition,
                       state: GaussianState, grid: Grid,
                       potential: PotentialSpec | None = None,
                       plan: EvolutionPlan | None = None,
                       xbar_op: XbarOperator | None = None,
                       refine: int | None = None,
                       tail_tol: float = 1e-8,
                       method: str = "spectral") -> DecoherenceMatrix:
    """Decoherence matrix with rows and columns (lower tail, cells, upper tail).

    Class representation, ``method="spectral"``: for linear dynamics
    C_Delta = U f_Delta(xbar), so D is a one-dimensional integral of
    conj(f_a) f_b against the Gaussian distribution of xbar; no spatial box
    is involved.  ``method="grid"`` applies the closed-form kernels to the
    sampled state and takes grid inner products, which truncates the slowly
    decaying tails of C psi at the box edge.  ``grid`` may be None for the
    spectral method.  Non-quadratic potentials have no closed-form kernel;
    their class amplitudes always come from ``class_operator_apply``.
    """
    if rep not in REPRESENTATIONS:
        raise ValueError(f"representation must be one of {REPRESENTATIONS}")
    if method not in CLASS_METHODS:
        raise ValueError(f"method must be one of {CLASS_METHODS}")
    potential = potential or potential_for(params)
    if potential.is_quadratic:
        _check_coverage(params, state, partition, tail_tol)
    ranges = partition.intervals()
    if rep == "class" and method == "spectral" and potential.is_quadratic:
        return DecoherenceMatrix(partition, class_matrix_spectral(params, ranges, state),
                                 rep, params.hbar)
    psi = GridState(grid, state.amplitude(grid.x, params.hbar))
    if rep == "class" and potential.is_quadratic:
        amps = [apply_kernel_to_state("C", params, iv, psi, refine=refine).state.values
                for iv in ranges]
    elif rep == "class":
        plan = plan or EvolutionPlan()
        amps = [class_operator_apply(params, potential, iv, psi, plan).state.values
                for iv in ranges]
    else:
        if xbar_op is None:
            xbar_op = build_xbar_operator(params, potential, plan or EvolutionPlan(), grid=grid)
        amps = [projection_apply(xbar_op, iv, params, potential, psi).values for iv in ranges]
        if not potential.is_quadratic:
            p_tail = sum(float(np.sum(np.abs(a) ** 2) * grid.dx) for a in (amps[0], amps[-1]))
            if p_tail >= tail_tol:
                raise CoverageError(f"tail probability {p_tail:.3g} >= {tail_tol:g}; "
                                    "widen the partition")
    a = np.array(amps)
    d = (a.conj() @ a.T) * grid.dx
    d = 0.5 * (d + d.conj().T)
    return DecoherenceMatrix(partition, d, rep, params.hbar)


def class_matrix_spectral(params: SystemParams, ranges, state: GaussianState,
                          tol: float = 1e-13, reach: float = 9.0) -> np.ndarray:
    """D[a, b] = int rho(u) conj(f_a(u)) f_b(u) du with rho the xbar distribution.

    Composite Gauss-Legendre over mean +- ``reach`` standard deviations, panels
    halved until the matrix changes by less than ``tol``.
    """
    mean, std = xbar_distribution(params, state)
    sc = scale_constants(params)
    ell2 = abs(sc.lambda_c ** 2 - sc.lambda_p ** 2)
    lo, hi = mean - reach * std, mean + reach * std
    breaks = sorted({lo, hi} | {e for iv in ranges for e in (iv.a, iv.b)
                                if math.isfinite(e) and lo < e < hi})
    # f_a oscillates like exp(i (u - e)^2 / ell2): two local wavelengths at the
    # largest edge distance in the window
    finite = [e for iv in ranges for e in (iv.a, iv.b) if math.isfinite(e)]
    s_max = max(max(abs(hi - e), abs(lo - e)) for e in finite) if finite else 0.0
    width = std if ell2 == 0 or s_max == 0 else min(std, 2.0 * math.pi * ell2 / s_max)
    t, w = np.polynomial.legendre.leggauss(20)
    prev = None
    for _ in range(8):
        edges = np.concatenate([np.linspace(a, b, max(1, int(math.ceil((b - a) / width))) + 1)[:-1]
                                for a, b in zip(breaks[:-1], breaks[1:])] + [[breaks[-1]]])
        a, b = edges[:-1, None], edges[1:, None]
        u = (0.5 * (b - a) * t + 0.5 * (b + a)).ravel()
        wu = (0.5 * (b - a) * w).ravel()
        rho = np.exp(-0.5 * ((u - mean) / std) ** 2) / (math.sqrt(2.0 * math.pi) * std)
        f = np.array([class_function(params, iv, u) for iv in ranges])
        d = (f.conj() * (rho * wu)) @ f.T
        if prev is not None and np.max(np.abs(d - prev)) <= tol:
            return 0.5 * (d + d.conj().T)
        prev = d
        width *= 0.5
    raise QuadratureError(f"spectral decoherence matrix not converged at hbar={params.hbar:g}")


def projection_norms(xbar_op: XbarOperator, ranges, state: GridState) -> np.ndarray:
    """||P_Delta psi||^2 from the eigen-coefficients of psi, without evolving."""
    coef = xbar_op.eigenvectors.conj().T @ state.values
    weights = np.abs(coef) ** 2 * state.grid.dx
    return np.array([float(np.sum(weights[xbar_op.select(iv)])) for iv in ranges])


def projection_probabilities(params: SystemParams, partition: Partition,
                             state: GaussianState) -> np.ndarray:
    """Closed-form ||P_Delta psi||^2 for each range (linear dynamics only)."""
    return np.array([projection_probability(params, state, iv) for iv in partition.intervals()])


# free-particle kernel <x| C_D^dagger C_D' |x'>

def _edge_terms(iv: Interval, side: int):
    """E on one side of all finite edges as C0 + sum_e c_e P_e.

    P_e(z) = exp(i (z - e)^2 / ell^2) w(|z - e| e^{i pi/4} / ell).
    """
    a, b = iv.a, iv.b
    if side > 0:
        c0 = 1.0 if math.isinf(b) else 0.0
        terms = [(-0.5, a)] if math.isfinite(a) else []
        terms += [(0.5, b)] if math.isfinite(b) else []
    else:
        c0 = 1.0 if math.isinf(a) else 0.0
        terms = [(0.5, a)] if math.isfinite(a) else []
        terms += [(-0.5, b)] if math.isfinite(b) else []
    return c0, terms


def _w_ray(s, ell):
    u = np.abs(s) / (math.sqrt(2.0) * ell)
    if np.ndim(u) == 0:
        return complex(wofz(complex(u, u)))
    return faddeeva_upper(u, u)


def _panel_quad(f, breaks, width, tol, nodes=20, max_level=8):
    """Composite Gauss-Legendre over [breaks[0], breaks[-1]], halving panels
    until two levels agree to ``tol``; returns (value, change)."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    prev = None
    for _ in range(max_level):
        edges = []
        for a, b in zip(breaks[:-1], breaks[1:]):
            k = max(1, int(math.ceil((b - a) / width)))
            edges.append(np.linspace(a, b, k + 1)[:-1])
        edges = np.concatenate(edges + [np.array([breaks[-1]])])
        lo, hi = edges[:-1, None], edges[1:, None]
        y = 0.5 * (hi - lo) * t[None, :] + 0.5 * (hi + lo)
        val = complex(np.sum(f(y.ravel()).reshape(y.shape) * (0.5 * (hi - lo)) * w[None, :]))
        if prev is not None and abs(val - prev) <= tol:
            return val, abs(val - prev)
        prev = val
        width *= 0.5
    return prev, math.inf


@dataclass(frozen=True)
class KernelValue:
    value: complex
    error: float
    window: tuple


def freepart_decoherence_kernel(params: SystemParams, delta1: Interval, delta2: Interval,
                                x: float, x2: float, tol: float = 1e-9,
                                reach: float = 30.0) -> KernelValue:
    """<x| C_1^dagger C_2 |x2> for the free particle by adaptive quadrature over y.

    The integrand is conj(E_1((y+x)/2)) E_2((y+x2)/2) exp(i m (x-x2) y / hbar T).
    Inside a window reaching ``reach`` smearing lengths past every edge it is
    integrated adaptively.  Beyond it each E is expanded in edge terms; terms
    with a linear phase are integrated with Fourier weights and chirped terms
    by one integration by parts, whose next-order size is the error bound.
    """
    if not params.is_free:
        raise ValueError("the explicit kernel applies to the free particle only")
    m, hb, T = params.mass, params.hbar, params.horizon
    ell = smearing_length(params, "C")
    c = m * (x - x2) / (hb * T)
    pref = m / (2.0 * math.pi * hb * T) * np.exp(1j * m * (x2 * x2 - x * x) / (2.0 * hb * T))

    def integrand(y):
        z1 = 0.5 * (y + x)
        z2 = 0.5 * (y + x2)
        return (np.conj(e_delta_smeared(z1, ell, delta1)) * e_delta_smeared(z2, ell, delta2)
                * np.exp(1j * c * y))

    finite = [e for iv in (delta1, delta2) for e in (iv.a, iv.b) if math.isfinite(e)]
    if not finite:
        raise QuadratureError("both ranges unbounded: kernel is a delta function")
    s_r = max(reach * ell, 4.0 * abs(c) * ell * ell)
    y_lo = min(2.0 * (min(finite) - s_r) - x, 2.0 * (min(finite) - s_r) - x2)
    y_hi = max(2.0 * (max(finite) + s_r) - x, 2.0 * (max(finite) + s_r) - x2)
    breaks = sorted({2.0 * e - xx for e in finite for xx in (x, x2)})
    # panels of about one local wavelength at the window edge, refined until stable
    width = 2.0 * math.pi * ell * ell / (s_r + abs(c) * ell * ell + 1e-300)
    width = min(width, 4.0 * ell)
    total, bound = _panel_quad(integrand, [y_lo] + [b for b in breaks if y_lo < b < y_hi] + [y_hi],
                               width, 0.1 * tol * m / (hb * T) * ell)
    for side, y0 in ((1, y_hi), (-1, y_lo)):
        tv, tb = _tail(delta1, delta2, ell, c, x, x2, side, y0)
        total += complex(tv)
        bound += float(np.real(tb))
    scale = max(abs(total), m / (hb * T) * ell)
    if bound > tol * scale or not np.isfinite(total):
        raise QuadratureError(
            f"kernel quadrature not converged: error {bound:.3g} at hbar={hb:g}, "
            f"|x - x'|={abs(x - x2):.6g}")
    return KernelValue(complex(pref * total), float(abs(pref) * bound), (y_lo, y_hi))


def _tail(d1, d2, ell, c, x, x2, side, y0):
    """Integral of the edge-expanded integrand from y0 out to side * infinity."""
    c01, t1 = _edge_terms(d1, side)
    c02, t2 = _edge_terms(d2, side)
    total, bound = 0.0j, 0.0

    def z1(y):
        return 0.5 * (y + x)

    def z2(y):
        return 0.5 * (y + x2)

    # oriented integrals: right tail int_y0^inf, left tail int_{-inf}^y0
    if c01 and c02:
        if c == 0.0:
            raise QuadratureError("same unbounded tail at x = x': kernel has a delta part")
        total += -side * np.exp(1j * c * y0) / (1j * c)
    h = 1e-3 * ell
    # constant times chirp: two integrations by parts,
    # int A e^{i phi} = -side (F1 - F2) e^{i phi} with F1 = A / i phi', F2 = F1' / i phi'
    for (const, terms, conj) in ((c01, t2, False), (c02, t1, True)):
        if not const:
            continue
        for coef, e in terms:
            zf = z1 if conj else z2
            sgn = -1.0 if conj else 1.0

            def f1(y, coef=coef, e=e, zf=zf, sgn=sgn, conj=conj):
                a = coef * _w_ray(zf(y) - e, ell)
                a = np.conj(a) if conj else a
                return a / (1j * (c + sgn * (zf(y) - e) / ell ** 2))

            def f2(y, f1=f1, zf=zf, e=e, sgn=sgn):
                d = (f1(y + h) - f1(y - h)) / (2 * h)
                return d / (1j * (c + sgn * (zf(y) - e) / ell ** 2))

            s = zf(y0) - e
            phase = c * y0 + sgn * s * s / ell ** 2
            dphase = c + sgn * s / ell ** 2
            total += -side * (f1(y0) - f2(y0)) * np.exp(1j * phase)
            bound += abs((f2(y0 + h) - f2(y0 - h)) / (2 * h) / dphase)
    # chirp times chirp: the quadratic phases cancel, leaving a linear phase
    for c1, e1 in t1:
        for c2, e2 in t2:
            kappa = c + ((x2 - x) / 2.0 - (e2 - e1)) / ell ** 2
            s1 = z1(y0) - e1
            s2 = z2(y0) - e2
            phi0 = c * y0 + (s2 * s2 - s1 * s1) / ell ** 2

            def amp(t, c1=c1, c2=c2, e1=e1, e2=e2):
                y = y0 + side * t
                return np.conj(c1 * _w_ray(z1(y) - e1, ell)) * c2 * _w_ray(z2(y) - e2, ell)

            if abs(kappa) < 1e-12:
                re, er1 = quad(lambda t: amp(t).real, 0.0, np.inf, limit=400, epsabs=1e-14, epsrel=1e-12)
                im, er2 = quad(lambda t: amp(t).imag, 0.0, np.inf, limit=400, epsabs=1e-14, epsrel=1e-12)
                part = re + 1j * im
                bound += er1 + er2
            else:
                # phase along the tail: phi0 + side * kappa * t
                w = abs(kappa)
                sg = math.copysign(1.0, side * kappa)
                parts = []
                for f in (lambda t: amp(t).real, lambda t: amp(t).imag):
                    cr, e_c = quad(f, 0.0, np.inf, weight="cos", wvar=w, limlst=200, epsabs=1e-14)
                    sr, e_s = quad(f, 0.0, np.inf, weight="sin", wvar=w, limlst=200, epsabs=1e-14)
                    parts.append(cr + 1j * sg * sr)
                    bound += e_c + e_s
                part = parts[0] + 1j * parts[1]
            total += np.exp(1j * phi0) * part
    return total, bound


@dataclass(frozen=True)
class SweepResult:
    reports: tuple
    exponent: float


def decay_exponent(hbars, eps) -> float:
    """Slope of log eps_max against log hbar."""
    hb = np.log(np.asarray(hbars, float))
    ep = np.log(np.maximum(np.asarray(eps, float), 1e-300))
    return float(np.polyfit(hb, ep, 1)[0])


def hbar_sweep(rep: str, params: SystemParams, partition: Partition, state: GaussianState,
               hbars, grid_for, floor: float = 0.0, **kwargs) -> SweepResult:
    """DecoherenceReport per hbar; ``grid_for(hbar)`` supplies the grid."""
    hbars = [float(h) for h in hbars]
    if any(h <= 0 for h in hbars) or any(b >= a for a, b in zip(hbars, hbars[1:])):
        raise ValueError("hbar list must be positive and strictly decreasing")
    reports = []
    for hb in hbars:
        p = params.with_hbar(hb)
        dm = decoherence_matrix(rep, p, partition, state, grid_for(hb), **kwargs)
        reports.append(dm.report(floor))
    exponent = decay_exponent(hbars, [r.eps_max for r in reports])
    return SweepResult(tuple(reports), exponent)
