"""Weyl symbols of grid operators.

The symbol ``A(X, P) = int dxi exp(-i P xi/hbar) <X + xi/2|A|X - xi/2>`` is
evaluated with even offsets xi = 2 j dx so both arguments are grid points.
Before transforming, the operator is passed through a smooth spectral filter
(flat below a quarter of the Nyquist wavenumber, zero above half of it).
That removes the wavenumber pairs that would alias under even-offset
sampling and makes the kernel decay in xi, so the offset sum needs no
apodization.  Symbols are trustworthy for |P| below ``hbar * K/4``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import erfc

from .core import GaussianState, Grid, SystemParams
from .oracle import (EvolutionPlan, PotentialSpec, XbarOperator, build_xbar_operator,
                     grid_position, momentum_matrix)

DECAY_TOL = 1e-10


class SymbolDecayError(ValueError):
    """Operator kernel does not decay within half the grid along the offset."""


def band_filter(grid: Grid) -> np.ndarray:
    """Filter weights: 1 for |k| < K/4, 0 for |k| > K/2 (K the Nyquist wavenumber)."""
    kn = math.pi / grid.dx
    return 0.5 * erfc((np.abs(grid.k) - 0.375 * kn) / (kn / 48.0))


def filter_operator(matrix: np.ndarray, grid: Grid) -> np.ndarray:
    f = band_filter(grid)
    b = np.fft.fft(f[:, None] * np.fft.ifft(matrix, axis=0), axis=0)
    return np.fft.ifft(f[None, :] * np.fft.fft(b, axis=1), axis=1)


@dataclass(frozen=True)
class SymbolField:
    """Symbol values on the lattice X_j (grid points) by P_k (FFT order)."""
    grid: Grid
    hbar: float
    x: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    @property
    def p_valid(self) -> float:
        """Largest |P| where the filter is flat."""
        return 0.25 * self.hbar * math.pi / self.grid.dx

    def window(self, x_range: tuple[float, float], p_max: float):
        """Boolean (rows, cols) masks for X in x_range and |P| <= p_max."""
        if p_max > self.p_valid:
            raise ValueError(f"|P| window {p_max:g} exceeds the valid range {self.p_valid:g}")
        rows = (self.x >= x_range[0]) & (self.x <= x_range[1])
        cols = np.abs(self.p) <= p_max
        return rows, cols

    def restrict(self, x_range, p_max):
        rows, cols = self.window(x_range, p_max)
        return self.x[rows], self.p[cols], self.values[np.ix_(rows, cols)]


def _offset_table(matrix: np.ndarray, n: int):
    idx = np.arange(n)[:, None]
    js = np.arange(-n // 4, n // 4)[None, :]
    return matrix[(idx + js) % n, (idx - js) % n], js.ravel()


def weyl_symbol(matrix: np.ndarray, grid: Grid, hbar: float = 1.0,
                decay_tol: float = DECAY_TOL, x_range=None) -> SymbolField:
    """Weyl symbol of a grid operator (matrix in the position basis).

    With ``x_range`` the offset decay is checked only on rows whose midpoint
    lies in that range; symbol values outside it are then not trustworthy.
    """
    n = grid.n
    matrix = np.asarray(matrix)
    if matrix.shape != (n, n):
        raise ValueError("operator matrix does not match the grid")
    b = filter_operator(matrix, grid)
    table, js = _offset_table(b, n)
    scale = max(float(np.max(np.abs(table))), 1e-300)
    outer = np.abs(js) >= n // 4 - max(1, n // 32)
    rows = slice(None)
    if x_range is not None:
        rows = (grid.x >= x_range[0]) & (grid.x <= x_range[1])
    tail = float(np.max(np.abs(table[rows][:, outer])))
    if tail > decay_tol * scale:
        raise SymbolDecayError(
            f"kernel at offsets near half the grid is {tail / scale:.3g} of its peak "
            f"(> {decay_tol:g}); widen the grid")
    # xi = 2 j dx, d xi = 2 dx and the kernel is matrix / dx
    values = 2.0 * np.fft.fft(np.fft.ifftshift(table, axes=1), axis=1)
    p = hbar * 2.0 * np.pi * np.fft.fftfreq(len(js), 2.0 * grid.dx)
    return SymbolField(grid, hbar, grid.x.copy(), p, values)


def inverse_weyl(sym: SymbolField) -> np.ndarray:
    """Matrix elements from the symbol, <x|A|y> = (1/2 pi hbar) int dP exp(iP(x-y)/hbar) A((x+y)/2, P).

    Pairs with an odd index sum have their midpoint between grid points; the
    symbol is interpolated there spectrally along X.  The result is the
    band-filtered operator.
    """
    grid = sym.grid
    n = grid.n
    m = len(sym.p)
    a = np.arange(n)[:, None]
    b = np.arange(n)[None, :]
    d = a - b
    wrapped = np.abs(d) > n // 2
    d = np.where(d > n // 2, d - n, np.where(d < -(n // 2), d + n, d))
    # shifting one index by n moves the midpoint by half the grid
    total = a + b + np.where(wrapped, n, 0)
    out = np.empty((n, n), complex)
    even = (total % 2) == 0
    # even sums: midpoint on the grid, offset 2j with |j| <= n/4
    table = np.fft.fftshift(np.fft.ifft(sym.values, axis=1), axes=1) / 2.0
    i_even = (total // 2) % n
    j_even = d // 2
    # j = n/4 is the antipode of j = -n/4 about the opposite midpoint
    edge = j_even >= n // 4
    j_even = np.where(edge, j_even - n // 2, j_even)
    i_even = np.where(edge, (i_even + n // 2) % n, i_even)
    out[even] = table[i_even[even], (j_even + n // 4)[even]]
    # odd sums: midpoint at x_i + dx/2, symbol interpolated spectrally in X
    half = np.fft.ifft(np.exp(0.5j * grid.k * grid.dx)[:, None] * np.fft.fft(sym.values, axis=0),
                       axis=0)
    offsets = np.arange(-(n // 2) + 1, n // 2, 2)
    phase = np.exp(1j * np.outer(sym.p / sym.hbar, offsets * grid.dx))
    odd_table = half @ phase / (2.0 * m)
    odd = ~even
    i_odd = ((total - 1) // 2) % n
    col = (d - offsets[0]) // 2
    out[odd] = odd_table[i_odd[odd], col[odd]]
    return out


@dataclass(frozen=True)
class DeviationReport:
    max_abs: float
    mean: complex
    x_range: tuple
    p_max: float
    hbar: float


def _report(dev: np.ndarray, x_range, p_max, hbar) -> DeviationReport:
    return DeviationReport(float(np.max(np.abs(dev))), complex(np.mean(dev)),
                           tuple(x_range), float(p_max), hbar)


def wigner_window(state: GaussianState, hbar: float = 1.0, rel: float = 1e-8):
    """(x_range, p_max) where the Gaussian's Wigner function exceeds ``rel`` of its peak.

    The window is centred on x0 in X; in P it is |P - p0| bounded, returned
    as the bound on |P| for p0 = 0 states.
    """
    r = math.log(1.0 / rel)
    dx = state.width * math.sqrt(r / 2.0)
    dp = hbar / state.width * math.sqrt(2.0 * r)
    return (state.x0 - dx, state.x0 + dx), abs(state.p0) + dp


def symbol_product_check(a: np.ndarray, b: np.ndarray, grid: Grid, hbar: float,
                         x_range, p_max) -> DeviationReport:
    """symbol(AB) - symbol(A) symbol(B) over the window."""
    sa = weyl_symbol(a, grid, hbar)
    sb = weyl_symbol(b, grid, hbar)
    sab = weyl_symbol(a @ b, grid, hbar)
    _, _, va = sa.restrict(x_range, p_max)
    _, _, vb = sb.restrict(x_range, p_max)
    _, _, vab = sab.restrict(x_range, p_max)
    return _report(vab - va * vb, x_range, p_max, hbar)


def position_matrix(grid: Grid) -> np.ndarray:
    return np.diag(grid_position(grid)).astype(complex)


def classical_xbar(params: SystemParams, potential: PotentialSpec, x0, p0) -> np.ndarray:
    """Time average of x(t) over [0, T] along the classical path from (x0, p0)."""
    x0, p0 = np.broadcast_arrays(np.asarray(x0, float), np.asarray(p0, float))
    shape = x0.shape
    x0 = x0.ravel()
    p0 = p0.ravel()
    m, T = params.mass, params.horizon
    if potential.kind == "free":
        return (x0 + 0.5 * p0 * T / m).reshape(shape)
    if potential.kind == "harmonic":
        th = potential.omega * T
        cx = math.sin(th) / th
        cp = 2.0 * math.sin(0.5 * th) ** 2 / (th * th)
        return (cx * x0 + cp * p0 * T / m).reshape(shape)
    k = len(x0)

    def rhs(t, u):
        x, p = u[:k], u[k:2 * k]
        return np.concatenate([p / m, potential.force(x, m), x])

    sol = solve_ivp(rhs, (0.0, T), np.concatenate([x0, p0, np.zeros(k)]),
                    method="DOP853", rtol=1e-12, atol=1e-13)
    if not sol.success:
        raise RuntimeError(f"classical integration failed: {sol.message}")
    return (sol.y[2 * k:, -1] / T).reshape(shape)


def xbar_symbol_check(params: SystemParams, potential: PotentialSpec, plan: EvolutionPlan,
                      grid: Grid | None = None, x_range=None, p_max=None,
                      xbar_op: XbarOperator | None = None,
                      decay_tol: float = DECAY_TOL) -> DeviationReport:
    """Symbol of the grid time-average operator against the classical time average.

    The default window is the 1e-8 Wigner support of a unit-width Gaussian at
    the grid centre.
    """
    if xbar_op is None:
        xbar_op = build_xbar_operator(params, potential, plan, grid=grid, time_average="exact")
    grid = xbar_op.grid
    if x_range is None or p_max is None:
        c = 0.5 * (grid.x_min + grid.x_max)
        wx, wp = wigner_window(GaussianState(1.0, c, 0.0), params.hbar)
        x_range = x_range or wx
        p_max = p_max or wp
    sym = weyl_symbol(xbar_op.matrix, grid, params.hbar, decay_tol, x_range=x_range)
    xs, ps, vals = sym.restrict(x_range, p_max)
    ref = classical_xbar(params, potential, xs[:, None], ps[None, :])
    return _report(vals - ref, x_range, p_max, params.hbar)


def momentum_operator(grid: Grid, hbar: float = 1.0) -> np.ndarray:
    return momentum_matrix(grid, hbar)
