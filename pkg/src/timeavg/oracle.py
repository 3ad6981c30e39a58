"""Grid realizations of the class operator and the Heisenberg projection for a
general potential.

The class operator is assembled from its Fourier representation: every
sample k of the source strength evolves the state under
``H_k = p**2/2m + V(x) - (hbar k/T) x`` and the outputs are summed with
weights ``sin(k delta/2)/(pi k) exp(-i k x_c)``.  Evolution runs in a frame
co-moving with the classical trajectory of ``H_k`` started at the origin, so
the large momentum ``hbar k`` never has to be resolved by the grid.

The projection is built by diagonalizing a grid matrix for the time-averaged
Heisenberg position, then projecting and evolving with the exact grid
propagator.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.special import erf

from .core import Grid, GridState, Interval, SystemParams

log = logging.getLogger(__name__)

POTENTIAL_KINDS = ("free", "harmonic", "quartic", "tabulated")
WRAP_TOL = 1e-12
EDGE_TOL = 1e-12


class WrapAroundError(RuntimeError):
    """Amplitude reached the periodic boundary during evolution."""


class QuadratureError(RuntimeError):
    """The k-quadrature did not converge to the requested tolerance."""


class HermiticityError(RuntimeError):
    pass


@dataclass(frozen=True)
class PotentialSpec:
    """V(x) as one of: free, harmonic(omega) 1/2 m w^2 x^2, quartic(g) g x^4,
    or samples on a grid (interpolated by a cubic spline off the grid)."""
    kind: str = "free"
    omega: float = 0.0
    g: float = 0.0
    samples: tuple | None = None
    sample_grid: Grid | None = None

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"potential kind must be one of {POTENTIAL_KINDS}")
        if self.kind == "harmonic" and not self.omega > 0:
            raise ValueError("harmonic potential needs omega > 0")
        if self.kind == "quartic" and not (math.isfinite(self.g) and self.g >= 0):
            raise ValueError("quartic coupling must be finite and non-negative")
        if self.kind == "tabulated":
            if self.samples is None or self.sample_grid is None:
                raise ValueError("tabulated potential needs samples and their grid")
            vals = np.asarray(self.samples, float)
            if vals.shape != (self.sample_grid.n,):
                raise ValueError("tabulated potential length does not match its grid")
            if not np.all(np.isfinite(vals)):
                raise ValueError("tabulated potential must be finite")

    @classmethod
    def free(cls):
        return cls("free")

    @classmethod
    def harmonic(cls, omega: float):
        return cls("harmonic", omega=float(omega))

    @classmethod
    def quartic(cls, g: float):
        return cls("quartic", g=float(g))

    @classmethod
    def tabulated(cls, grid: Grid, values):
        return cls("tabulated", samples=tuple(np.asarray(values, float)), sample_grid=grid)

    @property
    def is_quadratic(self) -> bool:
        """Free and harmonic potentials are homogeneous quadratics about x = 0."""
        return self.kind in ("free", "harmonic")

    def _spline(self):
        spl = getattr(self, "_spl", None)
        if spl is None:
            spl = CubicSpline(self.sample_grid.x, np.asarray(self.samples, float))
            object.__setattr__(self, "_spl", spl)
        return spl

    def value(self, x, mass: float = 1.0):
        x = np.asarray(x, float)
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            return 0.5 * mass * self.omega ** 2 * x * x
        if self.kind == "quartic":
            return self.g * x ** 4
        return self._spline()(x)

    def force(self, x, mass: float = 1.0):
        """-dV/dx."""
        x = np.asarray(x, float)
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            return -mass * self.omega ** 2 * x
        if self.kind == "quartic":
            return -4.0 * self.g * x ** 3
        return -self._spline()(x, 1)

    def check_on(self, grid: Grid, mass: float = 1.0):
        if not np.all(np.isfinite(self.value(grid.x, mass))):
            raise ValueError("potential is not finite on the grid")


def potential_for(params: SystemParams) -> PotentialSpec:
    """Free or harmonic potential matching ``params.omega``."""
    if params.is_free:
        return PotentialSpec.free()
    return PotentialSpec.harmonic(params.omega)


def _check_consistent(params: SystemParams, potential: PotentialSpec):
    if potential.kind == "harmonic" and potential.omega != params.omega:
        raise ValueError("harmonic potential frequency differs from params.omega")
    if potential.kind == "free" and not params.is_free:
        raise ValueError("free potential with nonzero params.omega")


@dataclass(frozen=True)
class EvolutionPlan:
    """Time slicing for split-step evolution over the horizon.

    ``order`` 2 is Strang splitting; 4 composes three Strang steps (Yoshida).
    ``grid`` is optional; when given it must match the state grid.
    """
    n_slices: int = 64
    order: int = 4
    grid: Grid | None = None

    def __post_init__(self):
        if int(self.n_slices) != self.n_slices or self.n_slices < 1:
            raise ValueError("n_slices must be a positive integer")
        if self.order not in (2, 4):
            raise ValueError("order must be 2 or 4")

    def dt(self, params: SystemParams) -> float:
        return params.horizon / self.n_slices

    def doubled(self) -> "EvolutionPlan":
        return EvolutionPlan(2 * self.n_slices, self.order, self.grid)


_YOSHIDA_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_YOSHIDA_W0 = -(2.0 ** (1.0 / 3.0)) * _YOSHIDA_W1


def _substeps(plan: EvolutionPlan) -> list[float]:
    if plan.order == 2:
        return [1.0]
    return [_YOSHIDA_W1, _YOSHIDA_W0, _YOSHIDA_W1]


@dataclass(frozen=True)
class ClassicalPath:
    """Endpoint data of the classical trajectory of H_k started at rest at x = 0."""
    x_end: float
    p_end: float
    action: float
    times: np.ndarray = field(repr=False)
    positions: np.ndarray = field(repr=False)


def _classical_path(params: SystemParams, potential: PotentialSpec, force_k: float,
                    times: np.ndarray) -> ClassicalPath:
    m = params.mass

    def rhs(t, u):
        x, p, _ = u
        f = float(potential.force(x, m)) + force_k
        lag = p * p / (2.0 * m) - float(potential.value(x, m)) + force_k * x
        return [p / m, f, lag]

    t_end = params.horizon
    sol = solve_ivp(rhs, (0.0, t_end), [0.0, 0.0, 0.0], method="DOP853",
                    rtol=1e-13, atol=1e-14, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"classical path integration failed: {sol.message}")
    x_end, p_end, action = sol.y[:, -1]
    pos = sol.sol(times)[0] if len(times) else np.empty(0)
    return ClassicalPath(float(x_end), float(p_end), float(action), np.asarray(times), pos)


def _classical_paths(params: SystemParams, potential: PotentialSpec, force_k: np.ndarray,
                     times: np.ndarray):
    """Vectorised ``_classical_path`` for a batch of source strengths.

    Returns x_end, p_end, action (each of shape (B,)) and positions (B, len(times)).
    """
    m = params.mass
    force_k = np.asarray(force_k, float)
    nb = len(force_k)

    def rhs(t, u):
        x, p = u[:nb], u[nb:2 * nb]
        f = potential.force(x, m) + force_k
        lag = p * p / (2.0 * m) - potential.value(x, m) + force_k * x
        return np.concatenate([p / m, f, lag])

    sol = solve_ivp(rhs, (0.0, params.horizon), np.zeros(3 * nb), method="DOP853",
                    rtol=1e-13, atol=1e-14, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"classical path integration failed: {sol.message}")
    end = sol.y[:, -1]
    pos = sol.sol(times)[:nb] if len(times) else np.empty((nb, 0))
    return end[:nb], end[nb:2 * nb], end[2 * nb:], pos


def _evolve_batch(params: SystemParams, potential: PotentialSpec, ks: np.ndarray,
                  state: GridState, plan: EvolutionPlan) -> np.ndarray:
    """Rows U_k psi for a batch of k under a non-quadratic potential."""
    grid = state.grid
    m, hb = params.mass, params.hbar
    times = _substep_times(params, plan)
    x_end, p_end, action, kick_x = _classical_paths(params, potential,
                                                    hb * np.asarray(ks) / params.horizon, times)
    dt = plan.dt(params)
    y = grid.x[None, :]
    kin = hb * grid.k ** 2 / (2.0 * m)
    fractions = _substeps(plan)
    half_kin = {w: np.exp(-0.5j * kin * w * dt) for w in set(fractions)}
    psi = np.repeat(np.asarray(state.values, complex)[None, :], len(ks), axis=0)
    step = 0
    for _ in range(plan.n_slices):
        for w in fractions:
            psi = np.fft.ifft(half_kin[w] * np.fft.fft(psi, axis=1), axis=1)
            xc = kick_x[:, step:step + 1]
            wv = (potential.value(xc + y, m) - potential.value(xc, m)
                  + potential.force(xc, m) * y)
            psi *= np.exp(-1j * wv * w * dt / hb)
            psi = np.fft.ifft(half_kin[w] * np.fft.fft(psi, axis=1), axis=1)
            step += 1
    mass = _boundary_mass(psi, grid.dx)
    if mass > WRAP_TOL:
        raise WrapAroundError(f"boundary norm {mass:.3g} exceeds {WRAP_TOL:g}")
    rows = _shift_amplitudes(np.fft.fft(psi, axis=1), grid, x_end)
    phase = np.exp(1j * (p_end[:, None] * (grid.x[None, :] - x_end[:, None])
                         + action[:, None]) / hb)
    return phase * rows


def _boundary_mass(values: np.ndarray, dx: float, frac: float = 0.02) -> float:
    n = values.shape[-1]
    w = max(2, int(frac * n))
    edge = np.concatenate([values[..., :w], values[..., -w:]], axis=-1)
    return float(np.max(np.sum(np.abs(edge) ** 2, axis=-1)) * dx)


def _substep_times(params: SystemParams, plan: EvolutionPlan) -> np.ndarray:
    """Midpoint times of every potential kick, in execution order."""
    dt = plan.dt(params)
    fractions = _substeps(plan)
    out = []
    t = 0.0
    for _ in range(plan.n_slices):
        for w in fractions:
            out.append(t + 0.5 * w * dt)
            t += w * dt
    return np.array(out)


def _comoving_evolve(params: SystemParams, potential: PotentialSpec, phi: np.ndarray,
                     grid: Grid, plan: EvolutionPlan, path: ClassicalPath | None):
    """Split-step evolution of the co-moving amplitude under p^2/2m + W(y, t),
    W = V(x_c + y) - V(x_c) - V'(x_c) y.  ``path`` None means x_c = 0."""
    m, hb = params.mass, params.hbar
    dt = plan.dt(params)
    y = grid.x
    kin = hb * grid.k ** 2 / (2.0 * m)
    fractions = _substeps(plan)
    if potential.kind == "free":
        return np.fft.ifft(np.exp(-1j * kin * params.horizon) * np.fft.fft(phi))
    if potential.kind == "harmonic":
        # quadratic about any centre, so W does not depend on the path
        w_fixed = potential.value(y, m)
    else:
        w_fixed = None
        kick_x = path.positions if path is not None else np.zeros(len(fractions) * plan.n_slices)
    half_kin = {w: np.exp(-0.5j * kin * w * dt) for w in set(fractions)}
    kick_cache = {}
    psi = np.asarray(phi, complex)
    step = 0
    for _ in range(plan.n_slices):
        for w in fractions:
            psi = np.fft.ifft(half_kin[w] * np.fft.fft(psi))
            if w_fixed is not None:
                kick = kick_cache.get(w)
                if kick is None:
                    kick = kick_cache[w] = np.exp(-1j * w_fixed * w * dt / hb)
            else:
                xc = kick_x[step]
                wv = (potential.value(xc + y, m) - potential.value(xc, m)
                      + potential.force(xc, m) * y)
                kick = np.exp(-1j * wv * w * dt / hb)
            psi = kick * psi
            psi = np.fft.ifft(half_kin[w] * np.fft.fft(psi))
            step += 1
    return psi


def _shift_amplitudes(phi_hat: np.ndarray, grid: Grid, shifts: np.ndarray) -> np.ndarray:
    """Rows phi(x_j - s) for each shift s; band-limited sub-cell shift plus an
    integer index shift with zero fill."""
    dx = grid.dx
    n = grid.n
    cells = np.rint(shifts / dx).astype(np.int64)
    frac = shifts - cells * dx
    rows = np.fft.ifft(np.atleast_2d(phi_hat) * np.exp(-1j * np.outer(frac, grid.k)), axis=1)
    src = np.arange(n)[None, :] - cells[:, None]
    valid = (src >= 0) & (src < n)
    out = np.where(valid, np.take_along_axis(rows, np.clip(src, 0, n - 1), axis=1), 0.0)
    return out


def _check_plan_grid(plan: EvolutionPlan, state: GridState):
    if plan.grid is not None and plan.grid != state.grid:
        raise ValueError("evolution plan grid differs from the state grid")


def evolve_effective(params: SystemParams, potential: PotentialSpec, k: float,
                     state: GridState, plan: EvolutionPlan) -> GridState:
    """Evolve for the horizon T under H_k = p^2/2m + V(x) - (hbar k/T) x."""
    _check_consistent(params, potential)
    _check_plan_grid(plan, state)
    grid = state.grid
    potential.check_on(grid, params.mass)
    force_k = params.hbar * k / params.horizon
    times = _substep_times(params, plan) if not potential.is_quadratic else np.empty(0)
    path = _classical_path(params, potential, force_k, times)
    phi = _comoving_evolve(params, potential, state.values, grid, plan, path)
    mass = _boundary_mass(phi, grid.dx)
    if mass > WRAP_TOL:
        raise WrapAroundError(f"boundary norm {mass:.3g} exceeds {WRAP_TOL:g}")
    shifted = _shift_amplitudes(np.fft.fft(phi), grid, np.array([path.x_end]))[0]
    phase = np.exp(1j * (path.p_end * (grid.x - path.x_end) + path.action) / params.hbar)
    return GridState(grid, phase * shifted)


@dataclass(frozen=True)
class KQuadrature:
    """Gauss-Legendre panels on [-k_max, k_max].

    ``None`` entries are chosen from the state, the output window and the
    scale lambda; ``check`` re-evaluates with the node count doubled, keeps
    that result, and raises when the two differ by more than ``tol`` relative
    to the larger of the output and input L2 norms.
    """
    k_max: float | None = None
    panel_width: float | None = None
    nodes_per_panel: int = 16
    check: bool = True
    tol: float = 1e-8
    batch: int = 256

    def nodes(self, k_max: float, width: float):
        n_panels = max(2, int(math.ceil(2.0 * k_max / width)))
        n_panels += n_panels % 2
        edges = np.linspace(-k_max, k_max, n_panels + 1)
        t, w = np.polynomial.legendre.leggauss(self.nodes_per_panel)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        ks = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        ws = (half[:, None] * w[None, :]).ravel()
        return ks, ws


@dataclass(frozen=True)
class ClassApplication:
    state: GridState
    k_max: float
    n_nodes: int
    check_difference: float | None


def _displacement_per_k(params: SystemParams, potential: PotentialSpec) -> float:
    """dx_c(T)/dk for the quadratic case (free-particle value otherwise)."""
    hb, m, T = params.hbar, params.mass, params.horizon
    if potential.kind == "harmonic":
        th = potential.omega * T
        return hb * T / m * 2.0 * math.sin(0.5 * th) ** 2 / (th * th)
    return hb * T / (2.0 * m)


def _default_kquad(params, potential, delta_range, state, kquad):
    grid = state.grid
    amp = np.abs(state.values) ** 2
    w = amp / amp.sum()
    mean = float(np.sum(w * grid.x))
    spread = math.sqrt(float(np.sum(w * (grid.x - mean) ** 2)))
    reach = max(abs(grid.x_min), abs(grid.x_max)) + abs(mean) + 12.0 * spread
    per_k = _displacement_per_k(params, potential)
    k_max = kquad.k_max or max(40.0 / params.lam, reach / per_k)
    if kquad.panel_width is not None:
        width = kquad.panel_width
    else:
        # k-frequencies: source centre and half width, xbar of the window,
        # plus the curvature of the effective phase at k_max
        edge = (abs(delta_range.center) + 0.5 * delta_range.width
                if delta_range.bounded else delta_range.reach)
        freq = edge + reach + k_max * per_k
        width = min(4.0, 2.0 * kquad.nodes_per_panel / freq)
    return k_max, width


def _k_weights(delta_range: Interval, ks: np.ndarray, ws: np.ndarray):
    """Fourier weights of the indicator of ``delta_range`` and its constant part.

    A tail (-inf, b) is 1/2 + PV int dk i e^{ik(xbar - b)} / (2 pi k); the
    symmetric panels never place a node at k = 0, so the pairs +-k carry the
    principal value.
    """
    if delta_range.bounded:
        w = ws * (0.5 * delta_range.width) * np.sinc(ks * delta_range.width / (2 * np.pi))
        return w * np.exp(-1j * ks * delta_range.center) / np.pi, 0.0
    if math.isinf(delta_range.a):
        return ws * 1j / (2 * np.pi * ks) * np.exp(-1j * ks * delta_range.b), 0.5
    return ws * -1j / (2 * np.pi * ks) * np.exp(-1j * ks * delta_range.a), 0.5


def _k_sum(params, potential, delta_range, state, plan, ks, ws, batch):
    grid = state.grid
    hb, T = params.hbar, params.horizon
    weights, const = _k_weights(delta_range, ks, ws)
    out = np.zeros(grid.n, complex)
    if const:
        out += const * evolve_effective(params, potential, 0.0, state, plan).values
    if potential.is_quadratic:
        # every H_k shares one co-moving evolution; the path scales linearly with k
        phi = _comoving_evolve(params, potential, state.values, grid, plan, None)
        mass = _boundary_mass(phi, grid.dx)
        if mass > WRAP_TOL:
            raise WrapAroundError(f"boundary norm {mass:.3g} exceeds {WRAP_TOL:g}")
        unit = _classical_path(params, potential, hb / T, np.empty(0))
        phi_hat = np.fft.fft(phi)
        for i0 in range(0, len(ks), batch):
            kb = ks[i0:i0 + batch]
            xe, pe, act = unit.x_end * kb, unit.p_end * kb, unit.action * kb * kb
            rows = _shift_amplitudes(phi_hat, grid, xe)
            phase = np.exp(1j * (pe[:, None] * (grid.x[None, :] - xe[:, None])
                                 + act[:, None]) / hb)
            out += (weights[i0:i0 + batch] @ (phase * rows))
        return out
    for i0 in range(0, len(ks), batch):
        rows = _evolve_batch(params, potential, ks[i0:i0 + batch], state, plan)
        out += weights[i0:i0 + batch] @ rows
    return out


def class_operator_apply(params: SystemParams, potential: PotentialSpec, delta_range: Interval,
                         state: GridState, plan: EvolutionPlan,
                         kquad: KQuadrature | None = None) -> ClassApplication:
    """C_Delta psi on the state grid as a k-quadrature of effective evolutions."""
    _check_consistent(params, potential)
    _check_plan_grid(plan, state)
    potential.check_on(state.grid, params.mass)
    kquad = kquad or KQuadrature()
    k_max, width = _default_kquad(params, potential, delta_range, state, kquad)
    if k_max * params.lam < 40.0:
        raise ValueError(f"k_max * lambda = {k_max * params.lam:.3g} below 40")
    ks, ws = kquad.nodes(k_max, width)
    out = _k_sum(params, potential, delta_range, state, plan, ks, ws, kquad.batch)
    diff = None
    if kquad.check:
        # doubled nodes; the change is measured against the larger of the
        # output and input norms so that nearly empty ranges do not fail on round-off
        ks2, ws2 = kquad.nodes(k_max, 0.5 * width)
        fine = _k_sum(params, potential, delta_range, state, plan, ks2, ws2, kquad.batch)
        scale = max(np.linalg.norm(fine), np.linalg.norm(state.values))
        diff = float(np.linalg.norm(fine - out) / scale)
        out, ks = fine, ks2
        if diff > kquad.tol:
            raise QuadratureError(
                f"k-quadrature unconverged: relative change {diff:.3g} > {kquad.tol:g} "
                f"(k_max={k_max:.4g}, panel width={width:.4g}, nodes={len(ks)}, "
                f"hbar={params.hbar:g})")
    return ClassApplication(GridState(state.grid, out), k_max, len(ks), diff)


def grid_hamiltonian(params: SystemParams, potential: PotentialSpec, grid: Grid) -> np.ndarray:
    """Dense H = spectral kinetic + diag V on the periodic grid."""
    potential.check_on(grid, params.mass)
    n = grid.n
    kin = (params.hbar * grid.k) ** 2 / (2.0 * params.mass)
    h = np.fft.ifft(kin[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0)
    h = 0.5 * (h + h.conj().T)
    h[np.diag_indices(n)] += potential.value(grid.x, params.mass)
    return h


@dataclass(frozen=True)
class GridSpectrum:
    """Eigen-decomposition of the grid Hamiltonian."""
    energies: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    def evolve(self, values: np.ndarray, t: float, hbar: float) -> np.ndarray:
        coeff = self.vectors.conj().T @ values
        return self.vectors @ (np.exp(-1j * self.energies * t / hbar) * coeff)


def grid_spectrum(params: SystemParams, potential: PotentialSpec, grid: Grid) -> GridSpectrum:
    if potential.kind == "free":
        # plane waves diagonalize the spectral kinetic operator exactly
        n = grid.n
        vecs = np.fft.ifft(np.eye(n), axis=0) * math.sqrt(n)
        energies = (params.hbar * grid.k) ** 2 / (2.0 * params.mass)
        return GridSpectrum(energies, vecs)
    e, v = np.linalg.eigh(grid_hamiltonian(params, potential, grid))
    return GridSpectrum(e, v)


def time_average_weights(omega: np.ndarray, horizon: float, n_slices: int | None):
    """(1/N) sum_i exp(i w t_i) at midpoints t_i = (i + 1/2) T/N; N None gives
    the exact average (1/T) int_0^T exp(i w t) dt."""
    omega = np.asarray(omega, float)
    if n_slices is None:
        th = omega * horizon
        small = np.abs(th) < 1e-8
        safe = np.where(small, 1.0, th)
        val = (np.exp(1j * safe) - 1.0) / (1j * safe)
        return np.where(small, 1.0 + 0.5j * th, val)
    a = omega * horizon / n_slices
    j = np.rint(a / (2 * np.pi))
    aliased = np.abs(a - 2 * np.pi * j) < 1e-12
    den = np.where(aliased, 1.0, n_slices * np.sin(0.5 * a))
    val = np.exp(0.5j * n_slices * a) * np.sin(0.5 * n_slices * a) / den
    # every sample has the same phase (-1)^j when w dt is a multiple of 2 pi
    return np.where(aliased, np.where(j % 2 == 0, 1.0, -1.0), val)


@dataclass(frozen=True)
class XbarOperator:
    """Grid matrix of the time-averaged Heisenberg position with its eigenbasis."""
    grid: Grid
    params: SystemParams
    matrix: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    spectrum: GridSpectrum = field(repr=False)
    hermiticity_defect: float = 0.0

    def select(self, delta_range: Interval) -> np.ndarray:
        """Boolean mask of eigenvalues in [a, b); edge cases audited."""
        ev = self.eigenvalues
        near = (np.abs(ev - delta_range.a) < EDGE_TOL) | (np.abs(ev - delta_range.b) < EDGE_TOL)
        for i in np.nonzero(near)[0]:
            log.info("eigenvalue %.17g within %g of an edge of [%.17g, %.17g); assigned %s",
                     ev[i], EDGE_TOL, delta_range.a, delta_range.b,
                     "inside" if delta_range.contains(ev[i]) else "outside")
        return delta_range.contains(ev)

    def projector(self, delta_range: Interval) -> np.ndarray:
        v = self.eigenvectors[:, self.select(delta_range)]
        return v @ v.conj().T


def grid_position(grid: Grid, exact_fraction: float = 0.55) -> np.ndarray:
    """Smooth periodic position coordinate on the grid.

    Equal to x (to rounding) within ``exact_fraction`` of the half width
    around the grid centre; across the periodic seam it turns back smoothly
    instead of jumping by the box length, so its spectrum stays far below
    the grid's Nyquist wavenumber.
    """
    c = 0.5 * (grid.x_min + grid.x_max)
    h = 0.5 * (grid.x_max - grid.x_min)
    u = grid.x - c
    width = 0.04 * h
    start = exact_fraction * h + 6.2 * width
    blend = 0.5 * (1.0 + erf((start - np.abs(u)) / width))
    return c + u * blend + (h / np.pi) * np.sin(np.pi * u / h) * (1.0 - blend)


def build_xbar_operator(params: SystemParams, potential: PotentialSpec, plan: EvolutionPlan,
                        grid: Grid | None = None, time_average: str = "midpoint",
                        hermiticity_tol: float = 1e-10) -> XbarOperator:
    """(1/N) sum_i U^dag(t_i) X U(t_i) with midpoint samples, assembled in the
    Hamiltonian eigenbasis where each time sample is a phase.  ``time_average``
    'exact' replaces the midpoint sum by the continuous average."""
    _check_consistent(params, potential)
    grid = grid or plan.grid
    if grid is None:
        raise ValueError("build_xbar_operator needs a grid")
    if time_average not in ("midpoint", "exact"):
        raise ValueError("time_average must be 'midpoint' or 'exact'")
    spec = grid_spectrum(params, potential, grid)
    w = spec.vectors
    x_eig = (w.conj().T * grid_position(grid)[None, :]) @ w
    freq = (spec.energies[:, None] - spec.energies[None, :]) / params.hbar
    n_slices = plan.n_slices if time_average == "midpoint" else None
    avg = x_eig * time_average_weights(freq, params.horizon, n_slices)
    a = w @ avg @ w.conj().T
    defect = float(np.max(np.abs(a - a.conj().T)))
    if defect > hermiticity_tol:
        raise HermiticityError(f"time-average operator non-Hermitian by {defect:.3g}")
    a = 0.5 * (a + a.conj().T)
    vals, vecs = np.linalg.eigh(a)
    return XbarOperator(grid, params, a, vals, vecs, spec, defect)


def momentum_matrix(grid: Grid, hbar: float = 1.0) -> np.ndarray:
    """Spectral momentum hbar k as a dense grid matrix."""
    eye = np.eye(grid.n)
    return np.fft.ifft((hbar * grid.k)[:, None] * np.fft.fft(eye, axis=0), axis=0)


def linear_xbar_matrix(params: SystemParams, grid: Grid) -> np.ndarray:
    """Grid matrix of (sin wT/wT) X + ((1 - cos wT)/(wT)^2)(T/m) P with spectral P
    and the smooth position coordinate."""
    th = params.omega_t
    if th == 0.0:
        cx, cp = 1.0, 0.5
    else:
        cx, cp = math.sin(th) / th, 2.0 * math.sin(0.5 * th) ** 2 / th ** 2
    p = momentum_matrix(grid, params.hbar)
    return cx * np.diag(grid_position(grid)) + cp * params.horizon / params.mass * p


def projection_apply(xbar_op: XbarOperator, delta_range: Interval, params: SystemParams,
                     potential: PotentialSpec, state: GridState,
                     plan: EvolutionPlan | None = None) -> GridState:
    """exp(-iHT/hbar) P_Delta psi with P_Delta the spectral projector of xbar on [a, b)."""
    _check_consistent(params, potential)
    if state.grid != xbar_op.grid:
        raise ValueError("state grid differs from the operator grid")
    v = xbar_op.eigenvectors[:, xbar_op.select(delta_range)]
    projected = v @ (v.conj().T @ state.values)
    out = xbar_op.spectrum.evolve(projected, params.horizon, params.hbar)
    return GridState(state.grid, out)


def projection_defects(xbar_op: XbarOperator, cells) -> tuple[float, float]:
    """(max |P_a P_b| over disjoint pairs, max |sum_a P_a - I|) for a list of
    disjoint intervals whose union contains the whole spectrum."""
    projs = [xbar_op.projector(c) for c in cells]
    ortho = 0.0
    for i in range(len(projs)):
        for j in range(i + 1, len(projs)):
            ortho = max(ortho, float(np.max(np.abs(projs[i] @ projs[j]))))
    total = sum(projs)
    complete = float(np.max(np.abs(total - np.eye(total.shape[0]))))
    return ortho, complete


def check_plan(params: SystemParams, potential: PotentialSpec, state: GridState,
               plan: EvolutionPlan, k: float = 0.0, tol: float = 1e-8) -> float:
    """Relative change of an effective evolution when n_slices doubles; raises above tol."""
    a = evolve_effective(params, potential, k, state, plan)
    b = evolve_effective(params, potential, k, state, plan.doubled())
    change = b.l2_distance(a) / math.sqrt(b.norm2)
    if change > tol:
        raise ValueError(f"plan not converged: doubling n_slices changes result by {change:.3g}")
    return change
