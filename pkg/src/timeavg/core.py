"""Domain types shared across the package: system parameters, ranges,
partitions and states on a uniform grid.

Working units are hbar = m = 1 unless a caller passes other values; every
routine takes ``SystemParams`` so hbar can be swept for classical-limit
studies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# CGS constants used only at the unit-conversion boundary
HBAR_CGS = 1.054571817e-27  # erg s


class ExtentError(ValueError):
    """A grid does not cover the packet plus its drift and safety margin."""


@dataclass(frozen=True)
class SystemParams:
    mass: float = 1.0
    hbar: float = 1.0
    omega: float = 0.0
    horizon: float = 1.0

    def __post_init__(self):
        for name in ("mass", "hbar", "omega", "horizon"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.mass <= 0 or self.hbar <= 0 or self.horizon <= 0:
            raise ValueError("mass, hbar and horizon must be positive")
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if self.omega > 0:
            wt = self.omega * self.horizon
            if abs(math.sin(wt)) < 1e-12 * max(1.0, wt):
                raise ValueError(f"omega*T = {wt!r} is a caustic (multiple of pi)")

    @property
    def lam(self) -> float:
        """The length sqrt(hbar T / 2m)."""
        return math.sqrt(self.hbar * self.horizon / (2.0 * self.mass))

    @property
    def omega_t(self) -> float:
        return self.omega * self.horizon

    @property
    def is_free(self) -> bool:
        return self.omega == 0.0

    def with_hbar(self, hbar: float) -> "SystemParams":
        return SystemParams(self.mass, hbar, self.omega, self.horizon)


def lambda_cgs(mass_g: float, horizon_s: float) -> float:
    """sqrt(hbar T / 2m) in centimetres for a mass in grams and time in seconds."""
    return math.sqrt(HBAR_CGS * horizon_s / (2.0 * mass_g))


@dataclass(frozen=True)
class Interval:
    """Half-open range [a, b) given by centre and width.

    Unbounded tails come from ``from_endpoints`` with an infinite endpoint;
    their centre and width are then infinite.
    """
    center: float
    width: float

    def __post_init__(self):
        if math.isnan(self.center) or math.isnan(self.width):
            raise ValueError("interval bounds must not be NaN")
        if not math.isfinite(self.width) or not math.isfinite(self.center):
            if not getattr(self, "_unbounded", False):
                raise ValueError("interval bounds must be finite")
        if self.width <= 0:
            raise ValueError("interval width must be positive")

    @classmethod
    def from_endpoints(cls, a: float, b: float) -> "Interval":
        if not b > a or math.isnan(a) or math.isnan(b):
            raise ValueError("need a < b")
        if math.isinf(a) and math.isinf(b):
            raise ValueError("at most one endpoint may be infinite")
        if math.isinf(a) or math.isinf(b):
            iv = object.__new__(cls)
            object.__setattr__(iv, "_unbounded", True)
            object.__setattr__(iv, "center", a if math.isinf(a) else b)
            object.__setattr__(iv, "width", math.inf)
            iv.__post_init__()
        else:
            iv = cls(0.5 * (a + b), b - a)
        # keep the endpoints bit-exact for contiguous partitions
        object.__setattr__(iv, "_a", float(a))
        object.__setattr__(iv, "_b", float(b))
        return iv

    @property
    def a(self) -> float:
        return getattr(self, "_a", self.center - 0.5 * self.width)

    @property
    def b(self) -> float:
        return getattr(self, "_b", self.center + 0.5 * self.width)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.width)

    @property
    def reach(self) -> float:
        """Largest finite |endpoint|."""
        return max(abs(e) for e in (self.a, self.b) if math.isfinite(e))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.a) & (x < self.b)


@dataclass(frozen=True)
class Partition:
    """Contiguous equal cells covering [x_min, x_max) plus the two unbounded tails."""
    cells: tuple
    x_min: float
    x_max: float

    def __len__(self):
        return len(self.cells)

    @property
    def edges(self) -> np.ndarray:
        return np.array([c.a for c in self.cells] + [self.cells[-1].b])

    def indicators(self, x) -> np.ndarray:
        """Rows: lower tail, each cell, upper tail."""
        x = np.asarray(x, dtype=float)
        rows = [x < self.x_min]
        rows += [c.contains(x) for c in self.cells]
        rows.append(x >= self.x_max)
        return np.array(rows, dtype=float)

    def intervals(self) -> tuple:
        """Lower tail, each cell, upper tail: an exhaustive set of ranges."""
        return ((Interval.from_endpoints(-math.inf, self.x_min),) + tuple(self.cells)
                + (Interval.from_endpoints(self.x_max, math.inf),))

    def cell_index(self, x: float) -> int:
        """-1 for the lower tail, len(self) for the upper tail."""
        if x < self.x_min:
            return -1
        if x >= self.x_max:
            return len(self.cells)
        i = int(np.searchsorted(self.edges, x, side="right")) - 1
        return min(i, len(self.cells) - 1)


def make_partition(x_min: float, x_max: float, n_cells: int) -> Partition:
    if not (math.isfinite(x_min) and math.isfinite(x_max)):
        raise ValueError("partition bounds must be finite")
    if int(n_cells) != n_cells or n_cells < 1:
        raise ValueError("n_cells must be a positive integer")
    if not x_min < x_max:
        raise ValueError("need x_min < x_max")
    n_cells = int(n_cells)
    edges = [x_min + (x_max - x_min) * i / n_cells for i in range(n_cells + 1)]
    edges[0], edges[-1] = float(x_min), float(x_max)
    cells = tuple(Interval.from_endpoints(edges[i], edges[i + 1]) for i in range(n_cells))
    return Partition(cells, float(x_min), float(x_max))


@dataclass(frozen=True)
class GaussianState:
    width: float = 1.0
    x0: float = 0.0
    p0: float = 0.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("Gaussian width must be positive")

    def amplitude(self, x, hbar: float = 1.0):
        x = np.asarray(x, dtype=float)
        d = self.width
        return ((2.0 / (math.pi * d * d)) ** 0.25
                * np.exp(-((x - self.x0) / d) ** 2 + 1j * self.p0 * x / hbar))

    def t_spread(self, params: SystemParams) -> float:
        return self.width ** 2 * params.mass / (2.0 * params.hbar)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid x_j = x_min + j dx, j < n."""
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("need x_min < x_max")
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError("grid size must be a power of two")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, self.dx)

    @classmethod
    def centered(cls, half_width: float, n: int) -> "Grid":
        return cls(-half_width, half_width, n)


@dataclass(frozen=True)
class GridState:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.n,):
            raise ValueError("amplitude array does not match grid")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.dx)

    def mean_x(self) -> float:
        w = np.abs(self.values) ** 2
        return float(np.sum(w * self.grid.x) / np.sum(w))

    def inner(self, other: "GridState") -> complex:
        return complex(np.vdot(self.values, other.values) * self.grid.dx)

    def l2_distance(self, other: "GridState", mask=None) -> float:
        diff = np.abs(self.values - other.values) ** 2
        if mask is not None:
            diff = diff[mask]
        return float(np.sqrt(np.sum(diff) * self.grid.dx))

    def rel_l2(self, reference: "GridState") -> float:
        return self.l2_distance(reference) / math.sqrt(reference.norm2)


def required_span(state: GaussianState, params: SystemParams, margin: float = 8.0):
    """(lo, hi) a grid must cover: packet, classical drift, spreading, plus margin widths."""
    end = state.x0 + state.p0 * params.horizon / params.mass
    spread = params.hbar * params.horizon / (params.mass * state.width)
    pad = margin * state.width + spread
    return min(state.x0, end) - pad, max(state.x0, end) + pad


def check_extent(grid: Grid, state: GaussianState, params: SystemParams, margin: float = 8.0):
    lo, hi = required_span(state, params, margin)
    if grid.x_min > lo or grid.x_max < hi:
        raise ExtentError(
            f"grid [{grid.x_min:g}, {grid.x_max:g}) does not cover [{lo:.4g}, {hi:.4g}] "
            f"(packet + drift + {margin:g} widths)")


def sample_gaussian(state: GaussianState, grid: Grid, params: SystemParams | None = None) -> GridState:
    params = params or SystemParams()
    check_extent(grid, state, params)
    return GridState(grid, state.amplitude(grid.x, params.hbar))
