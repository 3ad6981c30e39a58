import math

import numpy as np
import pytest

from timeavg.analytic import projection_probability
from timeavg.core import GaussianState, Grid, GridState, Interval, SystemParams, make_partition
from timeavg.decoherence import (CoverageError, DecoherenceMatrix, decay_exponent,
                                 decoherence_matrix, freepart_decoherence_kernel, hbar_sweep,
                                 projection_norms, projection_probabilities, required_extent,
                                 tail_probability)
from timeavg.oracle import EvolutionPlan, QuadratureError, build_xbar_operator, potential_for

T = 0.125
PART = make_partition(-3.0, 3.0, 4)


@pytest.mark.parametrize("rep", ["class", "projection"])
def test_matrix_hermitian_with_real_diagonal(rep):
    p = SystemParams(horizon=T)
    dm = decoherence_matrix(rep, p, PART, GaussianState(1.0, 0.05, 0.2), Grid.centered(10.0, 512))
    d = dm.entries
    assert np.max(np.abs(d - d.conj().T)) < 1e-14
    assert np.all(dm.probabilities >= 0.0)


def test_matrix_rejects_non_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        DecoherenceMatrix(PART, np.array([[1.0, 0.5], [0.0, 1.0]], complex))


def test_single_cell_is_whole_history():
    # one wide cell plus tails: the cell carries everything for projections
    p = SystemParams(horizon=T)
    part = make_partition(-12.0, 12.0, 1)
    dm = decoherence_matrix("projection", p, part, GaussianState(), Grid.centered(16.0, 512))
    assert dm.probabilities[1] == pytest.approx(1.0, abs=1e-8)


def test_unknown_representation():
    with pytest.raises(ValueError):
        decoherence_matrix("weyl", SystemParams(horizon=T), PART, GaussianState(), None)


@pytest.mark.parametrize("omega", [0.0, 4.0])
def test_projection_norms_from_eigenvectors(omega):
    p = SystemParams(horizon=T, omega=omega)
    grid = Grid.centered(10.0, 512)
    xop = build_xbar_operator(p, potential_for(p), EvolutionPlan(64), grid=grid)
    psi = GridState(grid, GaussianState(1.0, 0.05, 0.2).amplitude(grid.x, p.hbar))
    ranges = PART.intervals()
    norms = projection_norms(xop, ranges, psi)
    dm = decoherence_matrix("projection", p, PART, GaussianState(1.0, 0.05, 0.2), grid, xbar_op=xop)
    assert np.max(np.abs(norms - dm.probabilities)) < 1e-10
    assert norms.sum() == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("omega", [0.0, 4.0])
def test_closed_form_projection_probabilities(omega):
    p = SystemParams(horizon=T, omega=omega)
    probs = projection_probabilities(p, PART, GaussianState(1.0, 0.05, 0.2))
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert probs[2] == pytest.approx(projection_probability(p, GaussianState(1.0, 0.05, 0.2),
                                                            PART.intervals()[2]))


def test_class_spectral_matches_grid():
    p = SystemParams(horizon=T)
    st = GaussianState()
    spectral = decoherence_matrix("class", p, PART, st, None)
    grid = decoherence_matrix("class", p, PART, st, Grid.centered(20.0, 2048), method="grid")
    # the grid sum truncates the algebraic tails of C psi at the box edge
    assert np.max(np.abs(spectral.entries - grid.entries)) < 1e-2


def test_class_sum_over_all_pairs_is_one():
    p = SystemParams(horizon=T)
    dm = decoherence_matrix("class", p, PART, GaussianState(1.0, 0.05, 0.2), None)
    assert dm.entries.sum().real == pytest.approx(1.0, abs=1e-10)


def test_coverage_error_lists_extent():
    p = SystemParams(horizon=T)
    with pytest.raises(CoverageError, match="extend over"):
        decoherence_matrix("class", p, make_partition(-1.0, 1.0, 2), GaussianState(), None)
    lo, hi = required_extent(p, GaussianState())
    part = make_partition(lo, hi, 2)
    assert tail_probability(p, GaussianState(), part) == pytest.approx(1e-8, rel=1e-6)


def test_freepart_kernel_adjacent_cells_on_diagonal():
    p = SystemParams(horizon=T)
    a, b = Interval.from_endpoints(-1.0, 0.0), Interval.from_endpoints(0.0, 1.0)
    for x in (-0.4, 0.0, 0.7):
        kv = freepart_decoherence_kernel(p, a, b, x, x)
        assert abs(kv.value) < 1e-9


def test_freepart_kernel_same_cell_diagonal():
    # x = x': the y-integral of |E|^2 equals twice the cell width, weight m / 2 pi hbar T
    p = SystemParams(horizon=T)
    cell = Interval(0.0, 1.0)
    kv = freepart_decoherence_kernel(p, cell, cell, 0.2, 0.2)
    assert kv.value.real == pytest.approx(8.0 / math.pi, rel=1e-8)
    assert abs(kv.value.imag) < 1e-9


def test_freepart_kernel_decays_with_hbar():
    a, b = Interval.from_endpoints(-1.0, 0.0), Interval.from_endpoints(0.0, 1.0)
    vals = []
    for hb in (1.0, 0.25, 0.0625):
        p = SystemParams(hbar=hb, horizon=T)
        vals.append(abs(freepart_decoherence_kernel(p, a, b, -0.3, 0.6).value))
    assert vals[0] > vals[1] > vals[2]


def test_freepart_kernel_short_reach_rejected():
    p = SystemParams(horizon=T)
    a, b = Interval.from_endpoints(-1.0, 0.0), Interval.from_endpoints(0.0, 1.0)
    with pytest.raises(QuadratureError):
        freepart_decoherence_kernel(p, a, b, 0.3, -0.3, tol=1e-14, reach=15.0)


def test_freepart_kernel_free_only():
    with pytest.raises(ValueError):
        freepart_decoherence_kernel(SystemParams(horizon=T, omega=4.0), PART.cells[0],
                                    PART.cells[1], 0.0, 0.0)


def test_decay_exponent():
    hb = np.array([1.0, 0.25, 0.0625])
    assert decay_exponent(hb, 3.0 * hb ** 1.5) == pytest.approx(1.5, rel=1e-12)


def test_hbar_sweep_requires_decreasing():
    p = SystemParams(horizon=T)
    with pytest.raises(ValueError, match="decreasing"):
        hbar_sweep("class", p, PART, GaussianState(), [1.0, 1.0], lambda h: None)


def test_hbar_sweep_class_decays():
    p = SystemParams(horizon=T)
    res = hbar_sweep("class", p, PART, GaussianState(), [1.0, 0.25, 0.0625], lambda h: None)
    eps = [r.eps_max for r in res.reports]
    assert eps[0] > eps[1] > eps[2]
    assert res.exponent > 0


def test_refinement_defect_bounded():
    p = SystemParams(horizon=T)
    st = GaussianState(1.0, 0.05, 0.2)
    coarse = decoherence_matrix("class", p, PART, st, None)
    fine = decoherence_matrix("class", p, make_partition(-3.0, 3.0, 8), st, None)
    # cell i of the coarse partition is cells 2i, 2i+1 of the fine one
    pc, pf = coarse.probabilities, fine.probabilities
    eps = fine.report().eps_max
    for i in range(1, 5):
        j = 2 * i - 1
        split = pf[j] + pf[j + 1]
        bound = 2.0 * eps * math.sqrt(pf[j] * pf[j + 1])
        assert abs(split - pc[i]) <= bound + 1e-12
