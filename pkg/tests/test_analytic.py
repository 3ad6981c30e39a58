import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from timeavg.analytic import (ScaleDegenerateError, apply_kernel_to_state, c_matrix_element,
                              classical_limit_form, classical_path_summary, fit_smearing_length,
                              free_evolution, p_matrix_element, projection_probability,
                              propagator, scale_constants, xbar_coefficient, xbar_eigenfunction)
from timeavg.core import GaussianState, Grid, GridState, Interval, SystemParams, make_partition, \
    sample_gaussian
from timeavg.specfun import e_delta_smeared

T = 0.125
pts = st.floats(-5.0, 5.0, allow_nan=False)


def test_free_scale_constants_exact():
    sc = scale_constants(SystemParams(horizon=T))
    assert sc.lambda_p == sc.lam
    assert sc.lambda_c == pytest.approx(sc.lam / math.sqrt(3.0), rel=1e-15)


@pytest.mark.parametrize("wt", [0.3, 1.0, 2.0, 3.0])
def test_ho_scale_constants_positive(wt):
    sc = scale_constants(SystemParams(horizon=T, omega=wt / T))
    assert sc.lambda_p > 0 and sc.lambda_c > 0


@pytest.mark.parametrize("wt", [3.2, 3.5, 7.0])
def test_outside_window_rejected(wt):
    p = SystemParams(horizon=1.0, omega=wt)
    with pytest.raises(ScaleDegenerateError):
        scale_constants(p)
    with pytest.raises(ScaleDegenerateError):
        c_matrix_element(p, Interval(0.0, 1.0), 0.1, 0.2)


@given(pts, pts)
def test_free_propagator_modulus(x2, x1):
    p = SystemParams(horizon=T)
    assert abs(propagator(p, x2, x1)) ** 2 == pytest.approx(1.0 / (2 * math.pi * T), rel=1e-13)


def test_ho_propagator_zero_frequency_limit():
    # the exact difference is ~ m w^2 T x^2 / hbar, below 1e-10 for |x| <= 0.4
    x = np.linspace(-0.4, 0.4, 9)
    free = propagator(SystemParams(horizon=T), x[:, None], x[None, :])
    ho = propagator(SystemParams(horizon=T, omega=1e-5 / T), x[:, None], x[None, :])
    assert np.max(np.abs(ho - free) / np.abs(free)) < 1e-10


@pytest.mark.parametrize("omega", [0.0, 4.0])
def test_propagator_group_property(omega):
    grid = Grid.centered(10.0, 1024)
    full = SystemParams(horizon=T, omega=omega)
    half = SystemParams(horizon=T / 2, omega=omega)
    psi = sample_gaussian(GaussianState(), grid, full)
    twice = free_evolution(half, free_evolution(half, psi))
    assert twice.rel_l2(free_evolution(full, psi)) < 1e-6


def test_ho_kernel_zero_frequency_limit():
    iv = Interval(0.3, 1.0)
    x = np.linspace(-0.5, 0.5, 9)
    free = c_matrix_element(SystemParams(horizon=T), iv, x[:, None], x[None, :])
    ho = c_matrix_element(SystemParams(horizon=T, omega=1e-4 / T), iv, x[:, None], x[None, :])
    assert np.max(np.abs(ho - free)) / np.max(np.abs(free)) < 1e-8


@pytest.mark.parametrize("omega", [0.0, 4.0])
def test_large_delta_kernels_equal_propagator(omega):
    p = SystemParams(horizon=T, omega=omega)
    x = np.linspace(-3.0, 3.0, 7)
    k = propagator(p, x[:, None], x[None, :])
    for element in (c_matrix_element, p_matrix_element):
        # E tends to 1 like ell / delta
        val = element(p, Interval(0.0, 1e13), x[:, None], x[None, :])
        assert np.max(np.abs(val - k)) < 1e-12


@pytest.mark.parametrize("omega", [0.0, 4.0])
def test_kernels_differ_only_in_smearing(omega):
    p = SystemParams(horizon=T, omega=omega)
    sc = scale_constants(p)
    iv = Interval(0.2, 1.0)
    x2, x1 = np.meshgrid(np.linspace(-2, 2, 11), np.linspace(-2, 2, 11))
    xbar = xbar_coefficient(p) * (x1 + x2)
    k = propagator(p, x2, x1)
    assert np.allclose(c_matrix_element(p, iv, x2, x1),
                       k * e_delta_smeared(xbar, sc.lambda_c, iv), rtol=0, atol=1e-15)
    assert np.allclose(p_matrix_element(p, iv, x2, x1),
                       k * e_delta_smeared(xbar, sc.lambda_p, iv), rtol=0, atol=1e-15)
    if omega == 0.0:
        assert sc.lambda_p / sc.lambda_c == pytest.approx(math.sqrt(3.0), rel=1e-15)


def test_classical_path_average():
    assert classical_path_summary(SystemParams(horizon=T), 1.0, 0.4).xbar_cl == pytest.approx(0.7)
    th = 0.5
    p = SystemParams(horizon=T, omega=th / T)
    want = (1 - math.cos(th)) / (th * math.sin(th)) * 1.4
    assert classical_path_summary(p, 1.0, 0.4).xbar_cl == pytest.approx(want, rel=1e-14)
    assert xbar_coefficient(SystemParams(horizon=T, omega=1e-6 / T)) == pytest.approx(0.5, rel=1e-12)


def test_classical_limit_form_top_hat_argument():
    p = SystemParams(horizon=T)
    iv = Interval(0.0, 1.0)
    assert classical_limit_form(p, iv, 0.9, 0.0) == pytest.approx(propagator(p, 0.9, 0.0))
    assert classical_limit_form(p, iv, 0.9, 0.3) == 0.0


def test_kernels_approach_classical_limit():
    iv = Interval(0.0, 4.0)
    x2 = np.linspace(-5.0, 5.0, 201)
    x1 = 0.2
    devs = []
    for hb in (1.0, 0.25, 0.0625, 0.015625):
        p = SystemParams(hbar=hb, horizon=T)
        xbar = 0.5 * (x1 + x2)
        interior = np.minimum(np.abs(xbar - iv.a), np.abs(xbar - iv.b)) > 5 * p.lam
        ref = classical_limit_form(p, iv, x2, x1)
        k = np.abs(propagator(p, x2, x1))
        dev = [np.max(np.abs(el(p, iv, x2, x1) - ref)[interior] / k[interior])
               for el in (c_matrix_element, p_matrix_element)]
        devs.append(dev)
    devs = np.array(devs)
    assert np.all(np.diff(devs, axis=0) < 0)


def test_xbar_eigenfunction_modulus_and_limit():
    p = SystemParams(horizon=T)
    x = np.linspace(-4, 4, 9)
    f = xbar_eigenfunction(p, 0.7, x)
    assert np.allclose(np.abs(f) ** 2, 1.0 / (math.pi * T), rtol=1e-14)
    ho = xbar_eigenfunction(SystemParams(horizon=T, omega=1e-5 / T), 0.7, x)
    assert np.max(np.abs(ho - f)) / np.max(np.abs(f)) < 1e-8


def test_xbar_eigenfunction_completeness():
    p = SystemParams(horizon=T)
    grid = Grid.centered(10.0, 1024)
    psi = sample_gaussian(GaussianState(1.0, 0.5, 1.0), grid, p)
    # xbar up to 10 keeps the transform wavenumbers 2 m xbar / hbar T below Nyquist
    xbar = np.linspace(-10.0, 10.0, 1280, endpoint=False)
    basis = xbar_eigenfunction(p, xbar[:, None], grid.x[None, :])
    coef = basis.conj() @ psi.values * grid.dx
    back = basis.T @ coef * (xbar[1] - xbar[0])
    assert GridState(grid, back).rel_l2(psi) < 1e-8


def test_apply_kernel_fig_parameters():
    grid = Grid.centered(10.0, 1024)
    p = SystemParams(horizon=T)
    psi = sample_gaussian(GaussianState(), grid, p)
    evolved = free_evolution(p, psi)
    wide = Interval(0.0, 10.0)
    c10 = apply_kernel_to_state("C", p, wide, psi).state
    p10 = apply_kernel_to_state("P", p, wide, psi).state
    assert c10.rel_l2(evolved) < 1e-4 and p10.rel_l2(evolved) < 1e-4
    narrow = Interval(0.0, 1.0)
    c1 = apply_kernel_to_state("C", p, narrow, psi).state
    p1 = apply_kernel_to_state("P", p, narrow, psi).state
    ratio = c1.l2_distance(p1) / c10.l2_distance(p10)
    # same ratio on a grid twice as fine; the outputs carry undersampled chirps
    fine = Grid.centered(10.0, 2048)
    psi_f = sample_gaussian(GaussianState(), fine, p)
    ratio_f = (apply_kernel_to_state("C", p, narrow, psi_f).state.l2_distance(
        apply_kernel_to_state("P", p, narrow, psi_f).state)
        / apply_kernel_to_state("C", p, wide, psi_f).state.l2_distance(
            apply_kernel_to_state("P", p, wide, psi_f).state))
    assert ratio > 1e3
    assert ratio == pytest.approx(ratio_f, rel=1e-3)


@pytest.mark.parametrize("omega", [0.0, 4.0])
def test_apply_kernel_large_delta(omega):
    grid = Grid.centered(10.0, 1024)
    p = SystemParams(horizon=T, omega=omega)
    psi = sample_gaussian(GaussianState(), grid, p)
    evolved = free_evolution(p, psi)
    for kernel in ("C", "P"):
        assert apply_kernel_to_state(kernel, p, Interval(0.0, 1e6), psi).state.rel_l2(evolved) < 1e-8


def test_apply_kernel_probability_reported():
    grid = Grid.centered(10.0, 1024)
    p = SystemParams(horizon=T)
    psi = sample_gaussian(GaussianState(), grid, p)
    app = apply_kernel_to_state("P", p, Interval(0.0, 1.0), psi)
    assert app.probability == app.state.norm2
    assert 0.0 <= app.probability <= 1.0


@pytest.mark.parametrize("omega", [0.0, 4.0])
def test_projection_probabilities_sum_to_one(omega):
    p = SystemParams(horizon=T, omega=omega)
    st_ = GaussianState(1.0, 0.3, 0.5)
    probs = [projection_probability(p, st_, iv) for iv in make_partition(-3, 3, 5).intervals()]
    assert all(0.0 <= q <= 1.0 for q in probs)
    assert sum(probs) == pytest.approx(1.0, abs=1e-8)


def test_adjacent_projection_kernels_orthogonal():
    # int dx2 conj(P_a(x2, x)) P_b(x2, x') for adjacent ranges, by quadrature over x2
    p = SystemParams(horizon=T)
    a, b = Interval.from_endpoints(-1.0, 0.0), Interval.from_endpoints(0.0, 1.0)
    x, xp = 0.1, -0.2
    vals = []
    for n in (4000, 16000):
        x2 = np.linspace(-40.0, 40.0, n)
        f = np.conj(p_matrix_element(p, a, x2, x)) * p_matrix_element(p, b, x2, xp)
        damp = np.exp(-(x2 / 30.0) ** 8)
        vals.append(abs(np.sum(f * damp) * (x2[1] - x2[0])))
    ref = abs(np.sum(np.abs(p_matrix_element(p, a, x2, x)) ** 2 * damp) * (x2[1] - x2[0]))
    assert vals[1] < 0.05 * ref


def test_fit_recovers_oscillator_scales():
    p = SystemParams(horizon=T, omega=4.0)
    sc = scale_constants(p)
    iv = Interval(0.0, 1.0)
    assert fit_smearing_length("C", p, iv) == pytest.approx(sc.lambda_c, rel=1e-10)
    assert fit_smearing_length("P", p, iv) == pytest.approx(sc.lambda_p, rel=1e-10)
