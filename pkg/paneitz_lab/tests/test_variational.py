import math

import numpy as np
import pytest

from paneitz_lab.blowup import bubble_field
from paneitz_lab.geometry import Field, integrate, make_model
from paneitz_lab.paneitz import K_TOTAL, random_field
from paneitz_lab.variational import (
    II_eps_gradient,
    II_eps_value,
    II_value,
    MinimizeResult,
    adams_check,
    adams_deficit,
    blowup_diagnostics,
    conformal_functional_check,
    eps_ladder,
    euler_lagrange_residual,
    minimize_II_eps,
    resolved_gradient,
    total_mass,
)


@pytest.fixture
def sphere():
    return make_model("sphere", 16)


def test_II_at_zero(sphere):
    zero = Field.constant(sphere, 0.0)
    assert II_value(sphere, 3.0, zero) == pytest.approx(-K_TOTAL * math.log(K_TOTAL), rel=1e-12)
    assert II_eps_value(sphere, 3.0, 1.0, zero) == pytest.approx(
        -(K_TOTAL - 1) * math.log(K_TOTAL), rel=1e-12
    )


def test_II_eps_is_translation_invariant(sphere):
    u = random_field(sphere, 3, band=5)
    for c in (-1.0, 0.5, 2.0):
        assert II_eps_value(sphere, 3.0, 0.5, u + c) == pytest.approx(
            II_eps_value(sphere, 3.0, 0.5, u), rel=1e-10
        )


def test_eps_enters_through_the_mass(sphere):
    # ∫Qu = 0 for mean-zero u on the round sphere
    u = random_field(sphere, 8, band=6)
    mass = total_mass(sphere, 3.0, u)
    gap = II_eps_value(sphere, 3.0, 2.0, u) - II_eps_value(sphere, 3.0, 0.5, u)
    assert gap == pytest.approx(1.5 * math.log(mass), rel=1e-10)


def test_II_rejects_bad_input(sphere):
    zero = Field.constant(sphere, 0.0)
    with pytest.raises(ValueError, match="positive"):
        II_value(sphere, 0.0, zero)
    with pytest.raises(ValueError, match="eps must satisfy"):
        II_eps_value(sphere, 3.0, K_TOTAL, zero)
    with pytest.raises(ValueError, match="eps > 0"):
        minimize_II_eps(sphere, 3.0, 0.0)


def test_gradient_vanishes_at_zero(sphere):
    g = II_eps_gradient(sphere, 3.0, 1.0, Field.constant(sphere, 0.0))
    assert np.max(np.abs(g.data)) < 1e-10


def test_gradient_has_mean_zero(sphere):
    u = random_field(sphere, 4, band=8)
    g = II_eps_gradient(sphere, 3.0, 1.0, u)
    assert abs(integrate(sphere, g)) < 1e-9


def test_gradient_matches_finite_differences(sphere):
    u = random_field(sphere, 5, band=6)
    phi = random_field(sphere, 6, band=6)
    directional = integrate(sphere, II_eps_gradient(sphere, 3.0, 1.0, u) * phi)

    def central(t):
        plus = II_eps_value(sphere, 3.0, 1.0, u + t * phi)
        minus = II_eps_value(sphere, 3.0, 1.0, u - t * phi)
        return (plus - minus) / (2 * t)

    errors = [abs(central(t) - directional) for t in (1e-2, 1e-3)]
    assert math.log10(errors[0] / errors[1]) > 1.9
    for t in (1e-4, 1e-5):
        assert central(t) == pytest.approx(directional, rel=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_minimizer_on_round_sphere_is_constant(sphere, seed):
    result = minimize_II_eps(sphere, 3.0, 1.0, seed=seed)
    assert result.converged
    assert result.grad_norm <= 1e-8
    assert np.max(np.abs(result.normalized_u.data)) < 1e-6
    assert result.mass == pytest.approx(K_TOTAL, rel=1e-12)
    assert result.value == pytest.approx(-(K_TOTAL - 1) * math.log(K_TOTAL), rel=1e-9)


def test_minimizer_on_torus():
    model = make_model("torus", 8)
    result = minimize_II_eps(model, K_TOTAL, 2.0, seed=1)
    assert result.converged
    assert np.max(np.abs(result.normalized_u.data)) < 1e-6


def test_minimizer_is_deterministic(sphere):
    first = minimize_II_eps(sphere, 3.0, 2.0, seed=12, record_trace=True)
    second = minimize_II_eps(sphere, 3.0, 2.0, seed=12, record_trace=True)
    assert first.iterations == second.iterations
    assert first.value == second.value
    assert list(first.trace.columns) == ["iter", "value", "grad_norm", "step"]
    assert len(first.trace) == first.iterations + 1
    assert np.all(np.diff(first.trace["value"]) <= 1e-10)


def test_minimizer_warns_without_convergence(sphere):
    with pytest.warns(RuntimeWarning, match="did not converge"):
        result = minimize_II_eps(sphere, 3.0, 1.0, seed=1, max_iter=2)
    assert not result.converged
    assert result.iterations == 2


def test_eps_ladder_is_non_increasing():
    model = make_model("sphere", 8)
    frame = eps_ladder(model, 3.0, (4.0, 2.0, 1.0, 0.5), seed=3)
    assert frame["eps"].tolist() == [4.0, 2.0, 1.0, 0.5]
    assert frame["converged"].all()
    assert frame["non_increasing"].all()
    expected = [-(K_TOTAL - eps) * math.log(K_TOTAL) for eps in frame["eps"]]
    np.testing.assert_allclose(frame["value"], expected, rtol=1e-9)


def test_euler_lagrange_residual(sphere):
    Qt = Field.from_function(sphere, lambda theta: 3.0 + 0.3 * np.cos(theta))
    result = minimize_II_eps(sphere, Qt, 1.0, seed=2)
    assert result.converged
    residual = euler_lagrange_residual(sphere, result)
    assert np.max(np.abs(residual.data)) <= 10 * 1e-8


@pytest.mark.parametrize("seed", [2, 7])
def test_minimizer_converges_for_varying_Qt(sphere, seed):
    Qt = Field.from_function(sphere, lambda theta: 3.0 + 0.3 * np.cos(theta))
    result = minimize_II_eps(sphere, Qt, 1.0, seed=seed, record_trace=True)
    assert result.converged
    assert result.grad_norm <= 1e-8
    assert result.iterations < 20000
    # The minimizer is not constant, and descent made progress
    assert np.ptp(result.normalized_u.data) > 1e-3
    assert result.trace["value"].iloc[-1] < result.trace["value"].iloc[0]


def test_resolved_gradient_drops_only_unresolved_degrees(sphere):
    u = random_field(sphere, 3, band=6)
    assert resolved_gradient(sphere, u).data == pytest.approx(u.data, abs=1e-12)

    # e^{4u} has content above L_max; its projection is band limited
    g = II_eps_gradient(sphere, 3.0, 1.0, u)
    resolved = resolved_gradient(sphere, g)
    np.testing.assert_allclose(resolved.data, resolved.band_limited().data, atol=1e-10)
    assert np.max(np.abs(g.data - resolved.data)) > 0

    torus = make_model("torus", 8)
    w = random_field(torus, 1)
    assert resolved_gradient(torus, w) is w


def test_minimizer_stops_when_stalled(sphere):
    with pytest.warns(RuntimeWarning, match="did not converge"):
        result = minimize_II_eps(
            sphere, 3.0, 1.0, seed=1, tol=0.0, max_iter=100000, stall_iterations=20
        )
    assert not result.converged
    assert result.iterations < 100000
    assert result.grad_norm < 1e-10


def test_adams_deficit_of_zero_is_log_volume(sphere):
    zero = Field.constant(sphere, 0.0)
    assert adams_deficit(sphere, zero) == pytest.approx(math.log(sphere.volume))
    u = random_field(sphere, 2, band=4)
    assert adams_deficit(sphere, u + 1.5) == pytest.approx(adams_deficit(sphere, u), rel=1e-12)


def test_adams_scan_is_stable(sphere):
    small = adams_check(sphere, samples=1000, seed=0, band=8, ladder=[1.0])
    large = adams_check(sphere, samples=2000, seed=0, band=8, ladder=[1.0])
    assert small.zero_deficit == pytest.approx(math.log(sphere.volume))
    assert large.max_deficit >= small.max_deficit
    assert large.max_deficit == pytest.approx(small.max_deficit, rel=0.05)


def test_adams_bubble_ladder_is_bounded():
    # Möbius factors keep the deficit at log Vol
    model = make_model("sphere", 128)
    report = adams_check(model, samples=10, ladder=[1.0, 2.0, 4.0, 8.0, 16.0])
    assert report.bounded
    assert report.ladder_spread < 1e-4
    np.testing.assert_allclose(report.ladder["deficit"], math.log(model.volume), atol=1e-4)


def test_blowup_diagnostics_of_constant_minimizer(sphere):
    result = minimize_II_eps(sphere, 3.0, 1.0)
    assert result.iterations == 0
    diagnostics = blowup_diagnostics(sphere, result)
    assert diagnostics.m == pytest.approx(0.0, abs=1e-12)
    assert diagnostics.r_scale == pytest.approx(1.0)
    assert diagnostics.lam == pytest.approx(0.25)
    assert diagnostics.profile_gap == pytest.approx(math.log(1.25), rel=1e-10)


def test_blowup_diagnostics_of_concentrated_bubble():
    model = make_model("sphere", 768)
    u = bubble_field(model, 100.0)
    diagnostics = blowup_diagnostics(model, u, Qt=3.0, radii=[0.01, 0.02, 0.05, 0.1])
    assert diagnostics.x_max == 0.0
    assert diagnostics.m == pytest.approx(math.log(100.0), rel=1e-6)
    assert diagnostics.profile_gap < 0.05


def test_scaling_slope_of_smooth_field(sphere):
    u = Field.from_function(sphere, lambda theta: 0.1 * np.cos(theta))
    table = blowup_diagnostics(sphere, u, Qt=3.0).scaling_table
    slopes = table.groupby("q")["slope"].first()
    assert slopes[1.0] > 3


def test_blowup_diagnostics_rejects(sphere):
    u = Field.from_function(sphere, lambda theta: 0.1 * np.cos(theta))
    with pytest.raises(ValueError, match="Qt is required"):
        blowup_diagnostics(sphere, u)
    with pytest.raises(ValueError, match="twice the grid spacing"):
        blowup_diagnostics(sphere, u, Qt=3.0, radii=[1e-3, 0.1])
    equator = Field.from_function(sphere, lambda theta: np.sin(theta) ** 2)
    with pytest.raises(ValueError, match="maximum at a pole"):
        blowup_diagnostics(sphere, equator, Qt=3.0)


@pytest.mark.parametrize("seed", range(5))
def test_conformal_change_of_II(sphere, seed):
    u = random_field(sphere, seed, band=5)
    v = random_field(sphere, seed + 100, band=3, amplitude=0.1)
    check = conformal_functional_check(sphere, 3.0, u, v)
    assert abs(check.curvature) < 1e-10
    assert abs(check.gap) < 1e-8 * abs(check.background_value)


def test_conformal_change_needs_the_curvature_term(sphere):
    u = random_field(sphere, 1, band=5)
    v = Field.constant(sphere, 0.2)
    check = conformal_functional_check(sphere, 3.0, u, v)
    assert check.curvature == pytest.approx(4 * K_TOTAL * 0.2, rel=1e-10)
    assert abs(check.gap) < 1e-8 * abs(check.background_value)
    printed = check.conformal_value - (check.background_value - check.pairing)
    assert abs(printed) > 1.0


def test_minimize_result_export(sphere):
    result = minimize_II_eps(sphere, 3.0, 1.0)
    assert isinstance(result, MinimizeResult)
    doc = result.to_dict()
    assert doc["converged"] is True
    assert set(doc) >= {"value", "grad_norm", "iterations", "eps", "mass", "shift"}
