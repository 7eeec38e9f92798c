import math

import numpy as np
import pytest

from paneitz_lab import blowup
from paneitz_lab.geometry import Field, make_model
from paneitz_lab.greenfn import green_function
from paneitz_lab.paneitz import K_TOTAL

LAMBDA_SPHERE = -K_TOTAL * math.log(K_TOTAL)


def test_bubble_profile():
    w, lap = blowup.bubble_profile(0.5, 0.0)
    assert w == 0.0
    assert lap == -4.0

    # radial Laplacian w'' + 3w'/r by central differences
    h, r = 1e-3, 0.7
    values, lap = blowup.bubble_profile(0.5, np.array([r - h, r, r + h]))
    second = (values[2] - 2 * values[1] + values[0]) / h**2
    first = (values[2] - values[0]) / (2 * h)
    assert second + 3 * first / r == pytest.approx(lap[1], abs=1e-5)


@pytest.mark.parametrize("Qp", [1.0, 3.0, 12.0])
def test_bubble_carries_total_q(Qp):
    lam = blowup.BubbleParams.from_q(Qp).lam
    assert Qp * blowup.bubble_mass(lam, math.inf) == pytest.approx(K_TOTAL, rel=1e-8)


def test_bubble_mass_scaling_and_closed_form():
    assert blowup.bubble_mass(4.0, math.inf) == pytest.approx(
        blowup.bubble_mass(1.0, math.inf) / 16, rel=1e-10
    )
    assert blowup.bubble_mass(1.0, 10.0) == pytest.approx(
        blowup.bubble_mass_closed(1.0, 10.0), rel=1e-10
    )


def test_bubble_energy():
    assert blowup.bubble_energy(1.0, 10.0) == pytest.approx(
        blowup.bubble_energy_closed(1.0, 10.0), rel=1e-9
    )
    assert blowup.bubble_energy(1.0, 10.0) == pytest.approx(755.1, abs=2.0)
    assert blowup.bubble_energy(0.25, 10.0) == pytest.approx(
        blowup.bubble_energy(1.0, 5.0), rel=1e-10
    )


def test_bubble_energy_remainder_decays_like_inverse_square():
    Ls = np.array([10.0, 30.0, 100.0])
    gaps = np.array(
        [
            blowup.bubble_energy_closed(1.0, L) - blowup.bubble_energy_asymptotic(1.0, L)
            for L in Ls
        ]
    )
    assert np.all(np.abs(gaps) <= 16 * math.pi**2 / Ls**2)
    slope, _ = np.polyfit(np.log(Ls), np.log(np.abs(gaps)), 1)
    assert slope < -1.8


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_bubble_rejects(bad):
    with pytest.raises(ValueError, match="lambda must be positive"):
        blowup.bubble_mass(bad, 1.0)
    with pytest.raises(ValueError, match="must be positive"):
        blowup.BubbleParams.from_q(bad)


def test_capacity_trivial_data():
    sol = blowup.capacity_solve(blowup.CapacityProblem(0.3, 1.0, 2.0, 2.0, 0.0, 0.0))
    assert sol.A == pytest.approx(0.0, abs=1e-12)
    assert sol.B == pytest.approx(0.0, abs=1e-12)
    assert sol.D == pytest.approx(2.0)
    assert sol.energy == pytest.approx(0.0, abs=1e-10)


def test_capacity_example():
    problem = blowup.CapacityProblem(0.1, 1.0, 1.0, 0.0, 0.0, 0.0)
    sol = blowup.capacity_solve(problem)
    assert sol.A == pytest.approx(-0.7562, abs=1e-4)
    assert sol(0.1) == pytest.approx(1.0)
    assert sol(1.0) == pytest.approx(0.0, abs=1e-12)
    assert sol.derivative(0.1) == pytest.approx(0.0, abs=1e-10)
    assert sol.derivative(1.0) == pytest.approx(0.0, abs=1e-12)
    assert sol.energy == pytest.approx(
        blowup.capacity_energy_quadrature(sol, problem), rel=1e-9
    )


def test_capacity_closed_form_matches_solve():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        r = rng.uniform(0.1, 0.5)
        R = rng.uniform(0.6, 2.0)
        problem = blowup.CapacityProblem(r, R, *rng.standard_normal(4))
        sol = blowup.capacity_solve(problem)
        A, B = blowup.capacity_closed_form(problem)
        np.testing.assert_allclose([sol.A, sol.B], [A, B], rtol=1e-9, atol=1e-12)


def test_capacity_energy_matches_quadrature():
    rng = np.random.default_rng(7)
    for _ in range(100):
        r = rng.uniform(0.1, 0.5)
        R = rng.uniform(0.6, 2.0)
        problem = blowup.CapacityProblem(r, R, *rng.standard_normal(4))
        sol = blowup.capacity_solve(problem)
        assert sol.energy > 0
        assert sol.energy == pytest.approx(
            blowup.capacity_energy_quadrature(sol, problem), rel=1e-9
        )


@pytest.mark.parametrize("r,R", [(1.0, 1.0), (0.0, 1.0), (2.0, 1.0)])
def test_capacity_rejects_degenerate_annulus(r, R):
    with pytest.raises(ValueError, match="0 < r < R"):
        blowup.capacity_solve(blowup.CapacityProblem(r, R, 1.0, 0.0, 0.0, 0.0))


def test_capacity_oracle():
    assert blowup.capacity_oracle(
        blowup.CapacityProblem(0.2, 1.0, 3.0, 3.0, 0.0, 0.0), 200
    ) == pytest.approx(0.0, abs=1e-10)

    problem = blowup.CapacityProblem(0.1, 1.0, 1.0, 0.0, 0.0, 0.0)
    exact = blowup.capacity_solve(problem).energy
    errors = [abs(blowup.capacity_oracle(problem, n) - exact) for n in (500, 1000, 2000)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-3 * exact
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(rates >= 1.0)

    with pytest.raises(ValueError, match="n >= 100"):
        blowup.capacity_oracle(problem, 50)


@pytest.fixture
def quadratic_taylor():
    return blowup.TaylorData(
        S0=0.2,
        a=np.array([0.1, -0.05, 0.02, 0.0]),
        a_sym=np.diag([0.3, -0.1, 0.2, 0.05]),
        Qp=3.0,
        b=np.array([0.2, 0.1, 0.0, -0.1]),
        b_sym=np.diag([0.4, 0.2, -0.3, 0.1]),
    )


def test_testfn_parameters():
    params = blowup.make_testfn_params(lam=0.25, eps=0.01, L=10.0)
    assert params.mu == pytest.approx(-1 / (100 * 1e-4 * 26))
    assert params.C_eps == pytest.approx(
        math.log(26) - 2 * math.log(0.1) - params.mu * 100 * 1e-4
    )
    assert blowup.make_testfn_params(eps=1e-3).lam == pytest.approx(0.25)
    with pytest.raises(ValueError, match="eps must lie"):
        blowup.make_testfn_params(eps=1.5)


def test_testfn_is_c1_across_the_gluing_radius(quadratic_taylor):
    params = blowup.make_testfn_params(eps=0.01, L=10.0, taylor=quadratic_taylor)
    edge = params.L * params.eps
    for direction in ([1, 0, 0, 0], [1, 1, 0, 0], [0.2, -0.4, 0.1, 0.9]):
        inside, outside = edge * (1 - 1e-12), edge * (1 + 1e-12)
        assert blowup.test_function(params, inside, direction) == pytest.approx(
            blowup.test_function(params, outside, direction), abs=1e-9
        )
        assert blowup.test_function_derivative(params, inside, direction) == pytest.approx(
            blowup.test_function_derivative(params, outside, direction), abs=1e-8
        )


def test_testfn_at_the_centre():
    params = blowup.make_testfn_params(lam=0.25, eps=0.01, L=10.0)
    assert blowup.test_function(params, 0.0) == pytest.approx(params.C_eps)


def test_mass_expansion_constant_data_is_fourth_order_in_L():
    gaps = []
    Ls = np.array([10.0, 20.0, 40.0])
    for L in Ls:
        params = blowup.make_testfn_params(eps=1e-3, L=L)
        expansion = blowup.testfn_mass_expansion(params)
        assert expansion.predicted == expansion.leading
        gaps.append(abs(expansion.gap))
    gaps = np.array(gaps)
    lam = 0.25
    assert np.all(gaps * Ls**4 <= 1.5 * 64 * math.pi**2 / lam**2)
    slope, _ = np.polyfit(np.log(Ls), np.log(gaps), 1)
    assert slope < -3.5


def test_mass_expansion_eps2_coefficient(quadratic_taylor):
    eps = np.array([4e-3, 2e-3, 1e-3])
    params = [blowup.make_testfn_params(eps=e, L=40.0, taylor=quadratic_taylor) for e in eps]
    expansions = [blowup.testfn_mass_expansion(p) for p in params]
    D = np.array([e.numeric - e.leading for e in expansions])
    # D = d0 + c2 ε² + c4 ε⁴
    design = np.stack([np.ones_like(eps), eps**2, eps**4], axis=-1)
    d0, c2, c4 = np.linalg.solve(design, D)
    predicted = blowup.eps2_coefficient(params[0])
    assert c2 == pytest.approx(predicted, rel=2e-2)


def test_mass_expansion_linear_term_is_second_order():
    eps = np.array([4e-3, 2e-3, 1e-3])
    tilted = blowup.TaylorData(a=np.array([0.3, 0.0, 0.0, 0.0]))
    flat = blowup.TaylorData()
    excess = []
    for e in eps:
        gap = [
            blowup.testfn_mass_expansion(
                blowup.make_testfn_params(eps=e, L=40.0, taylor=t)
            )
            for t in (tilted, flat)
        ]
        excess.append((gap[0].numeric - gap[0].leading) - (gap[1].numeric - gap[1].leading))
    slope, _ = np.polyfit(np.log(eps), np.log(excess), 1)
    assert slope == pytest.approx(2.0, abs=0.1)


def test_mass_expansion_rejects():
    params = blowup.make_testfn_params(eps=0.1, L=20.0)
    with pytest.raises(ValueError, match="inside delta"):
        blowup.testfn_mass_expansion(params)
    curved = blowup.make_testfn_params(eps=1e-3, taylor=blowup.TaylorData(R_scalar=1.0))
    with pytest.raises(ValueError, match="flat setting"):
        blowup.testfn_mass_expansion(curved)


def test_lambda_on_round_sphere():
    model = make_model("sphere", 128)
    value = blowup.lambda_const(model, 3.0, 0.0)
    assert value == pytest.approx(LAMBDA_SPHERE, abs=16 * math.pi**2 * 1e-3)


def test_lambda_scales_with_q():
    model = make_model("sphere", 64)
    G = green_function(model, 0.0)
    base = blowup.lambda_from_green(model, 3.0, G, 0.0).lambda_value
    scaled = blowup.lambda_from_green(model, 12.0, G, 0.0).lambda_value
    assert scaled - base == pytest.approx(-K_TOTAL * math.log(4.0), abs=1e-9)

    shifted = blowup.lambda_from_green(model, 3.0, G + 5.0, 0.0).lambda_value
    assert shifted == pytest.approx(base, abs=1e-9)


def test_lambda_map_on_torus_is_flat():
    model = make_model("torus", 16)
    points = [(0.0, 0.0, 0.0, 0.0), (0.25, 0.0, 0.0, 0.0), (0.5, 0.5, 0.0, 0.25)]
    report = blowup.lambda_map(model, K_TOTAL, points)
    values = report.to_frame()["lambda_value"]
    assert values.max() - values.min() < 1e-8
    assert report.argmin == points[0]


def test_lambda_map_picks_the_smaller_pole():
    model = make_model("sphere", 64)
    Qt = Field.from_function(model, lambda theta: 3.0 + 0.5 * np.cos(theta))
    report = blowup.lambda_map(model, Qt, [0.0, math.pi])
    assert len(report.entries) == 2
    # Λ decreases with Q̃(p) and the north pole carries the larger value
    assert report.argmin == 0.0
    assert report.min_value == pytest.approx(blowup.lambda_const(model, Qt, 0.0))


def test_lambda_rejects():
    model = make_model("sphere", 16)
    Qt = Field.from_function(model, lambda theta: np.cos(theta))
    with pytest.raises(ValueError, match="Q̃\\(p\\) > 0"):
        blowup.lambda_const(model, Qt, math.pi)
    with pytest.raises(ValueError, match="at least one point"):
        blowup.lambda_map(model, 3.0, [])


def test_criterion_main2():
    result = blowup.criterion_main2(3.0, np.zeros(4), 0.0, np.zeros(4), 0.0, 6.0)
    assert result.value == pytest.approx(-1.0)
    assert not result.satisfied
    assert blowup.criterion_main2(3.0, np.zeros(4), 1.0, np.zeros(4), 0.0, 6.0).satisfied
    with pytest.raises(ValueError, match="must be positive"):
        blowup.criterion_main2(0.0, np.zeros(4), 1.0, np.zeros(4), 0.0, 0.0)


def test_criterion_conformal():
    zero = np.zeros(4)
    assert not blowup.criterion_conformal(zero, zero, zero, zero, zero, zero, 3.0).satisfied

    a_sym = np.array([1.0, 1.0, 1.0, 1.0])
    result = blowup.criterion_conformal(zero, a_sym, zero, zero, zero, zero, 3.0)
    assert result.value == pytest.approx(2.0)

    a = np.array([0.1, 0.2, -0.3, 0.0])
    c = np.array([0.05, -0.1, 0.0, 0.2])
    a_sym = np.diag([0.1, -0.2, 0.3, 0.0])
    c_sym = np.diag([0.0, 0.1, -0.1, 0.2])
    merged = blowup.criterion_conformal(a + c, a_sym + c_sym, zero, zero, zero, zero, 3.0)
    split = blowup.criterion_conformal(a, a_sym, c, c_sym, zero, zero, 3.0)
    assert merged.value == pytest.approx(split.value)


def test_flat_dictionary_agrees_with_conformal_form():
    rng = np.random.default_rng(7)
    zero = np.zeros(4)
    for _ in range(1000):
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        m, n = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
        a_sym, b_sym = m + m.T, n + n.T
        Qp = rng.uniform(0.1, 10.0)
        main = blowup.criterion_main2(**blowup.flat_dictionary(a, a_sym, b, b_sym, Qp))
        conformal = blowup.criterion_conformal(a, a_sym, zero, zero, b, b_sym, Qp)
        assert main.value == pytest.approx(2 * Qp * conformal.value, rel=1e-12, abs=1e-12)
