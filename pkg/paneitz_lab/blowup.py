"""Bubble calculus, the annular capacity problem, the glued test function,
the threshold ``Λ_g(Q̃, p)`` and the existence criteria.

The standard bubble ``w = -log(1 + λ|x|²)`` with ``λ = √(3Q̃(p))/12``
solves ``Δ₀²w = 2Q̃(p)e^{4w}`` on ℝ⁴ and carries mass
``Q̃(p)∫e^{4w} = 8π²``.
"""

import logging
import math
import warnings
from typing import NamedTuple

import numpy as np
import pandas as pd
import scipy.integrate
import scipy.linalg
import scipy.sparse

from .geometry import (
    SPHERE,
    TORUS,
    Field,
    as_field,
    evaluate,
    integrate,
    s3_quadrature,
)
from .greenfn import expansion_fit, green_function, point_key, pole_colatitude
from .paneitz import K_TOTAL, q_field
from .utils import get_config, ordered_map

logger = logging.getLogger(__name__)

# Radial integrals switch to the closed-form tail beyond s = λr² = TAIL_START
TAIL_START = 100.0


def _quad(func, a, b):
    value, _ = scipy.integrate.quad(
        func,
        a,
        b,
        epsabs=float(get_config("quadrature.epsabs")),
        epsrel=float(get_config("quadrature.epsrel")),
        limit=int(get_config("quadrature.limit")),
    )
    return value


class BubbleParams(NamedTuple):
    """Concentration ``λ`` and cut-off radius ``L`` of a bubble."""

    lam: float
    L: float

    @classmethod
    def from_q(cls, Qp, L=math.inf):
        """``λ = √(3Q̃(p))/12``."""
        if not Qp > 0:
            raise ValueError(f"Q̃(p) must be positive, got {Qp}")
        return cls(math.sqrt(3 * Qp) / 12, L)


def _check_lambda(lam):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")


def bubble_profile(lam, r):
    """``w(r) = -log(1 + λr²)`` and its flat Laplacian ``Δ₀w``.

    Examples
    --------
    >>> bubble_profile(1.0, 1.0)
    (-0.6931471805599453, -3.0)
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("bubble_profile needs r >= 0")
    s = lam * r**2
    w = -np.log1p(s)
    laplacian = 4 * lam**2 * r**2 / (1 + s) ** 2 - 8 * lam / (1 + s)
    if w.ndim == 0:
        return float(w), float(laplacian)
    return w, laplacian


def _mass_antiderivative(S):
    return 1 / 6 - (1 + S) ** -2 / 2 + (1 + S) ** -3 / 3


def bubble_mass_closed(lam, L):
    """Closed-form ``∫_{B_L} e^{4w} dx``."""
    _check_lambda(lam)
    if math.isinf(L):
        return math.pi**2 / (6 * lam**2)
    return math.pi**2 / lam**2 * _mass_antiderivative(lam * L**2)


def bubble_mass(lam, L):
    """``∫_{B_L} e^{4w} dx = 2π²∫₀^L r³(1 + λr²)⁻⁴ dr`` by adaptive quadrature.

    Integrates in ``s = λr²``; for ``L = ∞`` the part beyond ``s = 100`` is
    added in closed form.

    Examples
    --------
    >>> round(3 * bubble_mass(0.25, math.inf) / (8 * math.pi**2), 10)
    1.0
    """
    _check_lambda(lam)
    if not L > 0:
        raise ValueError(f"L must be positive or inf, got {L}")

    def integrand(s):
        return s * (1 + s) ** -4

    if math.isinf(L):
        tail = (1 + TAIL_START) ** -2 / 2 - (1 + TAIL_START) ** -3 / 3
        body = _quad(integrand, 0.0, TAIL_START) + tail
    else:
        body = _quad(integrand, 0.0, lam * L**2)
    return math.pi**2 / lam**2 * body


def bubble_energy(lam, L):
    """``∫_{B_L} |Δ₀w|² dx`` by adaptive radial quadrature."""
    _check_lambda(lam)
    if not 0 < L < math.inf:
        raise ValueError(f"L must be positive and finite, got {L}")

    def integrand(s):
        return 16 * s * (s + 2) ** 2 / (1 + s) ** 4

    return math.pi**2 * _quad(integrand, 0.0, lam * L**2)


def bubble_energy_closed(lam, L):
    """Exact antiderivative of :func:`bubble_energy`."""
    T = 1 + lam * L**2
    return (
        16 * math.pi**2 * math.log(T)
        + 8 * math.pi**2 / 3
        - 16 * math.pi**2 / T
        + 8 * math.pi**2 / T**2
        + 16 * math.pi**2 / (3 * T**3)
    )


def bubble_energy_asymptotic(lam, L):
    """``16π² log(1 + λL²) + 8π²/3``, the energy up to ``O(1/L²)``."""
    return 16 * math.pi**2 * math.log1p(lam * L**2) + 8 * math.pi**2 / 3


def bubble_field(model, concentration):
    """Bubble pulled back to a model, concentrated at the origin/north pole.

    On the sphere this is the Möbius dilation factor
    ``log(2t/((1+t²) + (1-t²)cos θ))``, which solves ``Pu + 6 = 6e^{4u}``.
    On the torus it is the periodized ``-log(1 + t²ρ²)`` with
    ``ρ² = Σ sin²(πx_i)/π²``.
    """
    t = float(concentration)
    if not t > 0:
        raise ValueError(f"concentration must be positive, got {concentration}")
    if model.kind == SPHERE:
        return Field.from_function(
            model,
            lambda theta: np.log(2 * t / ((1 + t**2) + (1 - t**2) * np.cos(theta))),
        )

    def periodic_bubble(*x):
        rho2 = sum(np.sin(math.pi * xi) ** 2 for xi in x) / math.pi**2
        return -np.log1p(t**2 * rho2)

    return Field.from_function(model, periodic_bubble)


class CapacityProblem(NamedTuple):
    """Boundary data on the annulus ``r < |x| < R``: values ``P`` and slopes ``Q``."""

    r: float
    R: float
    P1: float
    P2: float
    Q1: float
    Q2: float

    def validate(self):
        if not 0 < self.r < self.R:
            raise ValueError(
                f"capacity problem requires 0 < r < R, got r={self.r}, R={self.R}"
            )
        return self

    @property
    def rho(self):
        """``ϱ = (R² - r²)/(R² + r²)``"""
        return (self.R**2 - self.r**2) / (self.R**2 + self.r**2)


class CapacitySolution(NamedTuple):
    """Biharmonic minimizer ``Φ = A log ρ + Bρ² + C/ρ² + D``."""

    A: float
    B: float
    C: float
    D: float
    rho: float
    energy: float

    def __call__(self, radius):
        radius = np.asarray(radius, dtype=float)
        return self.A * np.log(radius) + self.B * radius**2 + self.C / radius**2 + self.D

    def derivative(self, radius):
        radius = np.asarray(radius, dtype=float)
        return self.A / radius + 2 * self.B * radius - 2 * self.C / radius**3

    def laplacian(self, radius):
        """``ΔΦ = 2A/ρ² + 8B``"""
        return 2 * self.A / np.asarray(radius, dtype=float) ** 2 + 8 * self.B

    def to_dict(self):
        return self._asdict()


def capacity_closed_form(problem):
    """Closed-form ``(A, B)`` of the capacity minimizer."""
    r, R, P1, P2, Q1, Q2 = problem.validate()
    rho = problem.rho
    log_ratio = math.log(r / R)
    denominator = log_ratio + rho
    A = (P1 - P2 + rho / 2 * r * Q1 + rho / 2 * R * Q2) / denominator
    B = (
        -2 * P1
        + 2 * P2
        - r * Q1 * (1 + 2 * r**2 / (R**2 - r**2) * log_ratio)
        + R * Q2 * (1 + 2 * R**2 / (R**2 - r**2) * log_ratio)
    ) / (4 * (R**2 + r**2) * denominator)
    return A, B


def capacity_energy(A, B, r, R):
    """``-8π²A² log(r/R) + 32π²AB(R² - r²) + 32π²B²(R⁴ - r⁴)``."""
    return (
        -8 * math.pi**2 * A**2 * math.log(r / R)
        + 32 * math.pi**2 * A * B * (R**2 - r**2)
        + 32 * math.pi**2 * B**2 * (R**4 - r**4)
    )


def capacity_energy_quadrature(solution, problem):
    """``2π²∫_r^R (ΔΦ)² ρ³ dρ`` by adaptive quadrature."""
    return _quad(
        lambda rho: 2 * math.pi**2 * solution.laplacian(rho) ** 2 * rho**3,
        problem.r,
        problem.R,
    )


def capacity_solve(problem):
    """Solve the 4×4 boundary system of the capacity problem.

    Parameters
    ----------
    problem: CapacityProblem

    Returns
    -------
    CapacitySolution
        ``A, B, C, D``, ``ϱ`` and the closed-form energy.

    Notes
    -----
    ``A`` and ``B`` are cross-checked against the closed forms; a relative
    disagreement above ``1e-10`` emits a ``RuntimeWarning``.

    Examples
    --------
    >>> sol = capacity_solve(CapacityProblem(0.1, 1.0, 1.0, 0.0, 0.0, 0.0))
    >>> round(sol.A, 4)
    -0.7562
    """
    r, R, P1, P2, Q1, Q2 = problem.validate()
    matrix = np.array(
        [
            [math.log(r), r**2, r**-2, 1.0],
            [math.log(R), R**2, R**-2, 1.0],
            [1 / r, 2 * r, -2 / r**3, 0.0],
            [1 / R, 2 * R, -2 / R**3, 0.0],
        ]
    )
    try:
        A, B, C, D = scipy.linalg.solve(matrix, [P1, P2, Q1, Q2])
    except scipy.linalg.LinAlgError as e:
        raise ValueError(f"capacity system is singular for r={r}, R={R}") from e

    A_closed, B_closed = capacity_closed_form(problem)
    for name, solved, closed in (("A", A, A_closed), ("B", B, B_closed)):
        if abs(solved - closed) > 1e-10 * max(abs(solved), abs(closed)) + 1e-14:
            warnings.warn(
                f"capacity {name}: 4x4 solve {solved!r} differs from the closed "
                f"form {closed!r}",
                RuntimeWarning,
            )
    energy = capacity_energy(A, B, r, R)
    if energy < 0:
        # Only roundoff can make the quadratic form negative
        energy = 0.0
    return CapacitySolution(
        float(A), float(B), float(C), float(D), problem.rho, float(energy)
    )


def capacity_oracle(problem, n):
    """Minimal discrete radial energy on an ``n``-interval grid.

    Second-order central differences of ``Φ'' + 3Φ'/ρ`` with ghost points
    carrying the slope conditions; unknowns are the interior values and the
    trapezoid-weighted energy is minimized by dense least squares.
    """
    r, R, P1, P2, Q1, Q2 = problem.validate()
    n = int(n)
    if n < 100:
        raise ValueError(f"capacity_oracle needs n >= 100, got {n}")
    h = (R - r) / n
    rho = r + h * np.arange(n + 1)
    lower = 1 / h**2 - 3 / (2 * h * rho)
    upper = 1 / h**2 + 3 / (2 * h * rho)
    centre = np.full(n + 1, -2 / h**2)
    # Rows act on the extended vector Φ_{-1}, ..., Φ_{n+1}
    stencil = scipy.sparse.diags(
        [lower, centre, upper], [0, 1, 2], shape=(n + 1, n + 3), format="csr"
    )

    # Φ_ext = E x + e for the unknowns x = Φ_1 .. Φ_{n-1}
    rows = np.concatenate([[0], np.arange(2, n + 1), [n + 2]])
    cols = np.concatenate([[0], np.arange(n - 1), [n - 2]])
    embed = scipy.sparse.csr_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n + 3, n - 1)
    )
    offset = np.zeros(n + 3)
    offset[0] = -2 * h * Q1
    offset[1] = P1
    offset[n + 1] = P2
    offset[n + 2] = 2 * h * Q2

    weights = 2 * math.pi**2 * rho**3 * h
    weights[[0, -1]] /= 2
    sqrt_w = np.sqrt(weights)
    M = (stencil @ embed).toarray() * sqrt_w[:, None]
    f = (stencil @ offset) * sqrt_w
    x, *_ = scipy.linalg.lstsq(M, -f, lapack_driver="gelsy")
    residual = M @ x + f
    energy = float(residual @ residual)
    logger.debug("Capacity oracle n=%d energy=%.15g", n, energy)
    return energy


class TaylorData(NamedTuple):
    """Second-order Taylor data at ``p`` in the flat chart.

    ``S(x) = S₀ + a·x + ½xᵀ a_sym x`` and
    ``Q̃(x) = Qp + b·x + ½xᵀ b_sym x`` (Hessian convention).
    """

    S0: float = 0.0
    a: np.ndarray = np.zeros(4)
    a_sym: np.ndarray = np.zeros((4, 4))
    Qp: float = 3.0
    b: np.ndarray = np.zeros(4)
    b_sym: np.ndarray = np.zeros((4, 4))
    R_scalar: float = 0.0

    @classmethod
    def from_expansion(cls, expansion, Qp, b=None, b_sym=None, R_scalar=0.0):
        """Build from a fitted :class:`~paneitz_lab.greenfn.GreenExpansion`."""
        return cls(
            S0=expansion.S0,
            a=np.asarray(expansion.a, dtype=float),
            a_sym=expansion.hessian,
            Qp=Qp,
            b=np.zeros(4) if b is None else np.asarray(b, dtype=float),
            b_sym=np.zeros((4, 4)) if b_sym is None else np.asarray(b_sym, dtype=float),
            R_scalar=R_scalar,
        )

    def S(self, x):
        x = np.asarray(x, dtype=float)
        return self.S0 + x @ self.a + 0.5 * np.einsum("...i,ij,...j->...", x, self.a_sym, x)

    def Q(self, x):
        x = np.asarray(x, dtype=float)
        return self.Qp + x @ self.b + 0.5 * np.einsum("...i,ij,...j->...", x, self.b_sym, x)

    def to_dict(self):
        return {k: np.asarray(v).tolist() for k, v in self._asdict().items()}


class TestFnParams(NamedTuple):
    """Parameters of the glued test function ``φ_ε``."""

    lam: float
    eps: float
    L: float
    mu: float
    C_eps: float
    taylor: TaylorData

    def to_dict(self):
        out = self._asdict()
        out["taylor"] = self.taylor.to_dict()
        return out


TestFnParams.__test__ = False


def default_L(eps):
    """``L = log(1/ε)/√ε``."""
    return math.log(1 / eps) / math.sqrt(eps)


def make_testfn_params(lam=None, eps=1e-3, L=None, taylor=None):
    """``μ = -1/(L²ε²(1+λL²))`` and ``C_ε = log(1+λL²) - 2log(Lε) - μL²ε²``.

    ``lam`` defaults to ``√(3Qp)/12`` from the Taylor data and ``L`` to
    :func:`default_L`.
    """
    taylor = TaylorData() if taylor is None else taylor
    lam = BubbleParams.from_q(taylor.Qp).lam if lam is None else float(lam)
    _check_lambda(lam)
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    L = default_L(eps) if L is None else float(L)
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    mu = -1 / (L**2 * eps**2 * (1 + lam * L**2))
    C_eps = math.log1p(lam * L**2) - 2 * math.log(L * eps) - mu * L**2 * eps**2
    return TestFnParams(lam, eps, L, mu, C_eps, taylor)


def test_function(params, r, direction=None):
    """Glued test function along the ray ``r·ω``.

    Inside ``B_{Lε}``: ``-log(1 + λ(r/ε)²) + C_ε + S(rω) + μr²``; outside:
    ``-2 log r + S(rω)``. ``direction`` defaults to the first axis.
    """
    r = np.asarray(r, dtype=float)
    omega = _direction(direction)
    lam, eps, L, mu, C_eps, taylor = params
    S = taylor.S(r[..., None] * omega)
    inner = -np.log1p(lam * (r / eps) ** 2) + C_eps + mu * r**2
    with np.errstate(divide="ignore"):
        outer = -2 * np.log(r)
    return np.where(r < L * eps, inner, outer) + S


# Not a pytest test despite the name
test_function.__test__ = False


def test_function_derivative(params, r, direction=None):
    """Radial derivative of :func:`test_function`."""
    r = np.asarray(r, dtype=float)
    omega = _direction(direction)
    lam, eps, L, mu, C_eps, taylor = params
    x = r[..., None] * omega
    dS = omega @ taylor.a + np.einsum("...i,ij,j->...", x, taylor.a_sym, omega)
    inner = -2 * lam * r / (eps**2 * (1 + lam * (r / eps) ** 2)) + 2 * mu * r
    outer = -2 / r
    return np.where(r < L * eps, inner, outer) + dS


test_function_derivative.__test__ = False


def _direction(direction):
    if direction is None:
        return np.array([1.0, 0.0, 0.0, 0.0])
    omega = np.asarray(direction, dtype=float)
    return omega / np.linalg.norm(omega)


def eps2_coefficient(params):
    """Predicted ``ε²`` coefficient of the test-function mass.

    ``(π²/3λ³)[Qp Σ(a_ii/2 + 2a_i²) + Σ(a_i b_i + b_ii/8) - R Qp/24]``.
    """
    t = params.taylor
    bracket = (
        t.Qp * np.sum(np.diag(t.a_sym) / 2 + 2 * t.a**2)
        + np.sum(t.a * t.b + np.diag(t.b_sym) / 8)
        - t.R_scalar * t.Qp / 24
    )
    return math.pi**2 / (3 * params.lam**3) * float(bracket)


class MassExpansion(NamedTuple):
    """Numeric and predicted ``8π² log ∫Q̃e^{4φ_ε}``."""

    numeric: float
    predicted: float
    gap: float
    leading: float
    """Predicted value without the ``ε²`` term"""

    def to_dict(self):
        return self._asdict()


def testfn_mass_expansion(params, delta=1.0, order=None):
    """Compare the mass of the test function with its ``ε``-expansion.

    The numeric side integrates ``Q̃e^{4φ_ε}`` over ``B_{Lε}`` and the annulus
    ``Lε < |x| < δ`` in the flat chart: radial adaptive quadrature with the
    angular integral done by the S³ rule of
    :func:`~paneitz_lab.geometry.s3_quadrature`. The predicted side is
    ``8π²[log 8π² + 4(C_ε + log ε + S₀)] + eps2_coefficient·ε²``.
    """
    lam, eps, L, mu, C_eps, taylor = params
    if taylor.R_scalar != 0:
        raise ValueError(
            "testfn_mass_expansion only covers the flat setting (R_scalar = 0)"
        )
    if not L * eps < delta:
        raise ValueError(f"the inner ball L·eps = {L * eps:g} must lie inside delta = {delta:g}")
    order = int(get_config("quadrature.angular-order", order))
    omega, weights = s3_quadrature(order)

    def angular(y, with_mu):
        x = eps * y * omega
        exponent = 4 * (taylor.S(x) - taylor.S0)
        if with_mu:
            exponent = exponent + 4 * mu * (eps * y) ** 2
        return float(np.sum(weights * taylor.Q(x) * np.exp(exponent)))

    ball = _quad(lambda y: y**3 * (1 + lam * y**2) ** -4 * angular(y, True), 0.0, L)
    annulus = _quad(lambda y: y**-5 * angular(y, False), L, delta / eps)
    glue = L**8 * math.exp(4 * mu * L**2 * eps**2) * (1 + lam * L**2) ** -4
    numeric = K_TOTAL * (
        4 * C_eps + 4 * taylor.S0 + 4 * math.log(eps) + math.log(ball + glue * annulus)
    )
    leading = K_TOTAL * (math.log(K_TOTAL) + 4 * (C_eps + math.log(eps) + taylor.S0))
    predicted = leading + eps2_coefficient(params) * eps**2
    return MassExpansion(numeric, predicted, numeric - predicted, leading)


testfn_mass_expansion.__test__ = False


def lambda_from_green(model, Qt, G, p):
    """Assemble ``Λ_g(Q̃, p)`` from a Green field.

    ``Λ = -16π² log λ - 8π² log 8π² - 16π² S₀ + 2∫QG dV + (8/3 - 16)π²``
    with ``λ = √(3Q̃(p))/12``. The mean of ``G`` is re-imposed to zero.
    """
    key = point_key(model, p)
    Qt = as_field(model, Qt)
    if model.kind == TORUS:
        Qp = float(Qt.data[key])
    else:
        Qp = float(evaluate(model, Qt, [pole_colatitude(key)])[0])
    if not Qp > 0:
        raise ValueError(f"Λ requires Q̃(p) > 0, got Q̃(p) = {Qp:.6g}")
    G = G.on(model)
    G = G - integrate(model, G) / model.volume
    S0 = expansion_fit(model, G, p).S0
    Q = q_field(model).q_field
    qg = integrate(model, Q * G)
    lam = math.sqrt(3 * Qp) / 12
    value = (
        -16 * math.pi**2 * math.log(lam)
        - K_TOTAL * math.log(K_TOTAL)
        - 16 * math.pi**2 * S0
        + 2 * qg
        + (8 / 3 - 16) * math.pi**2
    )
    return LambdaEntry(p, S0, qg, value)


class LambdaEntry(NamedTuple):
    point: object
    S0: float
    QG_integral: float
    lambda_value: float


def lambda_const(model, Qt, p):
    """``Λ_g(Q̃, p)`` with the Green function computed at ``p``."""
    return lambda_from_green(model, Qt, green_function(model, p), p).lambda_value


class LambdaReport(NamedTuple):
    """``Λ`` over a list of points and its first minimizer."""

    entries: list
    argmin: object
    min_value: float

    def to_frame(self):
        return pd.DataFrame(
            {
                "point": [str(np.asarray(e.point).tolist()) for e in self.entries],
                "S0": [e.S0 for e in self.entries],
                "QG_integral": [e.QG_integral for e in self.entries],
                "lambda_value": [e.lambda_value for e in self.entries],
            }
        )

    def to_dict(self):
        return {
            "entries": [
                dict(e._asdict(), point=np.asarray(e.point).tolist()) for e in self.entries
            ],
            "argmin": np.asarray(self.argmin).tolist(),
            "min_value": self.min_value,
        }


def lambda_map(model, Qt, points):
    """Evaluate ``Λ`` at every point (in parallel) and locate the minimum.

    Values within ``1e-10`` (relative) of the minimum count as ties, which go
    to the first point in the list.
    """
    points = list(points)
    if not points:
        raise ValueError("lambda_map needs at least one point")
    entries = ordered_map(
        lambda p: lambda_from_green(model, Qt, green_function(model, p), p), points
    )
    values = np.array([e.lambda_value for e in entries])
    tie = 1e-10 * max(1.0, float(np.max(np.abs(values))))
    index = int(np.flatnonzero(values <= values.min() + tie)[0])
    logger.info("Λ minimum %.12g at point %d of %d", values[index], index, len(points))
    return LambdaReport(entries, points[index], float(values[index]))


class CriterionResult(NamedTuple):
    value: float
    satisfied: bool

    def to_dict(self):
        return self._asdict()


def _check_qp(Qp):
    if not Qp > 0:
        raise ValueError(f"Q̃(p') must be positive, got {Qp}")


def criterion_main2(Qp, gradS, lapS, gradQ, lapQ, R_scalar, dot_gradS_gradQ=None):
    """``Q̃(ΔS + 4|∇S|² - R/18) + 2∇S·∇Q̃ + ΔQ̃/4``, satisfied when positive.

    Examples
    --------
    >>> criterion_main2(3.0, [0, 0, 0, 0], 0.0, [0, 0, 0, 0], 0.0, 6.0)
    CriterionResult(value=-1.0, satisfied=False)
    """
    _check_qp(Qp)
    gradS = np.asarray(gradS, dtype=float)
    if dot_gradS_gradQ is None:
        dot_gradS_gradQ = float(gradS @ np.asarray(gradQ, dtype=float))
    value = (
        Qp * (lapS + 4 * float(gradS @ gradS) - R_scalar / 18)
        + 2 * dot_gradS_gradQ
        + lapQ / 4
    )
    return CriterionResult(float(value), bool(value > 0))


def _diagonal(m):
    m = np.asarray(m, dtype=float)
    return np.diag(m) if m.ndim == 2 else m


def criterion_conformal(a, a_sym, c, c_sym, b, b_sym, Qp):
    """``Σ_i (a_ii+c_ii)/2 + 2(a_i+c_i)² + ((a_i+c_i)b_i + b_ii/8)/Q̃``.

    Second-order data are Hessians (matrices or their diagonals). With
    ``b = 0`` this is the criterion ``Σ(a_ii+c_ii)/2 + 2(a_i+c_i)² > 0``.
    """
    _check_qp(Qp)
    ac = np.asarray(a, dtype=float) + np.asarray(c, dtype=float)
    ac_diag = _diagonal(a_sym) + _diagonal(c_sym)
    b = np.asarray(b, dtype=float)
    value = np.sum(ac_diag / 2 + 2 * ac**2 + (ac * b + _diagonal(b_sym) / 8) / Qp)
    return CriterionResult(float(value), bool(value > 0))


def flat_dictionary(a, a_sym, b, b_sym, Qp):
    """``criterion_main2`` keyword arguments from flat Taylor data (``R = 0``)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return {
        "Qp": Qp,
        "gradS": a,
        "lapS": float(np.sum(_diagonal(a_sym))),
        "gradQ": b,
        "lapQ": float(np.sum(_diagonal(b_sym))),
        "R_scalar": 0.0,
        "dot_gradS_gradQ": float(a @ b),
    }
