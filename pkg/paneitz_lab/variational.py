"""The functionals ``II`` and ``II_ε``, their minimization and diagnostics."""

import logging
import math
import warnings
from typing import NamedTuple

import numpy as np
import pandas as pd
import scipy.integrate

from .blowup import bubble_field, bubble_profile
from .geometry import (
    SPHERE,
    TORUS,
    Field,
    as_field,
    evaluate,
    integrate,
    s3_quadrature,
    torus_displacement,
    zonal_derivative,
)
from .paneitz import (
    K_TOTAL,
    apply_paneitz,
    conformal_q,
    energy_pairing,
    multipliers,
    q_field,
    random_field,
)
from .utils import get_config, ordered_map

logger = logging.getLogger(__name__)


def _check_eps(eps):
    if not 0 <= eps < K_TOTAL:
        raise ValueError(f"eps must satisfy 0 <= eps < 8π² ≈ {K_TOTAL:.6f}, got {eps}")


def total_mass(model, Qt, u):
    """``∫ Q̃ e^{4u} dV_g``, which must be positive."""
    mass = integrate(model, as_field(model, Qt) * np.exp(4 * u.on(model).data))
    if not mass > 0 or not math.isfinite(mass):
        raise ValueError(f"∫ Q̃ e^(4u) dV must be positive and finite, got {mass:.6g}")
    return mass


def II_eps_value(model, Qt, eps, u):
    """``∫uPu + 4(1 - ε/8π²)∫Qu - (8π² - ε) log ∫Q̃e^{4u}``.

    Examples
    --------
    >>> from paneitz_lab.geometry import make_model
    >>> model = make_model("sphere", 16)
    >>> u = Field.constant(model, 0.0)
    >>> abs(II_eps_value(model, 3.0, 1.0, u) + (K_TOTAL - 1) * math.log(K_TOTAL)) < 1e-8
    True
    """
    _check_eps(eps)
    u = u.on(model)
    mass = total_mass(model, Qt, u)
    Q = q_field(model).q_field
    return (
        energy_pairing(model, u)
        + 4 * (1 - eps / K_TOTAL) * integrate(model, Q * u)
        - (K_TOTAL - eps) * math.log(mass)
    )


def II_value(model, Qt, u):
    """``II_g(u) = ∫uPu + 4∫Qu - (∫Q) log ∫Q̃e^{4u}``."""
    return II_eps_value(model, Qt, 0.0, u)


def II_eps_gradient(model, Qt, eps, u):
    """L²(dV_g) gradient ``2Pu + 4(1 - ε/8π²)Q - 4(8π² - ε)Q̃e^{4u}/∫Q̃e^{4u}``.

    Its ``dV_g`` mean vanishes identically.
    """
    _check_eps(eps)
    u = u.on(model)
    Qt = as_field(model, Qt)
    mass = total_mass(model, Qt, u)
    Q = q_field(model).q_field
    values = (
        2 * apply_paneitz(model, u).data
        + 4 * (1 - eps / K_TOTAL) * Q.data
        - 4 * (K_TOTAL - eps) * Qt.data * np.exp(4 * u.data) / mass
    )
    return Field(model, values)


def resolved_gradient(model, g):
    """The part of an ``L²(dV_g)`` gradient seen by the spectral basis.

    On the sphere ``Q̃e^{4u}`` carries degrees above ``L_max`` that no zonal
    step of the iterate can change; they are projected out (in the
    background pairing, so conformal models keep their ``e^{4v}`` weight).
    The result is the gradient of the discretized functional. Torus FFTs
    resolve every grid mode, so ``g`` is returned unchanged there.
    """
    if model.kind == TORUS:
        return g
    weight = np.exp(4 * model.factor) if model.is_conformal else 1.0
    projected = model.to_physical(model.to_spectral(g.data * weight))
    return Field(model, projected / weight)


class MinimizeResult(NamedTuple):
    """Outcome of :func:`minimize_II_eps`."""

    u: Field
    """Mean-zero working iterate"""
    value: float
    grad_norm: float
    """Sup norm of the resolved gradient at ``u``"""
    iterations: int
    eps: float
    mass: float
    """``∫Q̃e^{4u}`` after the normalizing shift (``8π²``)"""
    converged: bool
    shift: float
    """Constant ``log(8π²/∫Q̃e^{4u})/4`` normalizing the mass"""
    Qt: Field
    trace: pd.DataFrame = None

    @property
    def normalized_u(self):
        return self.u + self.shift

    def to_dict(self):
        u = self.normalized_u.data
        return {
            "value": self.value,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "eps": self.eps,
            "mass": self.mass,
            "converged": self.converged,
            "shift": self.shift,
            "max_u": float(np.max(u)),
            "min_u": float(np.min(u)),
        }


def _precondition(model, g, tau):
    """``(P₀ + τ)⁻¹ g / 2`` on the background gradient, projected to ``dV_g`` mean zero.

    The halving matches the ``2Pu`` term of the gradient, so a unit step
    is a Newton step on modes where ``P`` dominates.
    """
    g0 = g.data * np.exp(4 * model.factor) if model.is_conformal else g.data
    inverse = 0.5 / (multipliers(model) + tau)
    coefficients = model.to_spectral(g0) * inverse
    d = Field(model, model.to_physical(coefficients))
    return d - integrate(model, d) / model.volume


def minimize_II_eps(
    model,
    Qt,
    eps,
    tol=None,
    max_iter=None,
    seed=None,
    initial=None,
    record_trace=False,
    stall_iterations=None,
):
    """Minimize ``II_ε`` by preconditioned descent with Armijo backtracking.

    Parameters
    ----------
    model: ManifoldModel
    Qt: Field or float
        Prescribed function ``Q̃``.
    eps: float
        Regularization, ``0 < eps < 8π²``.
    tol: float, optional
        Stop when the sup norm of the resolved gradient (see
        :func:`resolved_gradient`) is at most ``tol``
        (``paneitz-lab.minimize.tol``).
    max_iter: int, optional
        Iteration cap (``paneitz-lab.minimize.max-iter``).
    stall_iterations: int, optional
        Give up when the gradient norm has not improved for this many steps
        (``paneitz-lab.minimize.stall-iterations``).
    seed: int, optional
        Start from a seeded random field of Sobolev norm 0.1 instead of zero.
    initial: Field, optional
        Explicit starting point, overrides ``seed``.
    record_trace: bool
        Keep a per-iteration frame (iter, value, grad_norm, step).

    Notes
    -----
    The search direction is ``(P₀ + τ)⁻¹g/2`` with
    ``τ = preconditioner-shift × smallest non-zero multiplier``. Iterates are
    kept at ``dV_g`` mean zero; the mass normalization ``∫Q̃e^{4u} = 8π²`` is
    a constant shift reported on the result. Exhausting ``max_iter`` or
    stalling returns the last iterate flagged ``converged=False`` and warns.
    """
    if not eps > 0:
        raise ValueError(f"minimize_II_eps requires eps > 0, got {eps}")
    _check_eps(eps)
    tol = float(get_config("minimize.tol", tol))
    max_iter = int(get_config("minimize.max-iter", max_iter))
    stall_iterations = int(get_config("minimize.stall-iterations", stall_iterations))
    armijo = float(get_config("minimize.armijo"))
    mu = multipliers(model)
    tau = float(np.min(mu[mu > 0])) * float(get_config("minimize.preconditioner-shift"))
    Qt = as_field(model, Qt)

    if initial is not None:
        u = initial.on(model)
    elif seed is not None:
        u = random_field(model, seed, amplitude=0.1)
    else:
        u = Field.constant(model, 0.0)
    u = u - integrate(model, u) / model.volume

    def objective(w):
        try:
            return II_eps_value(model, Qt, eps, w)
        except ValueError:
            return math.inf

    value = objective(u)
    rows = []
    converged = False
    iteration = 0
    step = 0.0
    best_norm = math.inf
    since_best = 0
    while True:
        g = resolved_gradient(model, II_eps_gradient(model, Qt, eps, u))
        grad_norm = float(np.max(np.abs(g.data)))
        if record_trace:
            rows.append((iteration, value, grad_norm, step))
        if grad_norm <= tol:
            converged = True
            break
        if iteration >= max_iter:
            break
        if grad_norm < best_norm:
            best_norm, since_best = grad_norm, 0
        else:
            since_best += 1
            if since_best >= stall_iterations:
                logger.info(
                    "Descent stalled at iteration %d: grad_norm=%.3g has not improved "
                    "on %.3g for %d steps",
                    iteration,
                    grad_norm,
                    best_norm,
                    since_best,
                )
                break
        d = _precondition(model, g, tau)
        slope = integrate(model, g * d)
        # Differences below roundoff of the value cannot be resolved
        slack = 64 * np.finfo(float).eps * max(1.0, abs(value))
        step = 1.0
        while step > 1e-16:
            trial = u - step * d
            trial_value = objective(trial)
            if trial_value <= value - armijo * step * slope + slack:
                break
            step /= 2
        else:
            logger.info(
                "Line search stalled at iteration %d (grad_norm=%.3g)", iteration, grad_norm
            )
            break
        u = trial - integrate(model, trial) / model.volume
        value = objective(u)
        iteration += 1
        if iteration % 500 == 0:
            logger.debug(
                "iteration %d: value=%.15g grad_norm=%.3g step=%.3g",
                iteration,
                value,
                grad_norm,
                step,
            )

    mass = total_mass(model, Qt, u)
    shift = math.log(K_TOTAL / mass) / 4
    normalized_mass = total_mass(model, Qt, u + shift)
    if converged:
        logger.info(
            "II_eps minimized (eps=%g) in %d iterations: value=%.15g", eps, iteration, value
        )
    else:
        warnings.warn(
            f"minimize_II_eps did not converge in {iteration} iterations "
            f"(grad_norm={grad_norm:.3g} > tol={tol:g})",
            RuntimeWarning,
        )
    trace = (
        pd.DataFrame(rows, columns=["iter", "value", "grad_norm", "step"])
        if record_trace
        else None
    )
    return MinimizeResult(
        u=u,
        value=II_eps_value(model, Qt, eps, u),
        grad_norm=grad_norm,
        iterations=iteration,
        eps=float(eps),
        mass=normalized_mass,
        converged=converged,
        shift=shift,
        Qt=Qt,
        trace=trace,
    )


def euler_lagrange_residual(model, result):
    """``Pu + 2(1 - ε/8π²)Q - 2(1 - ε/8π²)Q̃e^{4u}`` at the mass-normalized minimizer.

    Only the resolved part is returned (see :func:`resolved_gradient`).
    """
    g = II_eps_gradient(model, result.Qt, result.eps, result.normalized_u)
    return resolved_gradient(model, g) / 2


def eps_ladder(model, Qt, eps_values=(4.0, 2.0, 1.0, 0.5), **kwargs):
    """Minimize ``II_ε`` along a ladder of ``ε`` values, in parallel.

    Returns a frame with one row per ``ε`` in the given order and a
    ``non_increasing`` column that is true when the minimum did not rise
    relative to the previous rung (within ``1e-8`` relative).
    """
    results = ordered_map(
        lambda eps: minimize_II_eps(model, Qt, eps, **kwargs), eps_values
    )
    frame = pd.DataFrame(
        {
            "eps": [r.eps for r in results],
            "value": [r.value for r in results],
            "grad_norm": [r.grad_norm for r in results],
            "iterations": [r.iterations for r in results],
            "converged": [r.converged for r in results],
        }
    )
    previous = frame["value"].shift(1)
    slack = 1e-8 * np.abs(previous)
    frame["non_increasing"] = (frame["value"] <= previous + slack) | previous.isna()
    return frame


def adams_deficit(model, u):
    """``log ∫e^{4u} - (1/8π²)∫uPu - 4ū`` on the background metric."""
    background = model.background
    u = u.on(background)
    mean = integrate(background, u) / background.volume
    exp_integral = integrate(background, u.apply(lambda x: np.exp(4 * x)))
    return math.log(exp_integral) - energy_pairing(background, u) / K_TOTAL - 4 * mean


class AdamsReport(NamedTuple):
    """Empirical scan of the Adams–Fontana deficit."""

    max_deficit: float
    mean_deficit: float
    samples: int
    zero_deficit: float
    """Deficit at ``u = 0``, i.e. ``log Vol``"""
    ladder: pd.DataFrame
    """Deficit along the bubble-pullback family (columns t, deficit)"""
    ladder_spread: float
    bounded: bool

    def to_dict(self):
        out = self._asdict()
        out["ladder"] = self.ladder.to_dict(orient="records")
        return out


ADAMS_BOUNDED_SPREAD = 1.0


def adams_check(model, samples=None, seed=0, band=None, ladder=None):
    """Scan the improved Adams–Fontana inequality.

    Draws ``samples`` random band-limited fields of unit Sobolev norm
    (``paneitz-lab.adams``), records the largest deficit, and evaluates the
    deficit along :func:`~paneitz_lab.blowup.bubble_field` with increasing
    concentration. The family is reported bounded when its spread stays
    below ``ADAMS_BOUNDED_SPREAD``.
    """
    background = model.background
    samples = int(get_config("adams.samples", samples))
    band = int(get_config("adams.band", band))
    ladder = [float(t) for t in get_config("adams.ladder", ladder)]
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")

    children = np.random.SeedSequence(seed).spawn(samples)
    deficits = np.array(
        [adams_deficit(background, random_field(background, s, band=band)) for s in children]
    )
    ladder_deficits = [adams_deficit(background, bubble_field(background, t)) for t in ladder]
    frame = pd.DataFrame({"t": ladder, "deficit": ladder_deficits})
    spread = float(np.ptp(ladder_deficits)) if ladder else 0.0
    bounded = bool(np.all(np.isfinite(ladder_deficits)) and spread <= ADAMS_BOUNDED_SPREAD)
    report = AdamsReport(
        max_deficit=float(np.max(deficits)),
        mean_deficit=float(np.mean(deficits)),
        samples=samples,
        zero_deficit=math.log(background.volume),
        ladder=frame,
        ladder_spread=spread,
        bounded=bounded,
    )
    logger.info(
        "Adams scan on %r: max deficit %.6g over %d samples, ladder spread %.3g",
        background,
        report.max_deficit,
        samples,
        spread,
    )
    return report


class BlowupDiagnostics(NamedTuple):
    """Concentration data of a minimizer."""

    x_max: object
    """Grid point (torus) or pole colatitude (sphere)"""
    m: float
    r_scale: float
    """``e^{-m}``"""
    lam: float
    """``√(3Q̃(x_max))/12``"""
    profile_gap: float
    scaling_table: pd.DataFrame
    """Columns radius, q, integral, slope"""

    def to_dict(self):
        out = self._asdict()
        out["x_max"] = np.asarray(self.x_max).tolist()
        out["scaling_table"] = self.scaling_table.to_dict(orient="records")
        return out


def _sphere_maximum(model, u):
    poles = evaluate(model, u, [0.0, math.pi])
    pole = 0 if poles[0] >= poles[1] else 1
    m = float(poles[pole])
    if np.max(u.data) > m + 1e-10 * (1 + abs(m)):
        raise ValueError(
            "blowup_diagnostics on the sphere needs the maximum at a pole; "
            f"max over nodes {np.max(u.data):.6g} exceeds pole value {m:.6g}"
        )
    return (0.0, math.pi)[pole], m


def _torus_gradient_norm(model, u):
    n = model.resolution
    k = np.fft.fftfreq(n, d=1.0 / n)
    coefficients = np.fft.fftn(u.data)
    squared = np.zeros(model.shape)
    for axis in range(4):
        shape = [1, 1, 1, 1]
        shape[axis] = n
        ik = (2j * math.pi * k).reshape(shape)
        squared += np.fft.ifftn(ik * coefficients).real ** 2
    return np.sqrt(squared)


def _scaling_integrals(model, u, x_max, q_list, radii):
    rows = []
    if model.kind == TORUS:
        grad = _torus_gradient_norm(model, u)
        dist = np.sqrt(sum(d**2 for d in torus_displacement(model, x_max)))
        cell = 1.0 / model.resolution**4
        for q in q_list:
            for r in radii:
                rows.append((r, q, float(np.sum(grad[dist <= r] ** q) * cell)))
    else:
        sign = 1 if x_max == 0.0 else -1
        limit = int(get_config("quadrature.limit"))
        for q in q_list:
            for r in radii:

                def integrand(s):
                    theta = s if sign > 0 else math.pi - s
                    du = zonal_derivative(model, u, [theta])[0]
                    return abs(du) ** q * 2 * math.pi**2 * math.sin(s) ** 3

                value, _ = scipy.integrate.quad(integrand, 0.0, r, limit=limit)
                rows.append((r, q, value))
    table = pd.DataFrame(rows, columns=["radius", "q", "integral"])
    slopes = {}
    for q, group in table.groupby("q"):
        positive = group[group["integral"] > 0]
        if len(positive) >= 2:
            slope, _ = np.polyfit(np.log(positive["radius"]), np.log(positive["integral"]), 1)
        else:
            slope = math.nan
        slopes[q] = slope
    table["slope"] = table["q"].map(slopes)
    return table


def blowup_diagnostics(model, result, q_list=(1.0, 2.0), radii=None, Qt=None):
    """Locate the maximum, rescale around it and compare with the bubble.

    Parameters
    ----------
    model: ManifoldModel
    result: MinimizeResult or Field
        A minimizer (its normalized field and ``Q̃`` are used) or a field, in
        which case ``Qt`` is required.
    q_list: sequence of float
        Exponents for the table of ``∫_{B_r} |∇u|^q``.
    radii: sequence of float, optional
        Ball radii, default six geometric radii from ``2h`` to
        ``max(1/4, 4h)``.

    Notes
    -----
    The profile ``u(exp(r_scale·x)) - m`` is compared with
    ``w = -log(1 + λ|x|²)`` on the unit ball. On the sphere the chart is
    centred at a pole and the maximum must sit there.
    """
    if isinstance(result, MinimizeResult):
        u, Qt = result.normalized_u, result.Qt
        if not result.converged:
            warnings.warn("blowup_diagnostics on a non-converged minimizer", RuntimeWarning)
    else:
        if Qt is None:
            raise ValueError("Qt is required when blowup_diagnostics gets a bare Field")
        u = result
    model = model.background
    u = u.on(model)
    Qt = as_field(model, Qt)
    h = model.spacing
    if radii is None:
        radii = np.geomspace(2 * h, max(0.25, 4 * h), 6)
    radii = np.asarray(radii, dtype=float)
    if np.any(radii < 2 * h):
        raise ValueError(
            f"radii must be at least twice the grid spacing {h:.4g}, got min {np.min(radii):.4g}"
        )

    s = np.linspace(0.0, 1.0, 65)
    if model.kind == SPHERE:
        x_max, m = _sphere_maximum(model, u)
        q_at = float(evaluate(model, Qt, [x_max])[0])
        lam = math.sqrt(3 * q_at) / 12
        r_scale = math.exp(-m)
        theta = r_scale * s if x_max == 0.0 else math.pi - r_scale * s
        profile = evaluate(model, u, theta) - m
        radius = s
    else:
        index = np.unravel_index(np.argmax(u.data), model.shape)
        x_max = np.array(index, dtype=float) / model.resolution
        m = float(u.data[index])
        lam = math.sqrt(3 * float(Qt.data[index])) / 12
        r_scale = math.exp(-m)
        omega, _ = s3_quadrature(2)
        points = (x_max[None, None, :] + r_scale * s[:, None, None] * omega[None, :, :]) % 1.0
        profile = evaluate(model, u, points.reshape(-1, 4)) - m
        radius = np.repeat(s, len(omega))
    w, _ = bubble_profile(lam, radius)
    profile_gap = float(np.max(np.abs(profile - w)))

    table = _scaling_integrals(model, u, x_max, q_list, radii)
    logger.info(
        "Blow-up diagnostics: m=%.6g r_scale=%.3g profile_gap=%.3g", m, r_scale, profile_gap
    )
    return BlowupDiagnostics(x_max, m, r_scale, lam, profile_gap, table)


class ConformalFunctionalCheck(NamedTuple):
    """Both sides of the conformal change formula for ``II``."""

    conformal_value: float
    """``II_g̃(u)`` assembled from ``P_g̃`` and ``Q_g̃``"""
    background_value: float
    """``II_g(u + v)``"""
    pairing: float
    """``∫ v P_g v dV_g``"""
    curvature: float
    """``4 ∫ Q_g v dV_g``, zero for normalized factors"""

    @property
    def gap(self):
        return self.conformal_value - (self.background_value - self.pairing - self.curvature)

    def to_dict(self):
        out = self._asdict()
        out["gap"] = self.gap
        return out


def conformal_functional_check(model, Qt, u, v):
    """Evaluate ``II_g̃(u)`` and ``II_g(u+v) - ∫vPv - 4∫Qv`` for ``g̃ = e^{2v}g``."""
    background = model.background
    conformal = background.with_factor(v)
    v = Field(background, conformal.factor)
    u = u.on(background)
    Qt = as_field(background, Qt)

    pu = apply_paneitz(conformal, u)
    q_conformal = conformal_q(background, v)
    mass = total_mass(conformal, Qt, u)
    conformal_value = (
        integrate(conformal, u * pu)
        + 4 * integrate(conformal, q_conformal * u)
        - K_TOTAL * math.log(mass)
    )
    Q = q_field(background).q_field
    return ConformalFunctionalCheck(
        conformal_value=conformal_value,
        background_value=II_value(background, Qt, u + v),
        pairing=integrate(background, v * apply_paneitz(background, v)),
        curvature=4 * integrate(background, Q * v),
    )
