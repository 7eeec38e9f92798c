"""Green function of the Paneitz operator and its local expansion.

``G_p`` solves ``P_g G_p + 2 Q_g = 16π² δ_p`` with ``∫ G_p dV_g = 0`` and
behaves like ``-2 log r + S₀ + a·x + xᵀ a_sym x + O(r^{2+α})`` near ``p``.
"""

import logging
import math
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.special
import toolz

from .geometry import (
    SPHERE,
    TORUS,
    Field,
    evaluate,
    geodesic_distance,
    integrate,
    make_model,
    s3_quadrature,
    sphere_pole,
    torus_displacement,
    torus_grid_index,
    zonal_basis,
)
from .paneitz import multipliers, q_field
from .utils import get_config

logger = logging.getLogger(__name__)

MIN_RADIAL_SAMPLES = 8
_QUADRATIC_PAIRS = [(i, j) for i in range(4) for j in range(i, 4)]


def point_key(model, p):
    """Hashable form of a source point: grid index (torus) or ``±1`` pole (sphere)."""
    if model.kind == TORUS:
        return torus_grid_index(model, p)
    return sphere_pole(p)


def pole_colatitude(key):
    return 0.0 if key > 0 else math.pi


def _delta_coefficients(background, key):
    if background.kind == TORUS:
        spike = np.zeros(background.shape)
        spike[key] = 1.0
        return np.fft.fftn(spike)
    x = np.array([float(key)])
    return zonal_basis(background.resolution, x)[0]


def _green_coefficients(background, key, v=None):
    """Spectral solve of ``P₀ G = 16π² δ_p - 2 Q₀ - P₀ v``."""
    mu = multipliers(background)
    q0 = q_field(background).q_field
    source = 16 * math.pi**2 * _delta_coefficients(background, key)
    source = source - 2 * q0.coefficients
    if v is not None:
        source = source - mu * v.coefficients
    kernel = mu == 0
    leftover = np.max(np.abs(source[kernel]))
    if leftover > 1e-8 * 16 * math.pi**2:
        raise ValueError(
            f"Green source has non-zero mean ({leftover:.3g}); the model volume "
            "and Q-curvature are inconsistent"
        )
    return np.divide(source, mu, out=np.zeros_like(source), where=~kernel)


def _green_key(args, kwargs):
    model, key = args
    return model.token, key


def _green(model, key):
    background = model.background
    v = Field(background, model.factor) if model.is_conformal else None
    coefficients = _green_coefficients(background, key, v)
    G = Field.from_coefficients(model, coefficients).physical()
    if model.is_conformal:
        G = G - integrate(model, G) / model.volume
    logger.debug("Computed Green function of %r at %s", model, key)
    return G


_green = toolz.memoize(_green, key=_green_key)


def green_function(model, p):
    """Green function ``G_p`` on the model metric, normalized to mean zero.

    Parameters
    ----------
    model: ManifoldModel
    p: point
        Torus: four coordinates of a grid point in ``[0, 1)⁴``. Sphere: a pole
        of the declared axis, colatitude ``0``/``π`` or ``"north"``/``"south"``.

    Notes
    -----
    The Dirac mass is represented by its full spectral projection, so the
    source ``16π² δ_p - 2Q`` has exactly zero mean. On a conformal model the
    equation is pushed to the background, ``P₀ G̃ = 16π² δ_p - P₀ v - 2 Q₀``.
    Results are cached per ``(model, p)``.

    Examples
    --------
    >>> model = make_model("torus", 16)
    >>> G = green_function(model, (0, 0, 0, 0))
    >>> float(round(G.coefficients[1, 0, 0, 0].real * math.pi**2, 12))
    1.0
    """
    return _green(model, point_key(model, p))


class GreenExpansion(NamedTuple):
    """Fitted local expansion ``G = -2 log r + S₀ + a·x + xᵀ a_sym x``."""

    S0: float
    a: np.ndarray
    a_sym: np.ndarray
    """Quadratic-form matrix; the Hessian of the regular part is ``2 * a_sym``"""
    window: tuple
    residual: float
    """RMS misfit over the window samples"""
    log_coefficient: float = None
    """Fitted coefficient of ``log r`` when it was a free regressor"""

    @property
    def hessian(self):
        return 2 * self.a_sym

    def to_dict(self):
        out = {
            "S0": self.S0,
            "a": self.a.tolist(),
            "a_sym": [float(self.a_sym[i, j]) for i, j in _QUADRATIC_PAIRS],
            "window": list(self.window),
            "residual": self.residual,
        }
        if self.log_coefficient is not None:
            out["log_coefficient"] = self.log_coefficient
        return out


def default_window(model):
    if model.kind == TORUS:
        return tuple(get_config("green.torus-window"))
    return tuple(get_config("green.sphere-window"))


def _window_samples(model, G, key, window, directions):
    """Local coordinates ``x`` (m, 4), distances and Green values in the window."""
    r_min, r_max = window
    if model.kind == TORUS:
        displacement = torus_displacement(model, key_to_point(model, key))
        r = np.sqrt(sum(d**2 for d in displacement))
        mask = (r >= r_min) & (r <= r_max)
        x = np.stack([np.broadcast_to(d, model.shape)[mask] for d in displacement], -1)
        return x, r[mask], G.data[mask]

    r = geodesic_distance(model, pole_colatitude(key))
    mask = (r >= r_min) & (r <= r_max)
    omega, _ = s3_quadrature(directions)
    x = (r[mask][:, None, None] * omega[None, :, :]).reshape(-1, 4)
    values = np.repeat(G.data[mask], len(omega))
    radii = np.repeat(r[mask], len(omega))
    return x, radii, values


def key_to_point(model, key):
    if model.kind == TORUS:
        return np.asarray(key, dtype=float) / model.resolution
    return pole_colatitude(key)


def _fit_samples(x, r, values, window, log_term):
    columns = [np.ones_like(r)]
    columns += [x[:, i] for i in range(4)]
    columns += [x[:, i] * x[:, j] for i, j in _QUADRATIC_PAIRS]
    if log_term:
        # Higher powers of r are nearly collinear with log r on a narrow window
        columns.append(np.log(r))
        target = values
    else:
        columns += [r**4, r**6, np.sum(x**4, axis=1)]
        target = values + 2 * np.log(r)
    A = np.stack(columns, axis=-1)
    coef, *_ = scipy.linalg.lstsq(A, target)
    residual = float(np.sqrt(np.mean((A @ coef - target) ** 2)))

    a_sym = np.zeros((4, 4))
    for c, (i, j) in zip(coef[5:15], _QUADRATIC_PAIRS):
        if i == j:
            a_sym[i, i] = c
        else:
            a_sym[i, j] = a_sym[j, i] = c / 2
    return GreenExpansion(
        S0=float(coef[0]),
        a=np.asarray(coef[1:5]),
        a_sym=a_sym,
        window=tuple(window),
        residual=residual,
        log_coefficient=float(coef[15]) if log_term else None,
    )


def expansion_fit(model, G, p, window=None, log_term=False, directions=None):
    """Least-squares fit of the local expansion of ``G`` around ``p``.

    Regressors are ``1``, ``x_i``, ``x_i x_j`` (``i <= j``) for
    ``G + 2 log r``, plus ``r⁴``, ``r⁶`` and ``Σ x_i⁴`` to absorb the
    remainder. With ``log_term`` the target is ``G`` itself and ``log r``
    replaces the remainder columns. Sphere samples are spread over the S³
    directions of :func:`~paneitz_lab.geometry.s3_quadrature` at each node
    distance.

    Parameters
    ----------
    model: ManifoldModel
    G: Field
    p: point
    window: (float, float), optional
        Radii ``(r_min, r_max)``, default from ``paneitz-lab.green``.
    log_term: bool
        Fit the ``log r`` coefficient instead of fixing it to ``-2``.
    directions: int, optional
        Order of the S³ rule used on the sphere.
    """
    key = point_key(model, p)
    window = default_window(model) if window is None else tuple(float(w) for w in window)
    r_min, r_max = window
    spacing = model.spacing
    reach = 0.25 if model.kind == TORUS else math.pi / 4
    if r_min < 2 * spacing * (1 - 1e-12):
        raise ValueError(
            f"window r_min={r_min:g} is below twice the grid spacing {spacing:g}"
        )
    if r_max > reach * (1 + 1e-12) or r_max <= r_min:
        raise ValueError(
            f"window ({r_min:g}, {r_max:g}) must satisfy r_min < r_max <= {reach:g}"
        )
    directions = int(get_config("green.sphere-directions", directions))

    x, r, values = _window_samples(model, G.on(model), key, window, directions)
    n_radii = np.unique(np.round(r, 12)).size
    if n_radii < MIN_RADIAL_SAMPLES:
        raise ValueError(
            f"window ({r_min:g}, {r_max:g}) holds {n_radii} radial samples; "
            f"at least {MIN_RADIAL_SAMPLES} are needed"
        )

    fit = _fit_samples(x, r, values, window, log_term)
    logger.debug("Expansion fit on %r: S0=%.12g residual=%.3g", model, fit.S0, fit.residual)
    return fit


class ConformalGreenReport(NamedTuple):
    """Comparison of ``G̃`` with ``G - v`` for ``g̃ = e^{2v} g₀``."""

    green_gap: float
    """``‖G̃ - (G - v) - c‖∞``"""
    constant: float
    """Normalization constant ``c`` in ``G̃ = G - v + c``"""
    S0: float
    S0_conformal: float
    v_at_p: float
    s0_gap: float
    """``S̃₀ - (S₀ + v(p)) - c``"""

    def to_dict(self):
        return self._asdict()


def green_conformal_check(model, v, p, window=None):
    """Check ``G̃ = G - v`` (mod constants) and ``S̃₀ = S₀ + v(p)`` on the sphere.

    ``v`` is a zonal field or a callable accepted by
    :func:`~paneitz_lab.geometry.make_model`; non-zonal callables raise.
    ``S̃₀`` is fitted against ``-2 log d_g̃`` on the same colatitude nodes
    as ``S₀``, so both fits see the same series truncation error.
    """
    if model.kind != SPHERE:
        raise ValueError("green_conformal_check requires a sphere model")
    background = model.background
    conformal = make_model(
        SPHERE, background.resolution, conformal_factor=v, nodes=background.nodes
    )
    v = Field(background, conformal.factor)
    G = green_function(background, p)
    Gt = green_function(conformal, p)

    diff = Gt.data - (G.data - v.data)
    constant = integrate(conformal, Field(background, diff)) / conformal.volume
    green_gap = float(np.max(np.abs(diff - constant)))

    key = point_key(background, p)
    fit = expansion_fit(background, G, p, window=window)
    S0 = fit.S0

    r_min, r_max = fit.window
    pole = pole_colatitude(key)
    r0 = geodesic_distance(background, pole)
    inside = (r0 >= r_min) & (r0 <= r_max)
    distances = geodesic_distance(conformal, pole)[inside]
    directions = int(get_config("green.sphere-directions"))
    omega, _ = s3_quadrature(directions)
    x = (distances[:, None, None] * omega[None, :, :]).reshape(-1, 4)
    S0_conformal = _fit_samples(
        x,
        np.repeat(distances, len(omega)),
        np.repeat(Gt.data[inside], len(omega)),
        (float(distances.min()), float(distances.max())),
        log_term=False,
    ).S0
    v_at_p = float(evaluate(background, v, [pole_colatitude(key)])[0])
    s0_gap = S0_conformal - S0 - v_at_p - constant
    logger.info(
        "Conformal Green check: green_gap=%.3g constant=%.12g s0_gap=%.3g",
        green_gap,
        constant,
        s0_gap,
    )
    return ConformalGreenReport(green_gap, constant, S0, S0_conformal, v_at_p, s0_gap)


def _lattice(radius):
    axis = np.arange(-radius, radius + 1)
    return np.stack(np.meshgrid(axis, axis, axis, axis, indexing="ij"), -1).reshape(-1, 4)


def _fourier_tail(x):
    """``(1/π²) Σ_{k≠0} cos(2πk·x) e^{-|k|²}(1+|k|²)/|k|⁴`` with ``|k_i| <= 6``."""
    k = _lattice(6)
    k2 = np.sum(k**2, axis=1)
    k, k2 = k[k2 > 0], k2[k2 > 0]
    weight = np.exp(-k2) * (1 + k2) / k2**2
    phase = 2 * math.pi * (np.atleast_2d(x) @ k.T)
    return np.cos(phase) @ weight / math.pi**2


def torus_green_ewald(x):
    """Torus Green function at the origin source, by Ewald summation.

    A real-space exponential-integral sum over lattice images with
    ``|m_i| <= 2`` plus a Gaussian-damped Fourier sum; independent of the
    grid used by :func:`green_function`.

    Parameters
    ----------
    x: array of shape (m, 4) or (4,)
        Points not on the lattice ``ℤ⁴``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = _lattice(2)
    d2 = np.sum((x[:, None, :] - m[None, :, :]) ** 2, axis=-1)
    if np.any(d2 == 0):
        raise ValueError("torus_green_ewald is singular at lattice points")
    real = np.sum(scipy.special.exp1(math.pi**2 * d2), axis=1)
    return real - 1 / (2 * math.pi**2) + _fourier_tail(x)


def torus_s0_ewald():
    """Finite part ``S₀ = lim (G + 2 log r)`` of the torus Green function."""
    m = _lattice(2)
    m2 = np.sum(m**2, axis=1)
    images = np.sum(scipy.special.exp1(math.pi**2 * m2[m2 > 0]))
    return float(
        -np.euler_gamma
        - math.log(math.pi**2)
        + images
        - 1 / (2 * math.pi**2)
        + _fourier_tail(np.zeros(4))[0]
    )


def green_truncation_estimate(model, p, window=None):
    """Sup difference on the fit window between resolutions ``N`` and ``N/2``."""
    background = model.background
    coarse_resolution = background.resolution // 2
    if coarse_resolution < 8:
        raise ValueError(
            f"resolution {background.resolution} is too small to halve"
        )
    window = default_window(background) if window is None else tuple(window)
    key = point_key(background, p)
    coarse = make_model(background.kind, coarse_resolution)
    G = green_function(background, p)
    if background.kind == SPHERE:
        theta = background.colatitudes
        r = geodesic_distance(background, pole_colatitude(key))
        mask = (r >= window[0]) & (r <= window[1])
        G_coarse = green_function(coarse, pole_colatitude(key))
        fine_values = G.data[mask]
        coarse_values = evaluate(coarse, G_coarse, theta[mask])
    else:
        G_coarse = green_function(coarse, key_to_point(background, key))
        fine_on_coarse = G.data[::2, ::2, ::2, ::2]
        r = geodesic_distance(coarse, key_to_point(background, key))
        mask = (r >= window[0]) & (r <= window[1])
        fine_values = fine_on_coarse[mask]
        coarse_values = G_coarse.data[mask]
    return float(np.max(np.abs(fine_values - coarse_values)))
