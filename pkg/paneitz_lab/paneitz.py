"""The Paneitz operator on the model backgrounds.

On both backgrounds ``P`` is diagonal in the spectral basis. Conformal
metrics ``g̃ = e^{2v} g₀`` are handled only through covariance,
``P_g̃ = e^{-4v} P_{g₀}`` and ``2 Q_g̃ = e^{-4v}(P_{g₀} v + 2 Q_{g₀})``.
"""

import logging
import math
from typing import NamedTuple

import numpy as np
import pandas as pd
import toolz

from .geometry import SPHERE, TORUS, Field, integrate, torus_k2

logger = logging.getLogger(__name__)

K_TOTAL = 8 * math.pi**2
"""Total Q-curvature ``∫Q dV`` of both model backgrounds"""

SPHERE_Q = 3.0
TORUS_Q = K_TOTAL


def paneitz_multiplier(model, mode):
    """Eigenvalue of the background Paneitz operator on one spectral mode.

    Parameters
    ----------
    model: ManifoldModel
    mode: sequence of 4 ints (torus) or int (sphere degree ``ℓ``)

    Examples
    --------
    >>> from paneitz_lab.geometry import make_model
    >>> round(paneitz_multiplier(make_model("torus", 8), (1, 0, 0, 0)), 3)
    1558.545
    >>> paneitz_multiplier(make_model("sphere", 8), 2)
    120.0
    """
    if model.kind == TORUS:
        k = np.asarray(mode, dtype=float)
        if k.shape != (4,):
            raise ValueError(f"torus modes are 4-vectors, got {mode!r}")
        k2 = float(k @ k)
        return 16 * math.pi**4 * k2**2
    ell = int(mode)
    if ell < 0 or ell != mode:
        raise ValueError(f"sphere modes are degrees ℓ >= 0, got {mode!r}")
    return float(ell * (ell + 1) * (ell + 2) * (ell + 3))


@toolz.memoize
def _torus_multipliers(n):
    mu = 16 * math.pi**4 * torus_k2(n) ** 2
    mu.setflags(write=False)
    return mu


@toolz.memoize
def _sphere_multipliers(l_max):
    ell = np.arange(l_max + 1, dtype=float)
    mu = ell * (ell + 1) * (ell + 2) * (ell + 3)
    mu.setflags(write=False)
    return mu


def multipliers(model):
    """All background multipliers, shaped like the spectral coefficients."""
    if model.kind == TORUS:
        return _torus_multipliers(model.resolution)
    return _sphere_multipliers(model.resolution)


def laplace_eigenvalues(model):
    """Eigenvalues of ``-Δ`` on the spectral modes."""
    if model.kind == TORUS:
        return 4 * math.pi**2 * torus_k2(model.resolution)
    ell = np.arange(model.resolution + 1, dtype=float)
    return ell * (ell + 3)


class SpectralMultiplier(NamedTuple):
    """Exportable table of Paneitz eigenvalues."""

    kind: str
    resolution: int
    modes: list
    """Torus wavevectors or sphere degrees"""
    mu: np.ndarray

    def to_frame(self):
        if self.kind == TORUS:
            mode = [" ".join(str(int(c)) for c in k) for k in self.modes]
        else:
            mode = [int(ell) for ell in self.modes]
        return pd.DataFrame({"mode": mode, "mu": self.mu})

    def to_dict(self):
        return {
            "kind": self.kind,
            "resolution": self.resolution,
            "modes": [np.asarray(m).tolist() for m in self.modes],
            "mu": self.mu.tolist(),
        }


def multiplier_table(model, max_mode=None):
    """Tabulate multipliers for modes up to ``max_mode``.

    On the torus ``max_mode`` bounds ``max|k_i|`` (default 2) and modes are
    listed by increasing ``|k|²``; on the sphere it bounds the degree
    (default ``L_max``).
    """
    if model.kind == SPHERE:
        top = model.resolution if max_mode is None else min(int(max_mode), model.resolution)
        modes = list(range(top + 1))
    else:
        top = 2 if max_mode is None else int(max_mode)
        if top > model.resolution // 2:
            raise ValueError(
                f"max_mode {top} exceeds the Nyquist index of {model!r}"
            )
        axis = np.arange(-top, top + 1)
        grid = np.stack(np.meshgrid(axis, axis, axis, axis, indexing="ij"), -1)
        grid = grid.reshape(-1, 4)
        order = np.lexsort(grid.T[::-1].tolist() + [np.sum(grid**2, axis=1)])
        modes = [tuple(int(c) for c in k) for k in grid[order]]
    mu = np.array([paneitz_multiplier(model, m) for m in modes])
    return SpectralMultiplier(model.kind, model.resolution, modes, mu)


def _spectral_apply(model, u, factor):
    coefficients = u.on(model.background).coefficients * factor
    return model.to_physical(coefficients)


def apply_paneitz(model, u):
    """``P_g u`` on the model metric.

    For a conformal model this is ``e^{-4v} P_{g₀} u``.

    Examples
    --------
    >>> from paneitz_lab.geometry import make_model
    >>> model = make_model("sphere", 16)
    >>> bool(np.max(np.abs(apply_paneitz(model, Field.constant(model, 2.0)).data)) < 1e-6)
    True
    """
    if not isinstance(u, Field):
        raise TypeError(f"expected a Field, got {type(u).__name__}")
    values = _spectral_apply(model, u, multipliers(model))
    if model.is_conformal:
        values = values * np.exp(-4 * model.factor)
    return Field(model, values)


def _check_solvable(model, f):
    total = integrate(model, f)
    scale = math.sqrt(model.volume * integrate(model, f * f))
    if scale == 0.0:
        return
    if abs(total) > 1e-8 * scale:
        raise ValueError(
            "solve_paneitz requires ∫ f dV = 0 (constants are not in the range "
            f"of P); got ∫ f dV = {total:.6g}"
        )


def solve_paneitz(model, f):
    """The unique ``u`` with ``P_g u = f`` and ``∫ u dV_g = 0``.

    Raises
    ------
    ValueError
        If ``f`` does not integrate to zero.
    """
    if not isinstance(f, Field):
        raise TypeError(f"expected a Field, got {type(f).__name__}")
    _check_solvable(model, f)
    rhs = f.on(model.background)
    if model.is_conformal:
        rhs = rhs * np.exp(4 * model.factor)
    mu = multipliers(model)
    inverse = np.divide(1.0, mu, out=np.zeros_like(mu), where=mu > 0)
    values = _spectral_apply(model.background, rhs, inverse)
    u = Field(model, values)
    if model.is_conformal:
        u = u - integrate(model, u) / model.volume
    return u


class QData(NamedTuple):
    """Q-curvature of a model metric."""

    q_field: Field
    k_total: float
    """``∫ Q dV``, conformally invariant"""


def q_field(model):
    """Q-curvature of the model.

    The torus uses the effective constant ``Q ≡ 8π²`` so that ``2Q = 16π²``
    with unit volume. Conformal models go through :func:`conformal_q`.
    """
    if model.is_conformal:
        q = conformal_q(model.background, Field(model.background, model.factor))
        return QData(q.on(model), integrate(model, q))
    value = TORUS_Q if model.kind == TORUS else SPHERE_Q
    return QData(Field.constant(model, value), value * model.volume)


def conformal_q(model, v):
    """``Q_g̃`` of ``g̃ = e^{2v} g₀``, returned on the conformal model."""
    background = model.background
    v = v.on(background)
    q0 = q_field(background).q_field
    pv = apply_paneitz(background, v)
    values = np.exp(-4 * v.data) * (pv.data + 2 * q0.data) / 2
    return Field(background.with_factor(v), values)


def energy_pairing(model, u):
    """``∫ ⟨u, u⟩ dV_g = ∫ u P_g u dV_g``, conformally invariant and ``≥ 0``."""
    return _spectral_quadratic(model, u, multipliers(model))


def dirichlet_energy(model, u):
    """``∫ |∇u|² dV`` on the background."""
    return _spectral_quadratic(model, u, laplace_eigenvalues(model))


def _spectral_quadratic(model, u, weights):
    c = u.on(model.background).coefficients
    return float(np.sum(weights * np.abs(c) ** 2))


def coercivity_constant(model):
    """``min μ / λ_Δ`` over non-constant modes: ``4π²`` (torus) or ``6`` (sphere)."""
    mu = multipliers(model)
    lap = laplace_eigenvalues(model)
    nonconstant = lap > 0
    return float(np.min(mu[nonconstant] / lap[nonconstant]))


def sobolev_norm(model, u):
    """``(∫u² + ∫uPu)^{1/2}`` on the background."""
    return math.sqrt(_spectral_quadratic(model, u, 1.0 + multipliers(model)))


def random_field(model, seed, band=8, amplitude=1.0):
    """Seeded band-limited field with ``sobolev_norm == amplitude``.

    Torus modes with ``0 < |k|² <= band``; sphere degrees ``1..band``. The
    field has zero background mean.
    """
    rng = np.random.default_rng(seed)
    background = model.background
    if model.kind == TORUS:
        k2 = torus_k2(model.resolution)
        mask = (k2 > 0) & (k2 <= band)
        noise = rng.standard_normal(model.shape)
        values = np.fft.ifftn(np.fft.fftn(noise) * mask).real
        u = Field(background, values)
    else:
        if band > model.resolution:
            raise ValueError(
                f"band {band} exceeds the maximal degree {model.resolution}"
            )
        coefficients = np.zeros(model.spectral_shape)
        coefficients[1 : band + 1] = rng.standard_normal(band)
        u = Field.from_coefficients(background, coefficients).physical()
    norm = sobolev_norm(background, u)
    return Field(model, u.data * (amplitude / norm))
