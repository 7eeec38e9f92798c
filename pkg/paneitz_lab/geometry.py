"""Model 4-manifolds, fields on them, and quadrature.

Two exactly known backgrounds are supported:

* ``"torus"``: the unit flat torus T⁴ = ℝ⁴/ℤ⁴ sampled on a uniform ``n⁴`` grid,
  with the discrete Fourier modes as spectral basis.
* ``"sphere"``: the round S⁴ restricted to zonal fields (functions of the
  colatitude θ from the north pole), sampled at Gauss–Jacobi nodes in
  ``x = cos θ`` and expanded in orthonormal Gegenbauer ``C_ℓ^{3/2}`` functions.

Either background may carry a conformal factor ``v`` (metric ``e^{2v} g₀``);
integration then uses the volume element ``e^{4v} dV₀``.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.ndimage
import scipy.special
import toolz

from dask.base import tokenize

logger = logging.getLogger(__name__)

TORUS = "torus"
SPHERE = "sphere"
KINDS = (TORUS, SPHERE)
PHYSICAL = "physical"
SPECTRAL = "spectral"

MIN_RESOLUTION = 8
S3_AREA = 2 * math.pi**2
SPHERE_VOLUME = 8 * math.pi**2 / 3

# Directions in S³ on which sphere factors are sampled to check zonality
_ZONAL_DIRECTIONS = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -1.0],
        [0.6, 0.8, 0.0, 0.0],
        [0.0, -0.28, 0.96, 0.0],
        [0.5, 0.5, 0.5, 0.5],
        [-0.5, 0.5, -0.5, 0.5],
    ]
)


@toolz.memoize
def sphere_quadrature(nodes):
    """Gauss–Jacobi(1, 1) nodes in ``x = cos θ`` with S⁴ volume weights.

    The Jacobi weight ``(1 - x²)`` times ``dx = sin θ dθ`` is the ``sin³θ``
    density of S⁴, so ``sum(weights * f(x))`` integrates zonal ``f`` exactly
    for polynomials of degree ``< 2 * nodes``. Nodes are returned in order of
    increasing colatitude.
    """
    x, w = scipy.special.roots_jacobi(nodes, 1.0, 1.0)
    return x[::-1].copy(), S3_AREA * w[::-1]


def zonal_norms(l_max):
    """L²(S⁴) norms of ``C_ℓ^{3/2}(cos θ)`` for ``ℓ = 0..l_max``."""
    ell = np.arange(l_max + 1, dtype=float)
    return np.sqrt(S3_AREA * (ell + 1) * (ell + 2) / (ell + 1.5))


def zonal_basis(l_max, x):
    """Orthonormal zonal functions ``φ_ℓ(x)``, shape ``(len(x), l_max + 1)``."""
    x = np.asarray(x, dtype=float)
    ell = np.arange(l_max + 1)
    values = scipy.special.eval_gegenbauer(ell[None, :], 1.5, x[..., None])
    return values / zonal_norms(l_max)


def zonal_basis_derivative(l_max, x):
    """``dφ_ℓ/dx`` using ``d/dx C_ℓ^{3/2} = 3 C_{ℓ-1}^{5/2}``."""
    x = np.asarray(x, dtype=float)
    ell = np.arange(l_max + 1)
    lower = np.maximum(ell - 1, 0)
    values = 3.0 * scipy.special.eval_gegenbauer(lower[None, :], 2.5, x[..., None])
    values[..., 0] = 0.0
    return values / zonal_norms(l_max)


@toolz.memoize
def _sphere_basis(l_max, nodes):
    x, _ = sphere_quadrature(nodes)
    basis = zonal_basis(l_max, x)
    basis.setflags(write=False)
    return basis


@toolz.memoize
def torus_wavenumbers(n):
    """Integer wavenumbers in FFT order."""
    return np.fft.fftfreq(n, d=1.0 / n)


@toolz.memoize
def torus_k2(n):
    """``|k|²`` on the full ``n⁴`` spectral grid."""
    k = torus_wavenumbers(n)
    k_axes = np.meshgrid(k, k, k, k, indexing="ij", sparse=True)
    k2 = sum(ki**2 for ki in k_axes)
    k2.setflags(write=False)
    return k2


@toolz.memoize
def s3_quadrature(order):
    """Product Gauss rule on the unit 3-sphere.

    Uses Gauss–Chebyshev (second kind) in ``x₁ = cos ψ``, Gauss–Legendre in
    the second polar angle and the trapezoid rule with ``2 * order`` points in
    the azimuth. Exact for polynomials of degree ``< 2 * order``.

    Returns
    -------
    points: ndarray
        ``(order * order * 2 * order, 4)`` unit vectors.
    weights: ndarray
        Quadrature weights summing to ``2π²``.
    """
    t, wt = scipy.special.roots_chebyu(order)
    s, ws = scipy.special.roots_legendre(order)
    n_phi = 2 * order
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    wphi = np.full(n_phi, 2 * math.pi / n_phi)

    T, S, PHI = np.meshgrid(t, s, phi, indexing="ij")
    sin_psi = np.sqrt(1 - T**2)
    sin_theta = np.sqrt(1 - S**2)
    points = np.stack(
        [
            T,
            sin_psi * S,
            sin_psi * sin_theta * np.cos(PHI),
            sin_psi * sin_theta * np.sin(PHI),
        ],
        axis=-1,
    ).reshape(-1, 4)
    weights = (wt[:, None, None] * ws[None, :, None] * wphi[None, None, :]).ravel()
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def s3_moment(multi_index):
    """Normalized moment ``(1/2π²) ∫_{S³} x^{i₁} ⋯ x^{i_k} ds``.

    Parameters
    ----------
    multi_index: sequence of int
        Axis indices in ``0..3``, at most four of them.

    Examples
    --------
    >>> round(s3_moment([0, 0]), 12)
    0.25
    >>> round(s3_moment([1, 1, 2, 2]) * 24, 12)
    1.0
    """
    multi_index = [int(i) for i in multi_index]
    if len(multi_index) > 4:
        raise ValueError(
            f"s3_moment supports at most 4 indices, got {len(multi_index)}"
        )
    if any(i < 0 or i > 3 for i in multi_index):
        raise ValueError(f"axis indices must lie in 0..3, got {multi_index}")
    points, weights = s3_quadrature(4)
    integrand = np.prod(points[:, multi_index], axis=1)
    return float(np.sum(weights * integrand) / S3_AREA)


@dataclass(frozen=True, eq=False)
class ManifoldModel:
    """A discretized background (torus or sphere) with optional conformal factor.

    Build instances with :func:`make_model`. Instances are immutable and can
    be shared between threads; derived tables are computed lazily once.
    """

    kind: str
    resolution: int
    """Grid points per axis (torus) or maximal degree ``L_max`` (sphere)"""
    nodes: int = 0
    """Colatitude node count (sphere only)"""
    factor: np.ndarray = None
    """Physical values of the conformal factor ``v``, or ``None``"""

    @property
    def is_conformal(self):
        return self.factor is not None

    @property
    def sample_key(self):
        return (self.kind, self.resolution, self.nodes)

    @cached_property
    def token(self):
        return tokenize(self.kind, self.resolution, self.nodes, self.factor)

    @cached_property
    def background(self):
        if not self.is_conformal:
            return self
        return ManifoldModel(self.kind, self.resolution, self.nodes)

    @property
    def shape(self):
        if self.kind == TORUS:
            return (self.resolution,) * 4
        return (self.nodes,)

    @property
    def spectral_shape(self):
        if self.kind == TORUS:
            return (self.resolution,) * 4
        return (self.resolution + 1,)

    @property
    def spacing(self):
        """Grid spacing: ``1/n`` on the torus, mean colatitude gap on the sphere."""
        if self.kind == TORUS:
            return 1.0 / self.resolution
        return math.pi / self.nodes

    @cached_property
    def weights(self):
        """Background quadrature weights (a scalar on the torus)."""
        if self.kind == TORUS:
            return 1.0 / self.resolution**4
        return sphere_quadrature(self.nodes)[1]

    @cached_property
    def measure(self):
        """Quadrature weights of ``dV_g``, including ``e^{4v}``."""
        if not self.is_conformal:
            return self.weights
        return self.weights * np.exp(4 * self.factor)

    @cached_property
    def volume(self):
        if self.kind == TORUS and not self.is_conformal:
            return 1.0
        return float(np.sum(np.broadcast_to(self.measure, self.shape)))

    @cached_property
    def colatitudes(self):
        if self.kind != SPHERE:
            raise ValueError("colatitudes are only defined on the sphere")
        x, _ = sphere_quadrature(self.nodes)
        return np.arccos(x)

    @cached_property
    def coordinates(self):
        """Sparse broadcastable grid coordinates ``j/n`` (torus only)."""
        if self.kind != TORUS:
            raise ValueError("grid coordinates are only defined on the torus")
        axis = np.arange(self.resolution) / self.resolution
        return tuple(np.meshgrid(axis, axis, axis, axis, indexing="ij", sparse=True))

    @property
    def basis(self):
        return _sphere_basis(self.resolution, self.nodes)

    def to_spectral(self, values):
        """Background spectral coefficients of physical samples."""
        if self.kind == TORUS:
            return np.fft.fftn(values) / self.resolution**4
        return self.basis.T @ (self.weights * values)

    def to_physical(self, coefficients):
        if self.kind == TORUS:
            return np.fft.ifftn(coefficients * self.resolution**4).real
        return self.basis @ coefficients

    def with_factor(self, conformal_factor):
        """Same background with a (new) conformal factor."""
        return make_model(
            self.kind,
            self.resolution,
            conformal_factor=conformal_factor,
            nodes=self.nodes or None,
        )

    def to_dict(self):
        out = {"kind": self.kind, "resolution": self.resolution}
        if self.kind == SPHERE:
            out["nodes"] = self.nodes
        if self.is_conformal:
            out["conformal_factor"] = self.factor.tolist()
        return out

    def __repr__(self):
        conformal = ", conformal" if self.is_conformal else ""
        return f"ManifoldModel({self.kind}, resolution={self.resolution}{conformal})"


@dataclass(frozen=True, eq=False)
class Field:
    """A real function on a model, stored as samples or spectral coefficients."""

    model: ManifoldModel
    values: np.ndarray
    representation: str = PHYSICAL

    def __post_init__(self):
        if self.representation not in (PHYSICAL, SPECTRAL):
            raise ValueError(
                f"representation must be {PHYSICAL!r} or {SPECTRAL!r}, "
                f"got {self.representation!r}"
            )
        values = np.asarray(self.values)
        expected = (
            self.model.shape
            if self.representation == PHYSICAL
            else self.model.spectral_shape
        )
        if values.shape != expected:
            raise ValueError(
                f"{self.representation} values of shape {values.shape} do not "
                f"match {self.model!r} (expected {expected})"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, model, c):
        return cls(model, np.full(model.shape, float(c)))

    @classmethod
    def from_function(cls, model, func):
        """Sample ``func``: ``func(x1, x2, x3, x4)`` on the torus, ``func(θ)`` on the sphere."""
        if model.kind == TORUS:
            values = np.broadcast_to(func(*model.coordinates), model.shape)
        else:
            values = func(model.colatitudes)
        return cls(model, np.array(values, dtype=float))

    @classmethod
    def from_coefficients(cls, model, coefficients):
        coefficients = np.asarray(coefficients)
        return cls(model, coefficients, SPECTRAL)

    @property
    def data(self):
        """Physical sample values."""
        return self.physical().values

    @property
    def coefficients(self):
        return self.spectral().values

    def physical(self):
        if self.representation == PHYSICAL:
            return self
        return Field(self.model, self.model.to_physical(self.values), PHYSICAL)

    def spectral(self):
        if self.representation == SPECTRAL:
            return self
        return Field(self.model, self.model.to_spectral(self.values), SPECTRAL)

    def band_limited(self):
        """Project onto the spectral basis and resample."""
        return self.spectral().physical()

    def on(self, model):
        """The same samples viewed on a model sharing this sample set."""
        _check_same_samples(self.model, model)
        return Field(model, self.values, self.representation)

    def apply(self, func):
        return Field(self.model, func(self.data))

    def integral(self):
        return integrate(self.model, self)

    def mean(self):
        return self.integral() / self.model.volume

    def _binary(self, other, op):
        if isinstance(other, Field):
            _check_same_samples(self.model, other.model)
            other = other.data
        return Field(self.model, op(self.data, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return Field(self.model, -self.data)

    def to_dict(self):
        values = np.asarray(self.values)
        out = {
            "kind": self.model.kind,
            "resolution": self.model.resolution,
            "representation": self.representation,
            "values": values.real.ravel().tolist(),
        }
        if np.iscomplexobj(values):
            out["imag"] = values.imag.ravel().tolist()
        return out

    @classmethod
    def from_dict(cls, model, doc):
        if (doc["kind"], doc["resolution"]) != (model.kind, model.resolution):
            raise ValueError(
                f"document for a {doc['kind']} model at resolution "
                f"{doc['resolution']} does not match {model!r}"
            )
        shape = model.shape if doc["representation"] == PHYSICAL else model.spectral_shape
        values = np.asarray(doc["values"], dtype=float)
        if "imag" in doc:
            values = values + 1j * np.asarray(doc["imag"], dtype=float)
        return cls(model, values.reshape(shape), doc["representation"])


def as_field(model, value):
    """A Field on ``model`` from a Field or a constant."""
    if isinstance(value, Field):
        return value.on(model)
    return Field.constant(model, float(value))


def _check_same_samples(a, b):
    if a.sample_key != b.sample_key:
        raise ValueError(f"field on {a!r} does not belong to {b!r}")


def _as_factor(kind, resolution, nodes, conformal_factor):
    """Physical factor values for :func:`make_model`, checking zonality."""
    shape = (resolution,) * 4 if kind == TORUS else (nodes,)
    if isinstance(conformal_factor, Field):
        if conformal_factor.model.sample_key != (kind, resolution, nodes):
            raise ValueError(
                f"conformal factor lives on {conformal_factor.model!r}, "
                f"not on a {kind} model at resolution {resolution}"
            )
        values = conformal_factor.data
    elif callable(conformal_factor):
        if kind == TORUS:
            axis = np.arange(resolution) / resolution
            coords = np.meshgrid(axis, axis, axis, axis, indexing="ij", sparse=True)
            values = np.broadcast_to(conformal_factor(*coords), shape)
        else:
            theta = np.arccos(sphere_quadrature(nodes)[0])
            # Points on S⁴ ⊂ ℝ⁵, one row per (node, direction)
            points = np.concatenate(
                [
                    np.broadcast_to(np.cos(theta)[:, None, None], (nodes, len(_ZONAL_DIRECTIONS), 1)),
                    np.sin(theta)[:, None, None] * _ZONAL_DIRECTIONS[None, :, :],
                ],
                axis=-1,
            )
            samples = np.asarray(conformal_factor(points.reshape(-1, 5)), dtype=float)
            samples = samples.reshape(nodes, len(_ZONAL_DIRECTIONS))
            spread = np.max(np.ptp(samples, axis=1))
            if spread > 1e-10 * (1 + np.max(np.abs(samples))):
                raise ValueError(
                    "conformal factor on the sphere must be zonal about the "
                    f"north pole; values vary by {spread:.3g} along parallels"
                )
            values = samples[:, 0]
    else:
        values = np.asarray(conformal_factor, dtype=float)
        if values.shape != shape:
            raise ValueError(
                f"conformal factor of shape {values.shape} does not match the "
                f"model sample shape {shape}"
            )
    values = np.array(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("conformal factor must be finite")
    values.setflags(write=False)
    return values


def make_model(kind, resolution, conformal_factor=None, nodes=None):
    """Create a model geometry.

    Parameters
    ----------
    kind: {"torus", "sphere"}
        Background manifold.
    resolution: int
        Grid points per axis (torus) or maximal spectral degree ``L_max``
        (sphere). Must be at least 8.
    conformal_factor: Field, array, callable or None
        Factor ``v`` of the metric ``e^{2v} g₀``. Callables receive the four
        broadcastable grid coordinates (torus) or an ``(m, 5)`` array of
        points of S⁴ ⊂ ℝ⁵ (sphere); sphere factors must be zonal about the
        north pole ``(1, 0, 0, 0, 0)``.
    nodes: int, optional
        Colatitude node count on the sphere, default ``2 * L_max + 2``.

    Examples
    --------
    >>> make_model("torus", 16).volume
    1.0
    >>> model = make_model("sphere", 64)
    >>> abs(model.volume - 8 * math.pi**2 / 3) < 1e-10
    True
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if int(resolution) != resolution or resolution < MIN_RESOLUTION:
        raise ValueError(
            f"resolution must be an integer >= {MIN_RESOLUTION}, got {resolution}"
        )
    resolution = int(resolution)
    if kind == TORUS:
        if nodes not in (None, 0):
            raise ValueError("nodes only applies to sphere models")
        nodes = 0
    else:
        nodes = 2 * resolution + 2 if nodes is None else int(nodes)
        if nodes < 2 * resolution:
            raise ValueError(
                f"sphere quadrature needs at least 2 * L_max = {2 * resolution} "
                f"nodes, got {nodes}"
            )

    factor = None
    if conformal_factor is not None:
        factor = _as_factor(kind, resolution, nodes, conformal_factor)
    model = ManifoldModel(kind, resolution, nodes, factor)
    logger.debug("Created %r with volume %.12g", model, model.volume)
    return model


def integrate(model, f):
    """``∫_M f dV_g``, including ``e^{4v}`` when the model is conformal.

    Examples
    --------
    >>> integrate(make_model("torus", 8), Field.constant(make_model("torus", 8), 2.5))
    2.5
    """
    if not isinstance(f, Field):
        raise TypeError(f"expected a Field, got {type(f).__name__}")
    _check_same_samples(f.model, model)
    values = f.data
    return float(np.sum(values * model.measure))


def sphere_pole(p):
    """Map a sphere point to ``+1`` (north, θ = 0) or ``-1`` (south, θ = π)."""
    if isinstance(p, str):
        if p in ("north", "south"):
            return 1 if p == "north" else -1
    else:
        theta = float(np.squeeze(p))
        if abs(theta) < 1e-12:
            return 1
        if abs(theta - math.pi) < 1e-12:
            return -1
    raise ValueError(
        f"sphere points must be a pole of the declared axis (colatitude 0 or π), got {p!r}"
    )


def torus_grid_index(model, p):
    """Grid index tuple of a torus point given in ``[0, 1)⁴`` coordinates."""
    p = np.asarray(p, dtype=float)
    if p.shape != (4,):
        raise ValueError(f"torus points need 4 coordinates, got shape {p.shape}")
    scaled = p * model.resolution
    index = np.rint(scaled)
    if np.max(np.abs(scaled - index)) > 1e-9:
        raise ValueError(f"torus point {p.tolist()} is not a grid point of {model!r}")
    return tuple(int(i) % model.resolution for i in index)


def torus_displacement(model, p):
    """Minimal-image displacement ``x - p`` of every grid point (4 sparse arrays)."""
    n = model.resolution
    index = torus_grid_index(model, p)
    out = []
    for axis, ip in enumerate(index):
        j = (np.arange(n) - ip + n // 2) % n - n // 2
        shape = [1, 1, 1, 1]
        shape[axis] = n
        out.append((j / n).reshape(shape))
    return tuple(out)


def evaluate(model, f, points):
    """Evaluate a field off the sample set.

    Sphere: ``points`` are colatitudes and the zonal series is summed
    exactly. Torus: ``points`` is an ``(m, 4)`` array in ``[0, 1)⁴`` and the
    samples are interpolated with periodic cubic splines.
    """
    if model.kind == SPHERE:
        theta = np.asarray(points, dtype=float)
        basis = zonal_basis(model.resolution, np.cos(theta))
        return basis @ f.on(model).coefficients
    points = np.atleast_2d(np.asarray(points, dtype=float))
    coords = (points * model.resolution).T
    return scipy.ndimage.map_coordinates(
        f.on(model).data, coords, order=3, mode="grid-wrap"
    )


def zonal_derivative(model, f, theta):
    """``∂u/∂θ`` of a zonal field at colatitudes ``theta``."""
    if model.kind != SPHERE:
        raise ValueError("zonal derivatives are only defined on the sphere")
    theta = np.asarray(theta, dtype=float)
    dbasis = zonal_basis_derivative(model.resolution, np.cos(theta))
    return -np.sin(theta) * (dbasis @ f.on(model).coefficients)


def geodesic_distance(model, p):
    """Distance in the model metric from ``p`` to every sample point.

    Torus: flat minimal-image distance (background metric only). Sphere:
    colatitude from the chosen pole, or ``∫ e^{v} dθ`` along meridians when
    the model is conformal.
    """
    if model.kind == TORUS:
        if model.is_conformal:
            raise ValueError("geodesic distances on a conformal torus are not supported")
        return np.sqrt(sum(d**2 for d in torus_displacement(model, p)))

    sign = sphere_pole(p)
    theta = model.colatitudes
    arc = theta if sign > 0 else math.pi - theta
    if not model.is_conformal:
        return arc
    v = Field(model.background, model.factor)
    t, w = scipy.special.roots_legendre(max(64, 2 * model.resolution))
    # Gauss–Legendre on [0, arc] for every node
    s = 0.5 * arc[:, None] * (1 + t[None, :])
    along = s if sign > 0 else math.pi - s
    ev = np.exp(evaluate(model.background, v, along.ravel())).reshape(along.shape)
    return 0.5 * arc * (ev @ w)
