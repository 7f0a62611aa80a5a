"""Discrete weighted curve space for forward curves.

A forward curve lives on a truncated maturity grid ``0 = x_0 < ... < x_{n-1} =
x_max`` and is extrapolated flat beyond ``x_max`` (so its derivative vanishes
there and all tail integrals are exactly zero).  The ambient norm is

    |u|_H^2 = u(0)^2 + int_0^xmax u'(x)^2 alpha(x) dx,     alpha(x) = e^{beta x},

with derivatives by centered finite differences (one sided at the endpoints)
and integrals by the trapezoid rule.  Two variants are provided: the
vector-valued analogue ``norm_frak_H`` for curves with values in R^d, and the
equivalent norm ``norm_star`` that replaces the u(0) boundary term by
u(x_max); the right-shift semigroup ``shift`` is a contraction in the latter
on curves that vanish at ``x_max``.

All norm/integral helpers accept either a ``Curve``/``VectorCurve`` or a bare
ndarray, and broadcast over leading batch axes (node axis last for scalar
curves, second to last for vector curves).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

__all__ = [
    "WeightGrid",
    "Curve",
    "VectorCurve",
    "EmbeddingRatios",
    "make_grid",
    "integrate",
    "cumulative_integral",
    "partial_integral",
    "grid_derivative",
    "norm_H",
    "norm_star",
    "norm_frak_H",
    "seminorm_H",
    "sup_norm",
    "shift",
    "check_embeddings",
    "pointwise_norm_curve",
    "HarmonicFamily",
    "random_harmonic_family",
    "random_curves",
    "random_vector_curves",
    "rescale_to_norm",
    "curves_to_csv",
]

# Relative slack for detecting node-aligned shifts; shifts within this
# tolerance of an integer number of cells are applied by exact indexing.
_ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class WeightGrid:
    """Maturity grid with exponential weight and trapezoid quadrature.

    Attributes
    ----------
    nodes : ndarray, shape (n,)
        Strictly increasing maturities with ``nodes[0] == 0``.
    weight_beta : float
        Exponent of the weight ``alpha(x) = exp(weight_beta * x)``; must be
        positive so that ``alpha >= 1`` is increasing and ``alpha**(-1/3)``
        is integrable on the half line.
    quad_weights : ndarray, shape (n,)
        Positive trapezoid weights summing to ``x_max``.
    flat_extrapolation : bool
        Curves are constant beyond ``x_max``.  Always true; kept explicit
        because every tail identity in this package relies on it.
    """

    nodes: np.ndarray
    weight_beta: float
    quad_weights: np.ndarray
    flat_extrapolation: bool = True

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.quad_weights, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("grid needs at least 3 nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at maturity 0")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        if self.weight_beta <= 0:
            raise ValueError(f"weight_beta must be positive, got {self.weight_beta}")
        if weights.shape != nodes.shape or np.any(weights <= 0):
            raise ValueError("quad_weights must be positive and match the nodes")
        if not np.isclose(weights.sum(), nodes[-1], rtol=1e-12):
            raise ValueError("quad_weights must sum to x_max")
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "quad_weights", weights)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    @cached_property
    def spacing(self) -> float | None:
        """Uniform spacing, or None when the grid is not uniform."""
        d = np.diff(self.nodes)
        if np.allclose(d, d[0], rtol=1e-12, atol=0.0):
            return float(d[0])
        return None

    @cached_property
    def alpha(self) -> np.ndarray:
        """Weight values exp(beta * x) at the nodes."""
        a = np.exp(self.weight_beta * self.nodes)
        a.flags.writeable = False
        return a

    @cached_property
    def weighted_quad(self) -> np.ndarray:
        """Product alpha * quad_weights, the weights of the weighted integral."""
        w = self.alpha * self.quad_weights
        w.flags.writeable = False
        return w

    def refine(self, factor: int = 2) -> "WeightGrid":
        """Grid with the node count scaled by ``factor`` (same x_max, beta)."""
        if self.spacing is None:
            raise ValueError("refine is only supported for uniform grids")
        n_new = (self.n_nodes - 1) * factor + 1
        return make_grid(self.x_max, n_new, self.weight_beta)


def make_grid(x_max: float, n_points: int, beta: float) -> WeightGrid:
    """Build a uniform grid on [0, x_max] with weight exp(beta x).

    Parameters
    ----------
    x_max : float
        Truncation maturity in years, > 0.
    n_points : int
        Number of nodes, >= 3.
    beta : float
        Weight exponent, > 0.
    """
    if x_max <= 0:
        raise ValueError(f"x_max must be positive, got {x_max}")
    if n_points < 3:
        raise ValueError(f"n_points must be at least 3, got {n_points}")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    nodes = np.linspace(0.0, float(x_max), int(n_points))
    h = x_max / (n_points - 1)
    weights = np.full(n_points, h, dtype=float)
    weights[0] = weights[-1] = h / 2.0
    return WeightGrid(nodes=nodes, weight_beta=float(beta), quad_weights=weights)


@dataclass(frozen=True)
class Curve:
    """Scalar curve sampled at the grid nodes (flat beyond x_max)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("Curve values must be one dimensional")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class VectorCurve:
    """R^d valued curve sampled at the grid nodes, shape (n_nodes, d)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("VectorCurve values must have shape (n_nodes, d)")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _values(curve) -> np.ndarray:
    return np.asarray(getattr(curve, "values", curve), dtype=float)


def _check_nodes(values: np.ndarray, grid: WeightGrid, axis: int) -> None:
    if values.shape[axis] != grid.n_nodes:
        raise ValueError(
            f"curve has {values.shape[axis]} samples on axis {axis}, "
            f"grid has {grid.n_nodes} nodes"
        )


def integrate(curve, grid: WeightGrid, weighted: bool = False) -> np.ndarray | float:
    """Trapezoid integral over [0, x_max]; optionally against the weight alpha."""
    v = _values(curve)
    _check_nodes(v, grid, -1)
    w = grid.weighted_quad if weighted else grid.quad_weights
    out = v @ w
    return float(out) if np.ndim(out) == 0 else out


def cumulative_integral(curve, grid: WeightGrid, axis: int = -1) -> np.ndarray:
    """Running trapezoid integral int_0^{x_i} along the node axis."""
    v = _values(curve)
    _check_nodes(v, grid, axis)
    v = np.moveaxis(v, axis, -1)
    dx = np.diff(grid.nodes)
    cells = 0.5 * (v[..., 1:] + v[..., :-1]) * dx
    out = np.concatenate(
        [np.zeros(v.shape[:-1] + (1,)), np.cumsum(cells, axis=-1)], axis=-1
    )
    return np.moveaxis(out, -1, axis)


def partial_integral(curve, grid: WeightGrid, upper: float) -> np.ndarray | float:
    """Trapezoid integral int_0^upper with linear interpolation at the cut.

    ``upper`` beyond x_max uses the flat extrapolation (last value extends).
    """
    if upper < 0:
        raise ValueError(f"upper limit must be nonnegative, got {upper}")
    v = _values(curve)
    _check_nodes(v, grid, -1)
    nodes = grid.nodes
    if upper >= grid.x_max:
        full = v @ grid.quad_weights
        tail = (upper - grid.x_max) * v[..., -1]
        out = full + tail
        return float(out) if np.ndim(out) == 0 else out
    j = int(np.searchsorted(nodes, upper, side="right"))
    j = max(j, 1)
    # complete cells up to node j-1, then the partial cell [x_{j-1}, upper]
    dx = np.diff(nodes[:j])
    head = 0.5 * (v[..., 1:j] + v[..., : j - 1]) @ dx if j > 1 else 0.0
    x0, x1 = nodes[j - 1], nodes[j]
    frac = (upper - x0) / (x1 - x0)
    v_cut = v[..., j - 1] * (1 - frac) + v[..., j] * frac
    out = head + 0.5 * (v[..., j - 1] + v_cut) * (upper - x0)
    return float(out) if np.ndim(out) == 0 else out


def grid_derivative(curve, grid: WeightGrid, axis: int = -1) -> np.ndarray:
    """Centered finite differences along the node axis, one sided at the ends."""
    v = _values(curve)
    _check_nodes(v, grid, axis)
    return np.gradient(v, grid.nodes, axis=axis, edge_order=1)


def seminorm_H(curve, grid: WeightGrid) -> np.ndarray | float:
    """Derivative part sqrt(int u'^2 alpha) of the curve norm."""
    du = grid_derivative(curve, grid)
    out = np.sqrt(np.square(du) @ grid.weighted_quad)
    return float(out) if np.ndim(out) == 0 else out


def norm_H(curve, grid: WeightGrid) -> np.ndarray | float:
    """Curve norm sqrt(u(0)^2 + int u'^2 alpha dx).  Batched over leading axes."""
    v = _values(curve)
    du = grid_derivative(v, grid)
    out = np.sqrt(np.square(du) @ grid.weighted_quad + np.square(v[..., 0]))
    return float(out) if np.ndim(out) == 0 else out


def norm_star(curve, grid: WeightGrid) -> np.ndarray | float:
    """Equivalent norm sqrt(u(x_max)^2 + int u'^2 alpha dx).

    The boundary value at x_max stands in for the value at infinity under
    flat extrapolation.  Coincides with ``norm_H`` whenever u(x_max) = u(0).
    """
    v = _values(curve)
    du = grid_derivative(v, grid)
    out = np.sqrt(np.square(du) @ grid.weighted_quad + np.square(v[..., -1]))
    return float(out) if np.ndim(out) == 0 else out


def norm_frak_H(vcurve, grid: WeightGrid) -> np.ndarray | float:
    """Vector-curve norm sqrt(|phi(0)|^2 + int |phi'(x)|^2 alpha dx).

    ``vcurve`` has the node axis second to last and the component axis last;
    for d = 1 this reduces exactly to ``norm_H`` of the scalar curve.
    """
    v = _values(vcurve)
    if v.ndim < 2:
        raise ValueError("vector curve needs shape (..., n_nodes, d)")
    _check_nodes(v, grid, -2)
    du = np.gradient(v, grid.nodes, axis=-2, edge_order=1)
    sq = np.square(du).sum(axis=-1)
    boundary = np.square(v[..., 0, :]).sum(axis=-1)
    out = np.sqrt(sq @ grid.weighted_quad + boundary)
    return float(out) if np.ndim(out) == 0 else out


def sup_norm(curve) -> np.ndarray | float:
    v = _values(curve)
    out = np.abs(v).max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def shift(curve, t: float, grid: WeightGrid):
    """Right shift (transport toward maturity 0): (shift u)(x) = u(x + t).

    Node-aligned shifts (t an integer number of cells on a uniform grid) are
    applied by exact index rotation so the semigroup law holds bitwise;
    otherwise values are linearly interpolated.  Beyond x_max the curve is
    flat, so shifted-in values repeat the last sample.
    """
    if t < 0:
        raise ValueError(f"shift time must be nonnegative, got {t}")
    v = _values(curve)
    _check_nodes(v, grid, -1)
    out = _shift_values(v, t, grid)
    if isinstance(curve, Curve):
        return Curve(out)
    return out


def _shift_values(v: np.ndarray, t: float, grid: WeightGrid) -> np.ndarray:
    if t == 0.0:
        return v.copy()
    n = grid.n_nodes
    h = grid.spacing
    if h is not None:
        k = t / h
        k_int = int(round(k))
        if abs(k - k_int) <= _ALIGN_RTOL * max(1.0, abs(k)):
            if k_int >= n - 1:
                return np.broadcast_to(v[..., -1:], v.shape).copy()
            pad = np.broadcast_to(v[..., -1:], v.shape[:-1] + (k_int,))
            return np.concatenate([v[..., k_int:], pad], axis=-1)
    x = grid.nodes + t
    j = np.searchsorted(grid.nodes, x, side="right")
    j = np.clip(j, 1, n - 1)
    x0 = grid.nodes[j - 1]
    x1 = grid.nodes[j]
    frac = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
    return v[..., j - 1] * (1.0 - frac) + v[..., j] * frac


@dataclass(frozen=True)
class EmbeddingRatios:
    """Ratios left/right of the three embedding bounds of the curve space.

    sup_ratio : |u|_inf / |u|_H
    l1_ratio  : |u - u(x_max)|_{L1} / |u|_H
    sq_ratio  : |(u - u(x_max))^2|_{L2,alpha} / |u|_H^2
    """

    sup_ratio: float
    l1_ratio: float
    sq_ratio: float


def check_embeddings(curve, grid: WeightGrid) -> EmbeddingRatios:
    """Evaluate the sup / L1 / weighted-square embedding ratios of a curve."""
    v = _values(curve)
    if v.ndim != 1:
        raise ValueError("check_embeddings expects a single curve")
    h = norm_H(v, grid)
    if h == 0.0:
        raise ValueError("embedding ratios are undefined for the zero curve")
    centered = v - v[-1]
    sup = float(np.abs(v).max())
    l1 = float(np.abs(centered) @ grid.quad_weights)
    sq = float(np.sqrt(np.power(centered, 4) @ grid.weighted_quad))
    return EmbeddingRatios(sup_ratio=sup / h, l1_ratio=l1 / h, sq_ratio=sq / h**2)


def pointwise_norm_curve(vcurve) -> np.ndarray:
    """Scalar curve x -> |phi(x)| of a vector curve (Euclidean norm in R^d)."""
    v = _values(vcurve)
    return np.sqrt(np.square(v).sum(axis=-1))


# ---------------------------------------------------------------------------
# Random curve families.  Curves are finite sums of damped harmonics, so the
# same family can be sampled on any grid (used by refinement-stability tests)
# and differentiated in closed form.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HarmonicFamily:
    """Curves c_i + sum_m a_im cos(w_im x + p_im) exp(-d_im x).

    ``vanish_at_end`` multiplies by the envelope (1 - (x/x_max)^2)^2 so every
    curve and its first derivative vanish at x_max (flat-to-zero far field).
    """

    offsets: np.ndarray      # (n_curves,)
    amplitudes: np.ndarray   # (n_curves, n_modes)
    frequencies: np.ndarray  # (n_curves, n_modes)
    phases: np.ndarray       # (n_curves, n_modes)
    decays: np.ndarray       # (n_curves, n_modes)
    x_max: float
    vanish_at_end: bool = False

    def sample(self, grid: WeightGrid) -> np.ndarray:
        return self.sample_at(grid.nodes)

    def sample_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        phase = self.frequencies[..., None] * x + self.phases[..., None]
        damp = np.exp(-self.decays[..., None] * x)
        curves = (self.amplitudes[..., None] * np.cos(phase) * damp).sum(axis=-2)
        curves = curves + self.offsets[:, None]
        if self.vanish_at_end:
            env = (1.0 - np.square(x / self.x_max)) ** 2
            curves = curves * env
        return curves

    def derivative_at(self, x: np.ndarray) -> np.ndarray:
        """Exact first derivative (only for families without the envelope)."""
        if self.vanish_at_end:
            raise ValueError("closed-form derivative not provided with envelope")
        x = np.asarray(x, dtype=float)
        phase = self.frequencies[..., None] * x + self.phases[..., None]
        damp = np.exp(-self.decays[..., None] * x)
        term = -self.frequencies[..., None] * np.sin(phase) - self.decays[
            ..., None
        ] * np.cos(phase)
        return (self.amplitudes[..., None] * term * damp).sum(axis=-2)


def random_harmonic_family(
    grid: WeightGrid,
    n_curves: int,
    rng: np.random.Generator,
    n_modes: int = 4,
    max_frequency: float = 3.0,
    amplitude: float = 1.0,
    offset_scale: float = 1.0,
    min_decay: float | None = None,
    vanish_at_end: bool = False,
) -> HarmonicFamily:
    """Draw a random family of damped-harmonic curves on the grid's domain.

    Decay rates default to at least beta/2 plus a margin, which keeps the
    weighted derivative integrals dominated by the bulk rather than the tail.
    """
    if min_decay is None:
        min_decay = 0.5 * grid.weight_beta + 0.2
    offsets = offset_scale * rng.normal(size=n_curves)
    amplitudes = amplitude * rng.normal(size=(n_curves, n_modes))
    frequencies = rng.uniform(0.3, max_frequency, size=(n_curves, n_modes))
    phases = rng.uniform(0.0, 2 * np.pi, size=(n_curves, n_modes))
    decays = rng.uniform(min_decay, min_decay + 1.0, size=(n_curves, n_modes))
    return HarmonicFamily(
        offsets=offsets,
        amplitudes=amplitudes,
        frequencies=frequencies,
        phases=phases,
        decays=decays,
        x_max=grid.x_max,
        vanish_at_end=vanish_at_end,
    )


def random_curves(
    grid: WeightGrid,
    n_curves: int,
    rng: np.random.Generator,
    **family_kwargs,
) -> np.ndarray:
    """Random smooth curves as a (n_curves, n_nodes) array."""
    return random_harmonic_family(grid, n_curves, rng, **family_kwargs).sample(grid)


def random_vector_curves(
    grid: WeightGrid,
    n_curves: int,
    dim: int,
    rng: np.random.Generator,
    **family_kwargs,
) -> np.ndarray:
    """Random smooth vector curves as a (n_curves, n_nodes, d) array."""
    flat = random_curves(grid, n_curves * dim, rng, **family_kwargs)
    return flat.reshape(n_curves, dim, grid.n_nodes).transpose(0, 2, 1)


def rescale_to_norm(
    values: np.ndarray, grid: WeightGrid, target: float | np.ndarray, norm: str = "H"
) -> np.ndarray:
    """Scale curves (batched) so the selected norm equals ``target``."""
    if norm == "H":
        current = norm_H(values, grid)
    elif norm == "star":
        current = norm_star(values, grid)
    elif norm == "frak":
        current = norm_frak_H(values, grid)
    else:
        raise ValueError(f"unknown norm kind {norm!r}")
    current = np.asarray(current)
    if np.any(current == 0):
        raise ValueError("cannot rescale a zero curve")
    factor = np.asarray(target) / current
    if values.ndim > current.ndim:
        extra = values.ndim - current.ndim
        factor = factor.reshape(factor.shape + (1,) * extra)
    return values * factor


def curves_to_csv(path, grid: WeightGrid, columns: dict[str, Iterable[float]]) -> None:
    """Write curves in wide format: node column x, one column per curve."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", *columns.keys()])
        cols = [np.asarray(c, dtype=float) for c in columns.values()]
        for i, x in enumerate(grid.nodes):
            writer.writerow([repr(float(x))] + [repr(float(c[i])) for c in cols])
