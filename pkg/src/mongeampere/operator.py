"""Monotone wide-stencil Monge-Ampere operator and its linearization.

The operator at a node is

    MA[v](x) = min over orthogonal bases {v_j} of prod_j max(d2_j(x), theta)

where d2_j = e_j' A e_j + (v(x + h v_j) + v(x - h v_j) - 2 v(x)) / |h v_j|^2
is the directional second quotient shifted by the quadratic part A (A = 0 for
plain Dirichlet problems) and theta is a small positive floor keeping factors
away from zero.  Ties in the min go to the lexicographically first basis in
the stencil's fixed order, which is what numpy argmin does for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .lattice import BoxLattice, PeriodicField, ScalarField, TorusLattice
from .stencils import StencilSet, build_stencil

THETA_REL = 1e-12
CONVEXITY_TOL = 1e-9


def theta_floor(a_matrix=None) -> float:
    """Positivity floor for operator factors, scaled by the quadratic part."""
    scale = 1.0
    if a_matrix is not None:
        scale = max(scale, float(np.max(np.abs(a_matrix))))
    return THETA_REL * scale


@dataclass(frozen=True)
class StencilGeometry:
    """Stencil directions realized on a concrete lattice."""

    stencil: StencilSet
    steps: np.ndarray      # (ndir, n) node offsets
    lengths2: np.ndarray   # (ndir,) squared physical arm lengths
    units: np.ndarray      # (ndir, n) unit physical directions

    @property
    def ndir(self) -> int:
        return len(self.stencil.directions)


def stencil_geometry(stencil: StencilSet, lattice) -> StencilGeometry:
    h = np.asarray(lattice.spacing, dtype=float)
    if stencil.n != lattice.n:
        raise InvalidArgument("stencil dimension does not match lattice")
    off_axis = any(
        sum(c != 0 for c in d) > 1 for d in stencil.directions
    )
    if off_axis and np.ptp(h) > 1e-12 * h.max():
        raise InvalidArgument(
            "diagonal stencil directions need equal spacing on all axes"
        )
    steps = np.asarray(stencil.directions, dtype=np.int64)
    phys = steps * h
    lengths2 = np.sum(phys**2, axis=1)
    units = phys / np.sqrt(lengths2)[:, None]
    return StencilGeometry(stencil, steps, lengths2, units)


def quadratic_terms(geom: StencilGeometry, a_matrix=None) -> np.ndarray:
    """e' A e for every stencil direction (zeros when A is absent)."""
    if a_matrix is None:
        return np.zeros(geom.ndir)
    a = np.asarray(a_matrix, dtype=float)
    return np.einsum("di,ij,dj->d", geom.units, a, geom.units)


def _torus_second_differences(values: np.ndarray, geom: StencilGeometry) -> np.ndarray:
    """Stack of wrapped second quotients, shape (ndir, *grid)."""
    ax = tuple(range(values.ndim))
    out = np.empty((geom.ndir,) + values.shape)
    for d in range(geom.ndir):
        step = tuple(int(s) for s in geom.steps[d])
        plus = np.roll(values, tuple(-s for s in step), axis=ax)
        minus = np.roll(values, step, axis=ax)
        out[d] = (plus + minus - 2.0 * values) / geom.lengths2[d]
    return out


def _box_second_differences(values: np.ndarray, valid: np.ndarray, geom: StencilGeometry):
    """Second quotients on full interior arms; (stack, per-direction masks)."""
    out = np.full((geom.ndir,) + values.shape, np.nan)
    ok = np.zeros((geom.ndir,) + values.shape, dtype=bool)
    for d in range(geom.ndir):
        step = geom.steps[d]
        center = tuple(
            slice(abs(int(s)), m - abs(int(s)))
            for s, m in zip(step, values.shape)
        )
        if any(sl.stop <= sl.start for sl in center):
            continue
        plus = tuple(slice(sl.start + int(s), sl.stop + int(s)) for sl, s in zip(center, step))
        minus = tuple(slice(sl.start - int(s), sl.stop - int(s)) for sl, s in zip(center, step))
        out[(d,) + center] = (
            values[plus] + values[minus] - 2.0 * values[center]
        ) / geom.lengths2[d]
        ok[(d,) + center] = valid[plus] & valid[minus] & valid[center]
    out[~ok] = np.nan
    return out, ok


def directional_second_differences(field, stencil: StencilSet, a_matrix=None):
    """All stencil second quotients of the field, shifted by e'Ae.

    Returns (delta2, valid) with delta2 of shape (ndir, *grid); valid is None
    for periodic fields (every arm wraps).
    """
    geom = stencil_geometry(stencil, field.lattice)
    ea = quadratic_terms(geom, a_matrix)
    if isinstance(field, PeriodicField):
        delta2 = _torus_second_differences(field.values, geom)
        valid = None
    else:
        delta2, valid = _box_second_differences(field.values, field.valid_mask, geom)
    delta2 += ea[:, None] if field.values.ndim == 1 else ea.reshape((-1,) + (1,) * field.values.ndim)
    return delta2, valid


def _min_products(delta2: np.ndarray, stencil: StencilSet, theta: float):
    """Floored basis products, their min, the argmin basis, and floor flags."""
    floored = np.maximum(delta2, theta)
    products = np.stack(
        [np.prod(floored[list(basis)], axis=0) for basis in stencil.bases]
    )
    active = np.argmin(products, axis=0)
    values = np.take_along_axis(products, active[None], axis=0)[0]
    return values, active, floored


class ConvexGridFunction:
    """Grid function carrying a discrete convexity certificate.

    defect = min over nodes and stencil directions of the (A-shifted)
    second quotient; certified means defect >= -CONVEXITY_TOL.
    """

    def __init__(self, field, stencil: StencilSet, a_matrix=None, defect=None):
        self.field = field
        self.stencil = stencil
        self.a_matrix = None if a_matrix is None else np.asarray(a_matrix, dtype=float)
        # Solvers with boundary-shortened arms pass their own defect; the
        # full-arm recomputation would misread cut nodes as valid.
        if defect is None:
            defect = convexity_defect(field, stencil, a_matrix)
        self.defect = float(defect)

    @property
    def certified(self) -> bool:
        return self.defect >= -CONVEXITY_TOL

    @property
    def values(self) -> np.ndarray:
        return self.field.values


@dataclass
class LinearizedCoeffs:
    """Derivative data of ma_operator at a fixed field.

    weights[d, x] = d(MA)/d(delta2_d) at x: the product of the other floored
    factors when direction d belongs to the active basis, else 0.  Floored
    factors keep a unit subgradient slope; the exact derivative there is
    zero, but a blind Jacobian strands Newton whenever an iterate dips below
    the floor.  Dividing by the squared arm length gives the coefficient
    multiplying a neighbor second difference.
    """

    stencil: StencilSet
    geom: StencilGeometry
    active: np.ndarray
    weights: np.ndarray
    floored: np.ndarray  # bool, True where the active basis had a floored factor

    def apply(self, diff_delta2: np.ndarray) -> np.ndarray:
        """Directional action: sum_d weights[d] * diff_delta2[d]."""
        return np.einsum("d...,d...->...", self.weights, diff_delta2)


def _linearize_parts(delta2, stencil, theta):
    values, active, floored = _min_products(delta2, stencil, theta)
    ndir = delta2.shape[0]
    grid_shape = delta2.shape[1:]
    weights = np.zeros_like(delta2)
    floored_flag = np.zeros(grid_shape, dtype=bool)
    for b, basis in enumerate(stencil.bases):
        sel = active == b
        if not np.any(sel):
            continue
        for j in basis:
            others = [k for k in basis if k != j]
            w = np.ones(grid_shape)
            for k in others:
                w = w * floored[k]
            weights[j][sel] = w[sel]
            floored_flag |= sel & ~(delta2[j] > theta)
    return values, active, weights, floored_flag


def ma_operator(field, stencil: StencilSet, a_matrix=None):
    """Evaluate the monotone Monge-Ampere operator on every node.

    Periodic fields return a PeriodicField; box fields return a ScalarField
    masked where some stencil arm leaves the box.
    """
    theta = theta_floor(a_matrix)
    delta2, valid = directional_second_differences(field, stencil, a_matrix)
    if valid is None:
        values, _, _ = _min_products(delta2, stencil, theta)
        return PeriodicField(field.lattice, values)
    ok = np.all(valid, axis=0)
    delta2 = np.where(np.isnan(delta2), theta, delta2)
    values, _, _ = _min_products(delta2, stencil, theta)
    values = np.where(ok, values, np.nan)
    return ScalarField(field.lattice, values, ok)


def linearize(field, stencil: StencilSet, a_matrix=None) -> LinearizedCoeffs:
    """Lexicographic tie-break linearization of ma_operator at the field."""
    theta = theta_floor(a_matrix)
    geom = stencil_geometry(stencil, field.lattice)
    delta2, valid = directional_second_differences(field, stencil, a_matrix)
    if valid is not None:
        delta2 = np.where(np.isnan(delta2), theta, delta2)
    _, active, weights, floored = _linearize_parts(delta2, stencil, theta)
    return LinearizedCoeffs(stencil, geom, active, weights, floored)


def convexity_defect(field, stencil: StencilSet, a_matrix=None) -> float:
    """Min directional second quotient over all nodes with full arms.

    Nonnegative (up to tolerance) certifies discrete convexity along the
    stencil directions; the sign convention makes larger better.
    """
    delta2, valid = directional_second_differences(field, stencil, a_matrix)
    if valid is not None:
        if not np.any(valid):
            raise InvalidArgument("no node has a full stencil arm; box too small")
        return float(np.min(delta2[valid]))
    return float(np.min(delta2))


def certify_convex(field, stencil: StencilSet, a_matrix=None) -> ConvexGridFunction:
    return ConvexGridFunction(field, stencil, a_matrix)


# ---------------------------------------------------------------------------
# det^{1/n} calculus on small SPD matrices.

def _check_spd(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgument("matrix must be square")
    if not np.allclose(m, m.T, rtol=0, atol=1e-10 * max(1.0, np.abs(m).max())):
        raise InvalidArgument("matrix must be symmetric")
    if np.linalg.eigvalsh(m)[0] <= 0:
        raise InvalidArgument("matrix must be positive definite")
    return m


def det_root(m) -> float:
    """F(M) = det(M)^(1/n) on symmetric positive definite matrices."""
    m = _check_spd(m)
    n = m.shape[0]
    return float(np.linalg.det(m) ** (1.0 / n))


def det_root_grad(m) -> np.ndarray:
    """Gradient of det^(1/n): (1/n) det(M)^(1/n) M^{-1}."""
    m = _check_spd(m)
    n = m.shape[0]
    return (np.linalg.det(m) ** (1.0 / n) / n) * np.linalg.inv(m)


def concavity_gap(m1, m2) -> float:
    """First-order overestimate F(M1) + <F'(M1), M2 - M1> - F(M2).

    Nonnegative for SPD arguments: det^(1/n) is concave on that cone.
    """
    m1 = _check_spd(m1)
    m2 = _check_spd(m2)
    g = det_root_grad(m1)
    return det_root(m1) + float(np.sum(g * (m2 - m1))) - det_root(m2)


__all__ = [
    "ConvexGridFunction",
    "LinearizedCoeffs",
    "StencilGeometry",
    "build_stencil",
    "certify_convex",
    "concavity_gap",
    "convexity_defect",
    "det_root",
    "det_root_grad",
    "directional_second_differences",
    "linearize",
    "ma_operator",
    "quadratic_terms",
    "stencil_geometry",
    "theta_floor",
]
