"""Discrete Monge-Ampere measure via subdifferentials of the lower convex hull.

Lift the grid samples to (x, u(x)), take the lower convex hull, and assign
each hull vertex the volume of its gradient cell: the convex hull of the
gradients of the incident lower facets.  For convex u this is the Alexandrov
measure of the piecewise linear interpolant, so summing node masses over a
region approximates the integral of det D^2 u there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidArgument
from .lattice import ScalarField


@dataclass
class NodeMeasure:
    """Per-node masses of the discrete MA measure on a box lattice."""

    field: ScalarField
    masses: np.ndarray  # same shape as the grid, zeros off the hull

    def total(self, region_mask=None) -> float:
        if region_mask is None:
            return float(self.masses.sum())
        return float(self.masses[np.asarray(region_mask, dtype=bool)].sum())

    def interior_total(self, margin: int = 1) -> float:
        """Total over nodes at least `margin` grid layers from the box edge."""
        sl = tuple(slice(margin, m - margin) for m in self.masses.shape)
        inner = np.zeros(self.masses.shape, dtype=bool)
        inner[sl] = True
        return self.total(inner)


def _lower_hull_indices_1d(x, z):
    """Andrew chain on sorted abscissae: indices of lower hull vertices."""
    order = np.argsort(x)
    hull = []
    for i in order:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (z[i] - z[a]) - (z[b] - z[a]) * (x[i] - x[a])
            if cross <= 0:  # b above or on segment a-i: drop it
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def _hull_area_2d(points) -> float:
    """Shoelace area of the convex hull of a small 2-D point cloud."""
    pts = np.unique(np.round(np.asarray(points, dtype=float), 12), axis=0)
    if len(pts) < 3:
        return 0.0
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2:
                u = chain[-1] - chain[-2]
                w = p - chain[-2]
                if u[0] * w[1] - u[1] * w[0] > 0:
                    break
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    poly = np.asarray(lower[:-1] + upper[:-1])
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def subdifferential_measure(u) -> NodeMeasure:
    """Discrete MA measure of a (convex) grid function.

    Accepts a ScalarField or anything exposing .field (e.g. a certified
    convex grid function).  Nodes that are not vertices of the lower hull,
    and masked nodes, carry zero mass.
    """
    field = u.field if hasattr(u, "field") else u
    if not isinstance(field, ScalarField):
        raise InvalidArgument("subdifferential_measure expects a box field")
    lattice = field.lattice
    valid = field.valid_mask
    masses = np.zeros(field.values.shape)

    if lattice.n == 1:
        x = lattice.axes()[0][valid.ravel()]
        z = field.values.ravel()[valid.ravel()]
        if len(x) < 3:
            return NodeMeasure(field, masses)
        flat_index = np.nonzero(valid.ravel())[0]
        hull = _lower_hull_indices_1d(x, z)
        for k in range(1, len(hull) - 1):
            i0, i1, i2 = hull[k - 1], hull[k], hull[k + 1]
            left = (z[i1] - z[i0]) / (x[i1] - x[i0])
            right = (z[i2] - z[i1]) / (x[i2] - x[i1])
            masses.ravel()[flat_index[i1]] = max(right - left, 0.0)
        return NodeMeasure(field, masses)

    if lattice.n != 2:
        raise InvalidArgument("subdifferential_measure supports n in {1, 2}")

    coords = np.stack([g[valid] for g in lattice.nodes()], axis=-1)
    z = field.values[valid]
    lifted = np.column_stack([coords, z])
    flat_index = np.nonzero(valid.ravel())[0]
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        # Degenerate lift (affine data): zero measure everywhere.
        return NodeMeasure(field, masses)

    eq = hull.equations  # (a, b, c, offset) with a*x + b*y + c*z + offset <= 0
    lower = eq[:, 2] < -1e-12
    grads = np.empty((len(eq), 2))
    grads[lower] = -eq[lower, :2] / eq[lower, 2:3]

    incident: dict[int, list[int]] = {}
    for face_id in np.nonzero(lower)[0]:
        for vert in hull.simplices[face_id]:
            incident.setdefault(int(vert), []).append(face_id)
    for vert, faces in incident.items():
        if len(faces) < 3:
            continue
        masses.ravel()[flat_index[vert]] = _hull_area_2d(grads[faces])
    return NodeMeasure(field, masses)
