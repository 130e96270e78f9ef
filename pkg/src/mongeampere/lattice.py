"""Lattices and grid fields: the sampling substrate for every solver in the package.

Two lattice kinds cover all uses.  A TorusLattice discretizes a product of
circles R^n / (a_1 Z x ... x a_n Z) with nodes at integer multiples of the
spacing; a BoxLattice discretizes a closed box with nodes including both
endpoints.  Fields are plain numpy arrays tied to a lattice; box fields carry
an optional validity mask so domain solvers can leave exterior nodes undefined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InfeasibleProblem, InvalidArgument

# Alignment tolerance when deciding whether a point sits on a lattice node.
NODE_ALIGN_TOL = 1e-9


def ordered_sum(values) -> float:
    """Exactly rounded sum taken in fixed lexicographic (C ravel) order.

    Used for every reduction that lands in a report, so repeated runs are
    bit-identical regardless of how the caller laid out the data.
    """
    return math.fsum(np.asarray(values, dtype=float).ravel(order="C"))


@dataclass(frozen=True)
class TorusLattice:
    """Uniform periodic lattice on a product of circles."""

    periods: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        if len(self.periods) != len(self.resolution):
            raise InvalidArgument("periods and resolution must have equal length")
        if not self.periods or len(self.periods) > 3:
            raise InvalidArgument("dimension must be 1, 2 or 3")
        if any(a <= 0 for a in self.periods):
            raise InvalidArgument("periods must be positive")
        if any(n < 4 for n in self.resolution):
            raise InvalidArgument("resolution must be at least 4 nodes per axis")

    @property
    def n(self) -> int:
        return len(self.periods)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(a / n for a, n in zip(self.periods, self.resolution))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    def axes(self) -> list[np.ndarray]:
        """Per-axis node coordinates, [0, a_i) half-open."""
        return [
            np.arange(n) * (a / n) for a, n in zip(self.periods, self.resolution)
        ]

    def nodes(self) -> list[np.ndarray]:
        """Coordinate arrays of shape `resolution`, one per axis."""
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))


def make_torus(periods, resolution) -> TorusLattice:
    return TorusLattice(tuple(float(a) for a in periods), tuple(int(n) for n in resolution))


@dataclass(frozen=True)
class BoxLattice:
    """Uniform lattice on a closed box; nodes include both endpoints."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lo) == len(self.hi) == len(self.shape)):
            raise InvalidArgument("lo, hi and shape must have equal length")
        if not self.lo or len(self.lo) > 3:
            raise InvalidArgument("dimension must be 1, 2 or 3")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise InvalidArgument("box must have positive extent on every axis")
        if any(m < 2 for m in self.shape):
            raise InvalidArgument("need at least 2 nodes per axis")

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (m - 1) for a, b, m in zip(self.lo, self.hi, self.shape))

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(a, b, m) for a, b, m in zip(self.lo, self.hi, self.shape)
        ]

    def nodes(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.axes(), indexing="ij"))


def box_lattice(lo, hi, spacing) -> BoxLattice:
    """Box lattice with the given spacing; extents must be spacing-commensurate."""
    lo = tuple(float(a) for a in lo)
    hi = tuple(float(b) for b in hi)
    spacing = tuple(float(h) for h in spacing)
    shape = []
    for a, b, h in zip(lo, hi, spacing):
        m = (b - a) / h
        if abs(m - round(m)) > NODE_ALIGN_TOL:
            raise InvalidArgument(f"extent {b - a} is not a multiple of spacing {h}")
        shape.append(int(round(m)) + 1)
    return BoxLattice(lo, hi, tuple(shape))


@dataclass
class PeriodicField:
    """Scalar samples on a TorusLattice."""

    lattice: TorusLattice
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.lattice.shape:
            raise InvalidArgument(
                f"values shape {self.values.shape} != lattice shape {self.lattice.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("periodic field values must be finite")

    def copy(self) -> "PeriodicField":
        return PeriodicField(self.lattice, self.values.copy())

    def sample_box(self, box: BoxLattice) -> np.ndarray:
        """Evaluate by periodicity on a commensurate box lattice.

        Every box node must land exactly on a torus node (mod periods);
        raises InvalidArgument otherwise.
        """
        if box.n != self.lattice.n:
            raise InvalidArgument("dimension mismatch")
        idx = []
        for ax in range(box.n):
            h = self.lattice.spacing[ax]
            r = box.axes()[ax] / h
            k = np.rint(r)
            if np.max(np.abs(r - k)) > NODE_ALIGN_TOL:
                raise InvalidArgument(
                    f"box axis {ax} is not commensurate with the torus lattice"
                )
            idx.append(k.astype(np.int64) % self.lattice.resolution[ax])
        mesh = np.meshgrid(*idx, indexing="ij")
        return self.values[tuple(mesh)]


@dataclass
class ScalarField:
    """Scalar samples on a BoxLattice; mask is True where the node carries a value."""

    lattice: BoxLattice
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.lattice.shape:
            raise InvalidArgument(
                f"values shape {self.values.shape} != lattice shape {self.lattice.shape}"
            )
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise InvalidArgument("mask shape must match values")
        valid = self.values if self.mask is None else self.values[self.mask]
        if valid.size and not np.all(np.isfinite(valid)):
            raise InvalidArgument("field values must be finite on unmasked nodes")

    @property
    def valid_mask(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.values.shape, dtype=bool)
        return self.mask

    def copy(self) -> "ScalarField":
        m = None if self.mask is None else self.mask.copy()
        return ScalarField(self.lattice, self.values.copy(), m)


@dataclass(frozen=True)
class MollifierSpec:
    """Compactly supported bump kernel exp(-1/(1-|x/eps|^2)), sampled and renormalized."""

    epsilon: float

    def weights(self, lattice: TorusLattice):
        """Integer offsets (lexicographic order) and exactly normalized weights."""
        eps = float(self.epsilon)
        hmax = max(lattice.spacing)
        if eps < 2.0 * hmax:
            raise InvalidArgument(
                f"epsilon {eps} under-resolves the kernel; need >= 2*max spacing = {2 * hmax}"
            )
        reach = [int(math.floor(eps / h)) for h in lattice.spacing]
        offsets, raw = [], []
        for d in np.ndindex(*(2 * m + 1 for m in reach)):
            d = tuple(di - m for di, m in zip(d, reach))
            r2 = sum((di * h) ** 2 for di, h in zip(d, lattice.spacing)) / eps**2
            if r2 < 1.0:
                offsets.append(d)
                raw.append(math.exp(-1.0 / (1.0 - r2)))
        total = math.fsum(raw)
        weights = np.asarray(raw, dtype=float) / total
        return offsets, weights


@dataclass(frozen=True)
class ProblemBounds:
    """Pinch records 0 < f_lo <= f <= f_hi and the eigenvalue range of A."""

    f_lo: float
    f_hi: float
    eig_lo: float
    eig_hi: float

    @staticmethod
    def of(f: PeriodicField, a_matrix: np.ndarray) -> "ProblemBounds":
        eigs = np.linalg.eigvalsh(np.asarray(a_matrix, dtype=float))
        return ProblemBounds(
            f_lo=float(f.values.min()),
            f_hi=float(f.values.max()),
            eig_lo=float(eigs[0]),
            eig_hi=float(eigs[-1]),
        )


def cell_average(f) -> float:
    """Node mean over the torus, summed in fixed lexicographic order.

    On a uniform periodic lattice the node mean equals the cell-average
    quadrature of the sampled function.
    """
    values = f.values if hasattr(f, "values") else np.asarray(f, dtype=float)
    return ordered_sum(values) / values.size


def mollify(f: PeriodicField, spec: MollifierSpec) -> PeriodicField:
    """Discrete periodic convolution with the renormalized bump kernel.

    Exact summation over kernel offsets (no FFT), so the node mean is
    preserved to roundoff and bounds can only contract.
    """
    offsets, weights = spec.weights(f.lattice)
    out = np.zeros_like(f.values)
    for d, w in zip(offsets, weights):
        out += w * np.roll(f.values, shift=tuple(-di for di in d), axis=tuple(range(f.lattice.n)))
    return PeriodicField(f.lattice, out)


def normalize_rhs(f: PeriodicField, det_a: float) -> PeriodicField:
    """Shift a mollified right-hand side so its cell average equals det A.

    Raises InfeasibleProblem when the shift destroys positivity (the input
    was too rough for its mean offset).
    """
    shift = det_a - cell_average(f)
    out = f.values + shift
    if out.min() <= 0.0:
        raise InfeasibleProblem(
            f"normalized right-hand side loses positivity (min {out.min():.3e})"
        )
    return PeriodicField(f.lattice, out)


def _step_nodes(lattice, e, scale):
    """Integer node offset realizing the physical step scale*e, or raise."""
    e = np.asarray(e, dtype=float)
    if e.shape != (lattice.n,) or not np.any(e):
        raise InvalidArgument("direction must be a nonzero vector of the lattice dimension")
    steps = []
    for ax in range(lattice.n):
        r = scale * e[ax] / lattice.spacing[ax]
        k = round(r)
        if abs(r - k) > NODE_ALIGN_TOL:
            raise InvalidArgument(
                f"step {scale}*{tuple(e)} does not land on lattice nodes along axis {ax}"
            )
        steps.append(int(k))
    return steps


def second_quotient(u, e, scale: float = 1.0):
    """Second incremental quotient (u(x+se) + u(x-se) - 2u(x)) / |se|^2.

    e is a physical direction whose scaled step must land on lattice nodes.
    Periodic fields wrap; box fields are masked where an arm leaves the box
    or touches a masked node.
    """
    step = _step_nodes(u.lattice, e, scale)
    se2 = float(sum((scale * ei) ** 2 for ei in np.asarray(e, dtype=float)))
    v = u.values
    if isinstance(u, PeriodicField):
        ax = tuple(range(u.lattice.n))
        plus = np.roll(v, shift=tuple(-s for s in step), axis=ax)
        minus = np.roll(v, shift=tuple(step), axis=ax)
        return PeriodicField(u.lattice, (plus + minus - 2.0 * v) / se2)

    # Box: build shifted views over the overlap, mask the rest.
    out = np.full(v.shape, np.nan)
    ok = np.zeros(v.shape, dtype=bool)
    center = tuple(
        slice(abs(s), m - abs(s)) for s, m in zip(step, v.shape)
    )
    if all(sl.stop > sl.start for sl in center):
        plus_sl = tuple(
            slice(sl.start + s, sl.stop + s) for sl, s in zip(center, step)
        )
        minus_sl = tuple(
            slice(sl.start - s, sl.stop - s) for sl, s in zip(center, step)
        )
        out[center] = (v[plus_sl] + v[minus_sl] - 2.0 * v[center]) / se2
        valid = u.valid_mask
        ok[center] = valid[plus_sl] & valid[minus_sl] & valid[center]
    out[~ok] = np.nan
    return ScalarField(u.lattice, out, ok)


def resample(u: ScalarField, a_matrix, b_vector, target: BoxLattice) -> ScalarField:
    """Pull u back through the affine map x -> a x + b onto the target lattice.

    Multilinear interpolation of u at a^{-1}(x - b); exact for affine data.
    Target nodes whose preimage leaves the source box (or touches masked
    nodes) come back masked.
    """
    a = np.asarray(a_matrix, dtype=float).reshape(u.lattice.n, u.lattice.n)
    b = np.asarray(b_vector, dtype=float).reshape(u.lattice.n)
    vals = u.values.copy()
    vals[~u.valid_mask] = np.nan
    interp = RegularGridInterpolator(
        u.axes() if hasattr(u, "axes") else u.lattice.axes(),
        vals,
        method="linear",
        bounds_error=False,
        fill_value=np.nan,
    )
    pts = np.stack([g.ravel() for g in target.nodes()], axis=-1)
    pre = np.linalg.solve(a, (pts - b).T).T
    out = interp(pre).reshape(target.shape)
    mask = np.isfinite(out)
    out[~mask] = np.nan
    return ScalarField(target, out, mask)
