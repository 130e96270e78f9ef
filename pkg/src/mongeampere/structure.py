"""Structure analysis of entire solutions: u = (1/2) x'Ax + b.x + a + v.

Everything here measures one ingredient of that decomposition on a finite
centered box sample: second-quotient suprema recover A (they equal
e'Ae/|e|^2 with exact periodic cancellation on synthesized samples), the
antisymmetric part at the unit lattice vectors recovers b, dyadic-shell
residuals give the decay fit, integer rescalings probe the quadratic
blow-down limit, and the h = w - v bookkeeping (boxed sups/infs, doubling
trace, Harnack ratios, linearized comparison signs) certifies that what is
left over is constant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np

from .dirichlet import DirichletOptions, DirichletProblem, box_domain, solve_dirichlet
from .errors import InvalidArgument, InvariantViolation
from .lattice import (
    NODE_ALIGN_TOL,
    BoxLattice,
    PeriodicField,
    ScalarField,
    box_lattice,
    resample,
    second_quotient,
)
from .operator import ConvexGridFunction, convexity_defect, directional_second_differences, linearize, theta_floor
from .periodic import check_compatibility
from .stencils import build_stencil

log = logging.getLogger("mongeampere.structure")


@dataclass(frozen=True)
class QuadraticPart:
    """Quadratic-plus-affine profile (1/2) x'Ax + b.x + c."""

    a: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if a.shape != (b.size, b.size):
            raise InvalidArgument("A must be n x n matching b")
        if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise InvalidArgument("A must be symmetric")
        if np.linalg.eigvalsh(a)[0] <= 0:
            raise InvalidArgument("A must be positive definite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def n(self) -> int:
        return self.b.size

    def evaluate(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            0.5 * np.einsum("mi,ij,mj->m", pts, self.a, pts)
            + pts @ self.b
            + self.c
        )


@dataclass(frozen=True)
class LatticeDirectionSet:
    """Integer lattice directions 0 < |k|_inf <= k_max, one per +- pair."""

    n: int
    k_max: int
    directions: tuple = dc_field(init=False)

    def __post_init__(self):
        if self.k_max < 1:
            raise InvalidArgument("k_max must be >= 1")
        if not 1 <= self.n <= 3:
            raise InvalidArgument("dimension must be 1, 2 or 3")
        found = set()
        rng = range(-self.k_max, self.k_max + 1)
        grids = np.meshgrid(*[list(rng)] * self.n, indexing="ij")
        for k in np.stack([g.ravel() for g in grids], axis=-1):
            if not np.any(k):
                continue
            t = tuple(int(c) for c in k)
            neg = tuple(-c for c in t)
            if neg in found:
                continue
            # Keep the representative whose first nonzero entry is positive.
            first = next(c for c in t if c != 0)
            found.add(t if first > 0 else neg)
        ordered = sorted(found, key=lambda v: (max(abs(c) for c in v),
                                               sum(c * c for c in v), v))
        object.__setattr__(self, "directions", tuple(ordered))


class EntireSample:
    """Solution sample on a centered box [-L, L]^n, unit-period lattice.

    The box must span at least 8 lattice cells per side, reach the unit
    lattice points (L >= 1), sit symmetrically about the origin, and carry
    an integer number of nodes per unit cell so integer translates land on
    nodes.
    """

    def __init__(self, field: ScalarField, f: PeriodicField | None = None,
                 provenance: str = "synthesized", quadratic=None, v=None,
                 defect: float | None = None):
        if provenance not in ("synthesized", "dirichlet-reconstructed", "loaded"):
            raise InvalidArgument(f"unknown provenance {provenance!r}")
        lat = field.lattice
        if not isinstance(lat, BoxLattice):
            raise InvalidArgument("entire samples live on box lattices")
        lo = np.asarray(lat.lo)
        hi = np.asarray(lat.hi)
        if np.max(np.abs(lo + hi)) > NODE_ALIGN_TOL:
            raise InvalidArgument("sample box must be centered at the origin")
        h = np.asarray(lat.spacing)
        if np.ptp(h) > NODE_ALIGN_TOL:
            raise InvalidArgument("sample lattice must have equal spacing")
        cells = 1.0 / h[0]
        if abs(cells - round(cells)) > NODE_ALIGN_TOL:
            raise InvalidArgument("spacing must divide the unit cell")
        if hi[0] < 1.0 - NODE_ALIGN_TOL:
            raise InvalidArgument("sample box must reach the unit lattice points")
        if min(lat.shape) < 9:
            raise InvalidArgument("sample box must span at least 8 cells per side")
        self.field = field
        self.f = f
        self.provenance = provenance
        self.quadratic = quadratic
        self.v = v
        self.half_width = float(hi[0])
        self.cells = int(round(cells))
        self.center = tuple(
            int(round((0.0 - a) / hh)) for a, hh in zip(lat.lo, lat.spacing)
        )
        if defect is None:
            defect = convexity_defect(field, build_stencil(lat.n, 1))
        self.defect = float(defect)
        if self.defect < -1e-9:
            raise InvariantViolation(
                f"entire sample is not convex: defect {self.defect:.3e}"
            )

    @property
    def n(self) -> int:
        return self.field.lattice.n

    def node_value(self, cell_point) -> float:
        """Value at an integer-cell point, e.g. (1, 0) or (-2, 1)."""
        idx = tuple(
            c + int(round(k * self.cells)) for c, k in zip(self.center, cell_point)
        )
        shape = self.field.lattice.shape
        if any(not 0 <= i < m for i, m in zip(idx, shape)):
            raise InvalidArgument(f"cell point {tuple(cell_point)} is off the box")
        if not self.field.valid_mask[idx]:
            raise InvalidArgument(f"cell point {tuple(cell_point)} is masked")
        return float(self.field.values[idx])

    def inner_mask(self, half_width: float) -> np.ndarray:
        """Boolean grid mask of |x|_inf <= half_width (node-snapped)."""
        lat = self.field.lattice
        mask = np.ones(lat.shape, dtype=bool)
        for ax in range(lat.n):
            coord = lat.axes()[ax]
            keep = np.abs(coord) <= half_width + NODE_ALIGN_TOL
            sl = [None] * lat.n
            sl[ax] = slice(None)
            mask &= keep[tuple(sl)]
        return mask


def synthesize_entire(qp: QuadraticPart, v: PeriodicField, box: BoxLattice,
                      f: PeriodicField | None = None) -> EntireSample:
    """Sample u = (1/2) x'Ax + b.x + c + v(x) exactly at box nodes."""
    if box.n != qp.n:
        raise InvalidArgument("box dimension does not match the quadratic part")
    pts = np.stack([g.ravel() for g in box.nodes()], axis=-1)
    vals = qp.evaluate(pts).reshape(box.shape) + v.sample_box(box)
    field = ScalarField(box, vals)
    return EntireSample(field, f=f, provenance="synthesized", quadratic=qp, v=v)


def periodic_extension(f: PeriodicField):
    """Callable sampling a periodic field exactly at lattice-commensurate points."""

    def call(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = []
        for ax in range(f.lattice.n):
            r = pts[:, ax] / f.lattice.spacing[ax]
            k = np.rint(r)
            if np.max(np.abs(r - k)) > NODE_ALIGN_TOL:
                raise InvalidArgument(
                    "evaluation points must land on periodic lattice nodes"
                )
            idx.append(k.astype(np.int64) % f.lattice.resolution[ax])
        return f.values[tuple(idx)]

    return call


def reconstruct_entire(f: PeriodicField, qp: QuadraticPart, half_width: float,
                       spacing: float, options: DirichletOptions | None = None) -> EntireSample:
    """Dirichlet reconstruction on [-L, L]^n with boundary data (1/2) x'Ax + b.x.

    Away from an O(1) boundary layer the interior should approximate
    Q + b.x + v + const; downstream estimators quantify how well.
    """
    check_compatibility(f, qp.a)
    n = qp.n
    dom = box_domain((-half_width,) * n, (half_width,) * n)
    lat = box_lattice((-half_width,) * n, (half_width,) * n, (spacing,) * n)

    def g(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return 0.5 * np.einsum("mi,ij,mj->m", pts, qp.a, pts) + pts @ qp.b

    problem = DirichletProblem(dom, periodic_extension(f), g, lat)
    solution, report = solve_dirichlet(problem, options)
    sample = EntireSample(
        solution.field,
        f=f,
        provenance="dirichlet-reconstructed",
        defect=solution.defect,
    )
    sample.solve_report = report
    return sample


# ---------------------------------------------------------------------------
# Coefficient recovery.

def estimate_b(sample: EntireSample) -> np.ndarray:
    """b_k = (u(e_k) - u(-e_k)) / 2; exact when u = Q + b.x + v, v 1-periodic."""
    out = np.zeros(sample.n)
    for k in range(sample.n):
        e = tuple(1 if i == k else 0 for i in range(sample.n))
        ne = tuple(-c for c in e)
        out[k] = 0.5 * (sample.node_value(e) - sample.node_value(ne))
    return out


def _quotient_extrema(sample: EntireSample, k_vec, inner_half: float):
    """(sup, inf) of the second quotient along integer direction k, inner box."""
    q = second_quotient(sample.field, np.asarray(k_vec, dtype=float), 1.0)
    keep = q.valid_mask & sample.inner_mask(inner_half)
    if not np.any(keep):
        raise InvalidArgument(
            f"no valid nodes for direction {tuple(k_vec)} in the inner box"
        )
    vals = q.values[keep]
    return float(vals.max()), float(vals.min())


def default_inner_half(sample: EntireSample, k_max: int) -> float:
    margin = max(2, k_max)
    inner = sample.half_width - margin
    if inner <= 0:
        raise InvalidArgument("sample box too small for the requested directions")
    return inner


def estimate_a(sample: EntireSample, k_max: int = 1,
               inner_half: float | None = None) -> np.ndarray:
    """Recover A from second-quotient suprema via polarization.

    A_ii = sup of the quotient along e_i; the e_i + e_j supremum equals
    (A_ii + 2 A_ij + A_jj) / 2, which is solved for A_ij.
    """
    n = sample.n
    if inner_half is None:
        inner_half = default_inner_half(sample, max(1, k_max))
    a = np.zeros((n, n))
    for i in range(n):
        e = tuple(1 if t == i else 0 for t in range(n))
        a[i, i] = _quotient_extrema(sample, e, inner_half)[0]
    for i in range(n):
        for j in range(i + 1, n):
            e = tuple(1 if t in (i, j) else 0 for t in range(n))
            sup = _quotient_extrema(sample, e, inner_half)[0]
            a[i, j] = a[j, i] = 0.5 * (2.0 * sup - a[i, i] - a[j, j])
    if np.linalg.eigvalsh(a)[0] <= 0:
        log.warning("estimated A is not positive definite: %s", a.tolist())
    return a


def quotient_profile(sample: EntireSample, dirs: LatticeDirectionSet,
                     a_hat: np.ndarray | None = None,
                     inner_half: float | None = None):
    """Per-direction quotient table and gamma = max of the sups.

    Each row records sup and inf of the second quotient over the inner box
    and the gap sup - k'Ak/|k|^2; on synthesized samples every gap vanishes
    by periodic cancellation.
    """
    if a_hat is None:
        a_hat = estimate_a(sample, dirs.k_max, inner_half)
    if inner_half is None:
        inner_half = default_inner_half(sample, dirs.k_max)
    rows = []
    gamma = -np.inf
    for k in dirs.directions:
        kv = np.asarray(k, dtype=float)
        sup, inf = _quotient_extrema(sample, kv, inner_half)
        bound = float(kv @ a_hat @ kv / (kv @ kv))
        rows.append(
            {
                "k": list(k),
                "sup": sup,
                "inf": inf,
                "gap": sup - bound,
            }
        )
        gamma = max(gamma, sup)
    return rows, float(gamma)


# ---------------------------------------------------------------------------
# Scaling limit.

def scaling_rescale(sample: EntireSample, lam: float) -> ScalarField:
    """u_lam(x) = u(lam x) / lam^2 on the unit box, node-exact for integer lam."""
    if lam < 1:
        raise InvalidArgument("scaling factor must be >= 1")
    if lam > sample.half_width + NODE_ALIGN_TOL:
        raise InvalidArgument(
            f"scaling factor {lam} exceeds the box half-width {sample.half_width}"
        )
    lat = sample.field.lattice
    n = lat.n
    r = sample.cells
    target = box_lattice((-1.0,) * n, (1.0,) * n, lat.spacing[:1] * n)
    if abs(lam - round(lam)) <= 1e-9:
        lam_i = int(round(lam))
        # Pure index gather: target node j*h maps to source node lam*j*h.
        take = []
        for ax in range(n):
            j = np.arange(-r, r + 1) * lam_i + sample.center[ax]
            take.append(j)
        mesh = np.meshgrid(*take, indexing="ij")
        vals = sample.field.values[tuple(mesh)] / float(lam) ** 2
        mask = sample.field.valid_mask[tuple(mesh)]
        vals = np.where(mask, vals, np.nan)
        return ScalarField(target, vals, mask)
    out = resample(sample.field, np.eye(n) / lam, np.zeros(n), target)
    return ScalarField(target, out.values / lam**2, out.mask)


def scaling_profile(sample: EntireSample, qp: QuadraticPart, lambdas):
    """Sup over the unit ball of |u_lam - Q - b.x/lam| for each lambda."""
    rows = []
    for lam in lambdas:
        res = scaling_rescale(sample, lam)
        pts = np.stack([g.ravel() for g in res.lattice.nodes()], axis=-1)
        ball = np.sum(pts**2, axis=1) <= 1.0 + NODE_ALIGN_TOL
        quad = 0.5 * np.einsum("mi,ij,mj->m", pts, qp.a, pts) + (pts @ qp.b) / lam
        dev = np.abs(res.values.ravel() - quad)
        keep = ball & res.valid_mask.ravel()
        if not np.any(keep):
            raise InvalidArgument("no valid unit-ball nodes after rescaling")
        rows.append({"lambda": float(lam), "error": float(dev[keep].max())})
    return rows


# ---------------------------------------------------------------------------
# Decay fit.

@dataclass(frozen=True)
class DecayFit:
    slope: float
    c1: float
    delta: float
    degenerate: bool
    # Raw shell data behind the fit; kept for tables, not serialized.
    radii: tuple = ()
    sups: tuple = ()

    def to_dict(self):
        return {
            "slope": self.slope,
            "c1": self.c1,
            "delta": self.delta,
            "degenerate": self.degenerate,
        }


def fit_decay(sample: EntireSample, qp: QuadraticPart, radii=None) -> DecayFit:
    """Fit log sup_{|x|_inf = r} |u - Q - b.x - c| against log r.

    Slope s feeds the decay exponent delta = 2 - s clipped to [0, 2];
    bounded residuals give s near 0, hence delta near 2.  An all-zero
    residual cannot be fit and returns the degenerate flag.
    """
    if radii is None:
        radii = []
        r = 1.0
        while r <= sample.half_width + NODE_ALIGN_TOL:
            radii.append(r)
            r *= 2.0
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise InvalidArgument("need at least 3 radii for a decay fit")
    lat = sample.field.lattice
    pts_inf = np.max(
        np.abs(np.stack([g for g in lat.nodes()], axis=0)), axis=0
    )
    resid = np.abs(
        sample.field.values
        - qp.evaluate(
            np.stack([g.ravel() for g in lat.nodes()], axis=-1)
        ).reshape(lat.shape)
    )
    h = lat.spacing[0]
    sups = []
    for r in radii:
        shell = (
            (pts_inf >= r - 0.5 * h)
            & (pts_inf <= r + 0.5 * h)
            & sample.field.valid_mask
        )
        if not np.any(shell):
            raise InvalidArgument(f"radius {r} has no shell nodes in the box")
        sups.append(float(resid[shell].max()))
    sups = np.asarray(sups)
    shells = (tuple(radii), tuple(float(s) for s in sups))
    if sups.max() < 1e-13:
        return DecayFit(slope=0.0, c1=0.0, delta=2.0, degenerate=True,
                        radii=shells[0], sups=shells[1])
    floor = max(1e-15, 1e-15 * sups.max())
    coef = np.polyfit(np.log(radii), np.log(np.maximum(sups, floor)), 1)
    slope = float(coef[0])
    c1 = float(np.exp(coef[1]))
    delta = float(np.clip(2.0 - slope, 0.0, 2.0))
    return DecayFit(slope=slope, c1=c1, delta=delta, degenerate=False,
                    radii=shells[0], sups=shells[1])


# ---------------------------------------------------------------------------
# The h = w - v bookkeeping.

def anchored_copy(v: PeriodicField, origin_value: float) -> PeriodicField:
    """Shift a periodic field so its origin node carries origin_value."""
    shift = origin_value - float(v.values[(0,) * v.lattice.n])
    return PeriodicField(v.lattice, v.values + shift)


def periodic_residual(sample: EntireSample, qp: QuadraticPart,
                      v: PeriodicField, box_halves):
    """h = (u - Q - b.x) - v with per-box sup/inf rows.

    v must be anchored so h(0) = 0 (the caller uses anchored_copy with
    u(0)); a violation beyond 1e-10 is an invalid-argument error.  The
    constancy certificate is sup - inf on the largest box.
    """
    lat = sample.field.lattice
    pts = np.stack([g.ravel() for g in lat.nodes()], axis=-1)
    w = sample.field.values - (
        0.5 * np.einsum("mi,ij,mj->m", pts, qp.a, pts) + pts @ qp.b
    ).reshape(lat.shape)
    h_vals = w - v.sample_box(lat)
    h = ScalarField(
        lat,
        np.where(sample.field.valid_mask, h_vals, np.nan),
        sample.field.valid_mask,
    )
    origin = h.values[sample.center]
    if not np.isfinite(origin) or abs(origin) > 1e-10:
        raise InvalidArgument(
            f"v is not anchored: h(0) = {origin!r}, expected 0"
        )
    rows = []
    for half in box_halves:
        keep = sample.inner_mask(float(half)) & h.valid_mask
        if not np.any(keep):
            raise InvalidArgument(f"box half-width {half} has no valid nodes")
        vals = h.values[keep]
        rows.append(
            {
                "half_width": float(half),
                "sup": float(vals.max()),
                "inf": float(vals.min()),
                "span": float(vals.max() - vals.min()),
            }
        )
    return h, rows


@dataclass(frozen=True)
class DoublingTrace:
    sizes: list
    sups: list
    constant: float
    verdict: bool

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "sups": self.sups,
            "constant": self.constant,
            "verdict": self.verdict,
        }


def doubling_trace(h: ScalarField, max_levels: int | None = None) -> DoublingTrace:
    """Dyadic-box sups M_s, s = 1, 2, 4, ..., with M_2s <= 4 M_s + C.

    C is calibrated from the first pair as max(0, M_2 - 4 M_1); the verdict
    checks the remaining pairs against the calibrated constant.
    """
    lat = h.lattice
    hw = float(min(np.asarray(lat.hi)))
    sizes = []
    s = 1.0
    while s <= hw + NODE_ALIGN_TOL:
        sizes.append(s)
        s *= 2.0
    if max_levels is not None:
        sizes = sizes[:max_levels]
    if len(sizes) < 2:
        raise InvalidArgument("need boxes up to at least half-width 2")
    coords = np.max(np.abs(np.stack([g for g in lat.nodes()], axis=0)), axis=0)
    sups = []
    for s in sizes:
        keep = (coords <= s + NODE_ALIGN_TOL) & h.valid_mask
        sups.append(float(h.values[keep].max()))
    constant = max(0.0, sups[1] - 4.0 * sups[0])
    verdict = all(
        sups[i] <= 4.0 * sups[i - 1] + constant + 1e-12
        for i in range(1, len(sups))
    )
    return DoublingTrace(sizes=sizes, sups=sups, constant=constant, verdict=verdict)


def harnack_ratio(w: ScalarField, inner_half: float, outer_half: float):
    """sup/inf of a nonnegative difference over the inner box.

    Returns (ratio, capped): the denominator is floored at 1e-14 and capped
    marks a floored (effectively infinite) ratio.  w must be nonnegative on
    the outer box.
    """
    lat = w.lattice
    coords = np.max(np.abs(np.stack([g for g in lat.nodes()], axis=0)), axis=0)
    outer = (coords <= outer_half + NODE_ALIGN_TOL) & w.valid_mask
    if not np.any(outer):
        raise InvalidArgument("outer box has no valid nodes")
    if float(w.values[outer].min()) < -1e-12:
        raise InvalidArgument("w must be nonnegative on the outer box")
    inner = (coords <= inner_half + NODE_ALIGN_TOL) & w.valid_mask
    if not np.any(inner):
        raise InvalidArgument("inner box has no valid nodes")
    sup = float(w.values[inner].max())
    inf = float(w.values[inner].min())
    capped = inf < 1e-14
    return sup / max(inf, 1e-14), capped


# ---------------------------------------------------------------------------
# Linearized comparison of two solutions.

@dataclass(frozen=True)
class ConcavityStats:
    lin_first_min: float
    lin_second_max: float
    violation_fraction: float
    nodes: int

    def to_dict(self):
        return {
            "lin_first_min": self.lin_first_min,
            "lin_second_max": self.lin_second_max,
            "violation_fraction": self.violation_fraction,
            "nodes": self.nodes,
        }


def concavity_residual(u1: ConvexGridFunction, u2: ConvexGridFunction,
                       tol: float = 1e-8) -> ConcavityStats:
    """Sign check of the linearized comparison between two solutions.

    For convex solutions of the same equation, concavity of the operator
    root forces L_1[u2 - u1] >= 0 and L_2[u2 - u1] <= 0, where L_i is the
    linearization at u_i.  Reports extremes and the fraction of full-arm
    nodes violating either sign beyond tol.
    """
    f1, f2 = u1.field, u2.field
    if f1.lattice != f2.lattice:
        raise InvalidArgument("solutions live on different lattices")
    if u1.stencil.directions != u2.stencil.directions:
        raise InvalidArgument("solutions use different stencils")
    a1 = u1.a_matrix
    a2 = u2.a_matrix
    same_a = (a1 is None and a2 is None) or (
        a1 is not None and a2 is not None and np.array_equal(a1, a2)
    )
    if not same_a:
        raise InvalidArgument("solutions carry different quadratic shifts")

    if isinstance(f1, PeriodicField) and isinstance(f2, PeriodicField):
        diff = PeriodicField(f1.lattice, f2.values - f1.values)
    else:
        diff = ScalarField(
            f1.lattice,
            np.where(
                f1.valid_mask & f2.valid_mask, f2.values - f1.values, np.nan
            ),
            f1.valid_mask & f2.valid_mask,
        )
    delta2, valid = directional_second_differences(diff, u1.stencil, None)
    if valid is None:
        ok = np.ones(f1.values.shape, dtype=bool)
        delta2_f = delta2
    else:
        ok = np.all(valid, axis=0)
        delta2_f = np.where(np.isnan(delta2), 0.0, delta2)
    lin1 = linearize(f1, u1.stencil, a1)
    lin2 = linearize(f2, u2.stencil, a2)
    l1 = lin1.apply(delta2_f)
    l2 = lin2.apply(delta2_f)
    if not np.any(ok):
        raise InvalidArgument("no common full-arm nodes")
    l1v = l1[ok]
    l2v = l2[ok]
    bad = (l1v < -tol) | (l2v > tol)
    return ConcavityStats(
        lin_first_min=float(l1v.min()),
        lin_second_max=float(l2v.max()),
        violation_fraction=float(bad.mean()),
        nodes=int(ok.sum()),
    )
