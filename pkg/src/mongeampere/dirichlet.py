"""Dirichlet solver on convex domains, level-set extraction, John normalization.

The solver reuses the wide-stencil operator of the periodic path but realizes
stencil arms geometrically: an arm that would leave the domain is shortened to
its boundary intersection where the data g is evaluated exactly, and the
second quotient switches to the unequal-arm form

    d2 u = 2/(t+ + t-) [ (u+ - u0)/t+ + (u- - u0)/t- ].

Nodes within a hundredth of a spacing of the boundary are snapped onto it and
carry exact g values, which keeps arm lengths (hence Jacobian entries) bounded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import ConvexHull, QhullError

from .errors import InfeasibleProblem, InvalidArgument, InvariantViolation, NonConvergence
from .lattice import BoxLattice, ScalarField, box_lattice, resample
from .operator import ConvexGridFunction, stencil_geometry, theta_floor
from .reports import SolveReport, hoelder_quotients, strided_subsample
from .stencils import build_stencil

log = logging.getLogger("mongeampere.dirichlet")

SNAP_FRACTION = 1e-2  # boundary snap distance in units of min spacing


class ConvexDomain:
    """Bounded convex domain: an interval (n=1) or a convex polygon (n=2).

    2-D vertices are stored counterclockwise, deduplicated, with collinear
    points dropped; construction canonicalizes arbitrary input point sets by
    taking their convex hull.
    """

    def __init__(self, vertices):
        v = np.atleast_2d(np.asarray(vertices, dtype=float))
        if v.shape[1] == 1:
            if v.shape[0] != 2 or v[0, 0] >= v[1, 0]:
                raise InvalidArgument("interval needs lo < hi")
            self.vertices = v
        elif v.shape[1] == 2:
            if v.shape[0] < 3:
                raise InvalidArgument("polygon needs at least 3 vertices")
            try:
                hull = ConvexHull(v)
            except QhullError as exc:
                raise InvalidArgument(f"degenerate polygon: {exc}") from exc
            verts = v[hull.vertices]  # counterclockwise per qhull
            start = np.lexsort((verts[:, 1], verts[:, 0]))[0]
            self.vertices = np.roll(verts, -start, axis=0)
        else:
            raise InvalidArgument("domains are supported in dimensions 1 and 2")
        self._edges()

    def _edges(self):
        if self.n == 1:
            return
        p = self.vertices
        q = np.roll(p, -1, axis=0)
        d = q - p
        lengths = np.hypot(d[:, 0], d[:, 1])
        if np.any(lengths < 1e-14):
            raise InvalidArgument("polygon has a degenerate edge")
        # Outward normals for counterclockwise orientation.
        self.normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
        self.offsets = np.einsum("ij,ij->i", self.normals, p)

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    @property
    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def signed_distance(self, points) -> np.ndarray:
        """Positive inside; min distance over supporting halfplanes."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.n == 1:
            lo, hi = self.vertices[0, 0], self.vertices[1, 0]
            return np.minimum(pts[:, 0] - lo, hi - pts[:, 0])
        return np.min(self.offsets[None, :] - pts @ self.normals.T, axis=1)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        return self.signed_distance(points) >= -tol

    def project_boundary(self, points) -> np.ndarray:
        """Closest boundary point for each (near-boundary) input point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.n == 1:
            lo, hi = self.vertices[0, 0], self.vertices[1, 0]
            out = np.where(
                np.abs(pts[:, 0] - lo) <= np.abs(hi - pts[:, 0]), lo, hi
            )
            return out[:, None]
        p = self.vertices
        q = np.roll(p, -1, axis=0)
        best = np.full(len(pts), np.inf)
        proj = np.zeros_like(pts)
        for a, b in zip(p, q):
            ab = b - a
            t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
            cand = a + t[:, None] * ab
            dist = np.sum((pts - cand) ** 2, axis=1)
            take = dist < best
            best[take] = dist[take]
            proj[take] = cand[take]
        return proj

    def clip_fraction(self, points, step) -> np.ndarray:
        """Largest t in (0, 1] with point + t*step still inside (points inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        step = np.asarray(step, dtype=float)
        if self.n == 1:
            lo, hi = self.vertices[0, 0], self.vertices[1, 0]
            s = step[0]
            with np.errstate(divide="ignore"):
                t = np.where(s > 0, (hi - pts[:, 0]) / s, (pts[:, 0] - lo) / (-s))
            return np.clip(t, 0.0, 1.0)
        num = self.offsets[None, :] - pts @ self.normals.T  # >= 0 inside
        den = self.normals @ step  # positive components head outward
        t = np.full(pts.shape[0], 1.0)
        for e in range(len(self.offsets)):
            if den[e] > 1e-14:
                t = np.minimum(t, num[:, e] / den[e])
        return np.clip(t, 0.0, 1.0)

    def area(self) -> float:
        if self.n == 1:
            return float(self.vertices[1, 0] - self.vertices[0, 0])
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def interval(lo: float, hi: float) -> ConvexDomain:
    return ConvexDomain(np.array([[float(lo)], [float(hi)]]))


def box_domain(lo, hi) -> ConvexDomain:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.size == 1:
        return interval(float(lo.ravel()[0]), float(hi.ravel()[0]))
    return ConvexDomain(
        np.array(
            [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]
        )
    )


def lattice_for(domain: ConvexDomain, spacing) -> BoxLattice:
    """Smallest spacing-aligned box lattice covering the domain."""
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (domain.n,))
    lo, hi = domain.bounding_box
    lo_idx = np.floor(lo / spacing + 1e-9)
    hi_idx = np.ceil(hi / spacing - 1e-9)
    return box_lattice(lo_idx * spacing, hi_idx * spacing, spacing)


def load_domain_csv(path) -> ConvexDomain:
    """Polygon from a vertex CSV: one 'x,y' line per vertex, '#' comments."""
    rows = []
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InvalidArgument(f"cannot read domain CSV {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise InvalidArgument(
                f"{path}:{lineno}: expected 'x,y', got {raw.rstrip()!r}"
            )
        try:
            rows.append([float(parts[0]), float(parts[1])])
        except ValueError as exc:
            raise InvalidArgument(
                f"{path}:{lineno}: bad vertex {raw.rstrip()!r}"
            ) from exc
    if len(rows) < 3:
        raise InvalidArgument(f"{path}: polygon needs at least 3 vertices")
    return ConvexDomain(np.asarray(rows))


def save_domain_csv(path, domain: ConvexDomain) -> None:
    """Counterclockwise vertex CSV; inverse of load_domain_csv for polygons."""
    if domain.n != 2:
        raise InvalidArgument("vertex CSV serialization is 2-D only")
    with open(path, "w") as fh:
        for x, y in domain.vertices:
            fh.write(f"{x:.17g},{y:.17g}\n")


@dataclass
class DirichletProblem:
    """det D^2 u = f in domain, u = g on its boundary, on a covering lattice.

    f and g are callables on (m, n) point arrays; f must be >= 0 on interior
    nodes (degenerate zeros are allowed, strict positivity is not required on
    this path).
    """

    domain: ConvexDomain
    f: object
    g: object
    lattice: BoxLattice

    def __post_init__(self):
        if self.lattice.n != self.domain.n:
            raise InvalidArgument("lattice dimension does not match domain")
        lo, hi = self.domain.bounding_box
        if np.any(np.asarray(self.lattice.lo) > lo + 1e-12) or np.any(
            np.asarray(self.lattice.hi) < hi - 1e-12
        ):
            raise InvalidArgument("lattice must cover the domain")


@dataclass
class DirichletOptions:
    tol: float = 1e-10
    max_newton: int = 200
    armijo: float = 1e-4
    max_halvings: int = 60
    stencil_width: int = 1
    initial: ScalarField | None = None


class _Discretization:
    """Node classification and per-direction arm data for one problem."""

    def __init__(self, problem: DirichletProblem, stencil):
        self.problem = problem
        self.stencil = stencil
        lattice = problem.lattice
        self.geom = stencil_geometry(stencil, lattice)
        pts = np.stack([g.ravel() for g in lattice.nodes()], axis=-1)
        sdist = problem.domain.signed_distance(pts).reshape(lattice.shape)
        snap = SNAP_FRACTION * min(lattice.spacing)
        self.interior = sdist > snap
        near = np.abs(sdist) <= snap
        self.snapped = near & ~self.interior
        self.valid = self.interior | self.snapped

        self.fixed = np.full(lattice.shape, np.nan)
        if np.any(self.snapped):
            proj = problem.domain.project_boundary(pts[self.snapped.ravel()])
            self.fixed[self.snapped] = np.asarray(problem.g(proj), dtype=float)

        self.uidx = np.full(lattice.shape, -1, dtype=np.int64)
        self.size = int(self.interior.sum())
        if self.size < 5 ** lattice.n:
            raise InvalidArgument(
                f"domain holds only {self.size} interior nodes on this lattice"
            )
        self.uidx[self.interior] = np.arange(self.size)
        self.I = np.argwhere(self.interior)  # (size, n) grid indices
        self.points = pts.reshape(lattice.shape + (lattice.n,))[self.interior]
        self.f_vec = np.asarray(problem.f(self.points), dtype=float)
        if np.any(self.f_vec < 0):
            raise InfeasibleProblem("f must be nonnegative on interior nodes")
        self._build_arms()

    def _build_arms(self):
        lattice = self.problem.lattice
        shape = np.asarray(lattice.shape)
        h = np.asarray(lattice.spacing)
        ndir = self.geom.ndir
        size = self.size
        self.t = np.zeros((ndir, 2, size))      # physical arm lengths
        self.nb = np.full((ndir, 2, size), -1, dtype=np.int64)
        self.fx = np.zeros((ndir, 2, size))     # fixed value where nb < 0
        for d in range(ndir):
            step_nodes = self.geom.steps[d]
            full_len = float(np.sqrt(self.geom.lengths2[d]))
            for s, sign in enumerate((1, -1)):
                q = self.I + sign * step_nodes
                inb = np.all((q >= 0) & (q < shape), axis=1)
                qc = np.clip(q, 0, shape - 1)
                qt = tuple(qc.T)
                neighbor_unknown = inb & (self.uidx[qt] >= 0)
                neighbor_fixed = inb & self.snapped[qt]
                full = neighbor_unknown | neighbor_fixed
                self.t[d, s, full] = full_len
                self.nb[d, s, neighbor_unknown] = self.uidx[qt][neighbor_unknown]
                self.fx[d, s, neighbor_fixed] = self.fixed[qt][neighbor_fixed]
                cut = ~full
                if np.any(cut):
                    step_phys = sign * step_nodes * h
                    frac = self.problem.domain.clip_fraction(
                        self.points[cut], step_phys
                    )
                    if np.any(frac <= 1e-10):
                        raise InvalidArgument(
                            "interior node sits on the boundary; snap failed"
                        )
                    hit = self.points[cut] + frac[:, None] * step_phys
                    self.t[d, s, cut] = frac * full_len
                    self.fx[d, s, cut] = np.asarray(
                        self.problem.g(hit), dtype=float
                    )

    def second_differences(self, u: np.ndarray) -> np.ndarray:
        """(ndir, size) unequal-arm second quotients at the unknown vector u."""
        up = np.where(self.nb[:, 0] >= 0, u[self.nb[:, 0]], self.fx[:, 0])
        um = np.where(self.nb[:, 1] >= 0, u[self.nb[:, 1]], self.fx[:, 1])
        tp, tm = self.t[:, 0], self.t[:, 1]
        return 2.0 / (tp + tm) * ((up - u) / tp + (um - u) / tm)

    def field(self, u: np.ndarray) -> ScalarField:
        vals = self.fixed.copy()
        vals[self.interior] = u
        return ScalarField(self.problem.lattice, vals, self.valid)


def _min_products_flat(delta2, stencil, theta):
    floored = np.maximum(delta2, theta)
    products = np.stack([np.prod(floored[list(b)], axis=0) for b in stencil.bases])
    active = np.argmin(products, axis=0)
    values = np.take_along_axis(products, active[None], axis=0)[0]
    return values, active, floored


def _weights_flat(delta2, stencil, theta):
    values, active, floored = _min_products_flat(delta2, stencil, theta)
    weights = np.zeros_like(delta2)
    floored_flag = np.zeros(delta2.shape[1], dtype=bool)
    for b, basis in enumerate(stencil.bases):
        sel = active == b
        if not np.any(sel):
            continue
        for j in basis:
            # Unit subgradient slope below the floor, as in the periodic path.
            w = np.ones(delta2.shape[1])
            for k in basis:
                if k != j:
                    w = w * floored[k]
            weights[j][sel] = w[sel]
            floored_flag |= sel & ~(delta2[j] > theta)
    return values, weights, floored_flag


def _assemble(disc: _Discretization, weights) -> sp.csc_matrix:
    size = disc.size
    rows, cols, data = [], [], []
    diag = np.zeros(size)
    tp, tm = disc.t[:, 0], disc.t[:, 1]
    for d in range(disc.geom.ndir):
        w = weights[d]
        nz = w != 0.0
        if not np.any(nz):
            continue
        base = 2.0 / (tp[d] + tm[d])
        diag -= w * 2.0 / (tp[d] * tm[d])
        for s, tt in ((0, tp[d]), (1, tm[d])):
            coeff = w * base / tt
            take = nz & (disc.nb[d, s] >= 0)
            if np.any(take):
                rows.append(np.nonzero(take)[0])
                cols.append(disc.nb[d, s][take])
                data.append(coeff[take])
    diag -= 1e-12
    rows.append(np.arange(size))
    cols.append(np.arange(size))
    data.append(diag)
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    ).tocsc()


def _poisson_initial(disc: _Discretization) -> np.ndarray:
    """Solve sum of axis second differences = n * f^(1/n): the standard start."""
    stencil = disc.stencil
    n = disc.problem.lattice.n
    axis_dirs = [
        i for i, v in enumerate(stencil.directions) if sum(c != 0 for c in v) == 1
    ]
    size = disc.size
    rows, cols, data = [], [], []
    diag = np.zeros(size)
    rhs = n * disc.f_vec ** (1.0 / n)
    tp, tm = disc.t[:, 0], disc.t[:, 1]
    for d in axis_dirs:
        base = 2.0 / (tp[d] + tm[d])
        diag -= 2.0 / (tp[d] * tm[d])
        for s, tt in ((0, tp[d]), (1, tm[d])):
            coeff = base / tt
            unknown = disc.nb[d, s] >= 0
            rows.append(np.nonzero(unknown)[0])
            cols.append(disc.nb[d, s][unknown])
            data.append(coeff[unknown])
            rhs[~unknown] -= coeff[~unknown] * disc.fx[d, s][~unknown]
    rows.append(np.arange(size))
    cols.append(np.arange(size))
    data.append(diag)
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    ).tocsc()
    return spla.spsolve(mat, rhs)


def solve_dirichlet(problem: DirichletProblem, options: DirichletOptions | None = None):
    """Damped Newton for the Dirichlet problem; returns (ConvexGridFunction, report)."""
    options = options or DirichletOptions()
    stencil = build_stencil(problem.lattice.n, options.stencil_width)
    disc = _Discretization(problem, stencil)
    theta = theta_floor(None)
    scale = max(1.0, float(np.abs(disc.f_vec).max()))
    tol = options.tol * scale
    # Nodes with f = 0 leave one operator factor free to drift negative
    # inside the floor's dead band; a sub-tolerance positive floor on f pins
    # them without moving the solution beyond solver precision.
    disc.f_vec = np.maximum(disc.f_vec, 0.5 * tol)

    # Default start; a supplied guess overlays it wherever it has values
    # (coarse warm starts are masked near curved boundaries).
    u = _poisson_initial(disc)
    if options.initial is not None:
        guess = options.initial
        if guess.lattice.shape != problem.lattice.shape:
            guess = resample(
                guess,
                np.eye(problem.lattice.n),
                np.zeros(problem.lattice.n),
                problem.lattice,
            )
        vals = guess.values[disc.interior]
        have = guess.valid_mask[disc.interior] & np.isfinite(vals)
        u[have] = vals[have]

    def node_residual(vec):
        delta2 = disc.second_differences(vec)
        ma, _, _ = _min_products_flat(delta2, stencil, theta)
        return ma - disc.f_vec, delta2

    trace = []
    best = None
    r, delta2 = node_residual(u)
    for iteration in range(options.max_newton):
        r_inf = float(np.abs(r).max())
        trace.append((iteration, r_inf, 0.0))
        if best is None or r_inf < best[0]:
            best = (r_inf, u.copy())
        log.debug("dirichlet newton it=%d residual=%.3e", iteration, r_inf)
        if r_inf <= tol:
            break
        _, weights, _ = _weights_flat(delta2, stencil, theta)
        jac = _assemble(disc, weights)
        try:
            step = spla.spsolve(jac, -r)
        except RuntimeError as exc:
            raise NonConvergence(
                f"linear solve failed at iteration {iteration}: {exc}",
                best=disc.field(best[1]),
                residual_inf=best[0],
                iterations=iteration,
            ) from exc
        phi0 = 0.5 * float(r @ r)
        alpha = 1.0
        accepted = False
        for _ in range(options.max_halvings + 1):
            u_try = u + alpha * step
            r_try, delta2_try = node_residual(u_try)
            phi = 0.5 * float(r_try @ r_try)
            if phi <= phi0 * (1.0 - 2.0 * options.armijo * alpha):
                u, r, delta2 = u_try, r_try, delta2_try
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise NonConvergence(
                f"line search stalled at iteration {iteration} "
                f"(residual {r_inf:.3e})",
                best=disc.field(best[1]),
                residual_inf=best[0],
                iterations=iteration,
            )
    else:
        raise NonConvergence(
            f"no convergence in {options.max_newton} Newton iterations",
            best=disc.field(best[1]),
            residual_inf=best[0],
            iterations=options.max_newton,
        )

    field = disc.field(u)
    defect = float(delta2.min())
    _, weights, floored_flag = _weights_flat(delta2, stencil, theta)

    r_ind = _independent_residual(disc, u, theta)
    r_inf_ind = float(np.abs(r_ind).max())
    r_inf_int = float(np.abs(r).max())
    if abs(r_inf_ind - r_inf_int) > 1e-9 * scale:
        raise InvariantViolation(
            f"independent residual {r_inf_ind:.3e} disagrees with solver "
            f"residual {r_inf_int:.3e}"
        )

    q25, q50 = _dirichlet_hoelder(field)
    report = SolveReport(
        iterations=len(trace) - 1,
        residual_inf=r_inf_ind,
        sigma=0.0,
        floored_nodes=int(floored_flag.sum()),
        convexity_defect=defect,
        hoelder_q25=q25,
        hoelder_q50=q50,
        newton_trace=trace,
    )
    solution = ConvexGridFunction(field, stencil, defect=defect)
    return solution, report


def _independent_residual(disc: _Discretization, u, theta):
    """Residual recomputed without the solver's evaluation helpers."""
    tp, tm = disc.t[:, 0], disc.t[:, 1]
    up = np.where(disc.nb[:, 0] >= 0, u[disc.nb[:, 0]], disc.fx[:, 0])
    um = np.where(disc.nb[:, 1] >= 0, u[disc.nb[:, 1]], disc.fx[:, 1])
    quot = 2.0 / (tp + tm) * ((up - u) / tp + (um - u) / tm)
    best = None
    for basis in disc.stencil.bases:
        prod = np.ones(disc.size)
        for d in basis:
            prod = prod * np.maximum(quot[d], theta)
        best = prod if best is None else np.minimum(best, prod)
    return best - disc.f_vec


def _dirichlet_hoelder(field: ScalarField):
    lattice = field.lattice
    vals = field.values
    valid = field.valid_mask
    grads = []
    ok = valid.copy()
    for ax in range(lattice.n):
        h = lattice.spacing[ax]
        g = np.full(vals.shape, np.nan)
        sl_c = tuple(
            slice(1, -1) if a == ax else slice(None) for a in range(lattice.n)
        )
        sl_p = tuple(
            slice(2, None) if a == ax else slice(None) for a in range(lattice.n)
        )
        sl_m = tuple(
            slice(0, -2) if a == ax else slice(None) for a in range(lattice.n)
        )
        g[sl_c] = (vals[sl_p] - vals[sl_m]) / (2 * h)
        grads.append(g)
        okx = np.zeros(vals.shape, dtype=bool)
        okx[sl_c] = valid[sl_p] & valid[sl_m] & valid[sl_c]
        ok &= okx
    sub = strided_subsample(lattice.shape)
    keep = np.zeros(vals.shape, dtype=bool)
    keep[sub] = True
    keep &= ok
    if keep.sum() < 2:
        return 0.0, 0.0
    pts = np.stack([c[keep] for c in lattice.nodes()], axis=-1)
    gd = np.stack([g[keep] for g in grads], axis=-1)
    out = hoelder_quotients(pts, gd, alphas=(0.25, 0.5))
    return out[0.25], out[0.5]


# ---------------------------------------------------------------------------
# Level sets.

def sublevel_set(u, level: float):
    """Extract {u < level} as a ConvexDomain; returns (domain, hull_defect).

    Marching-segment crossings on lattice edges feed a convex hull; the
    defect is the largest distance from a raw crossing point to the hull
    boundary, measuring how non-convex the raw level set was.
    """
    field = u.field if hasattr(u, "field") else u
    lattice = field.lattice
    vals = field.values
    valid = field.valid_mask
    if not np.any(valid & (vals < level)):
        raise InvalidArgument(f"level {level} is at or below the minimum")

    edge_nodes = np.zeros(vals.shape, dtype=bool)
    for ax in range(lattice.n):
        sl_lo = tuple(0 if a == ax else slice(None) for a in range(lattice.n))
        sl_hi = tuple(-1 if a == ax else slice(None) for a in range(lattice.n))
        edge_nodes[sl_lo] = True
        edge_nodes[sl_hi] = True
    # A valid sub-level node on the outermost ring means the set escapes.
    ring = edge_nodes & valid
    if np.any(vals[ring] < level):
        raise InvalidArgument("sublevel set reaches the sample boundary")

    points = []
    for ax in range(lattice.n):
        sl_a = tuple(slice(0, -1) if a == ax else slice(None) for a in range(lattice.n))
        sl_b = tuple(slice(1, None) if a == ax else slice(None) for a in range(lattice.n))
        va, vb = vals[sl_a], vals[sl_b]
        ok = valid[sl_a] & valid[sl_b]
        straddle = ok & ((va - level) * (vb - level) < 0)
        if not np.any(straddle):
            continue
        t = (level - va[straddle]) / (vb[straddle] - va[straddle])
        coords_a = np.stack(
            [c[sl_a][straddle] for c in lattice.nodes()], axis=-1
        )
        step = np.zeros(lattice.n)
        step[ax] = lattice.spacing[ax]
        points.append(coords_a + t[:, None] * step)
    if not points:
        raise InvalidArgument("level set produced no crossings")
    pts = np.concatenate(points, axis=0)

    if lattice.n == 1:
        lo, hi = float(pts.min()), float(pts.max())
        if hi - lo < 1e-12:
            raise InvalidArgument("level set is degenerate")
        return interval(lo, hi), 0.0
    if len(pts) < 3:
        raise InvalidArgument("level set is degenerate")
    domain = ConvexDomain(pts)
    defect = float(np.max(_distance_to_polygon(pts, domain)))
    return domain, defect


def _distance_to_polygon(points, domain: ConvexDomain):
    p = domain.vertices
    q = np.roll(p, -1, axis=0)
    best = np.full(len(points), np.inf)
    for a, b in zip(p, q):
        ab = b - a
        t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
        cand = a + t[:, None] * ab
        best = np.minimum(best, np.sqrt(np.sum((points - cand) ** 2, axis=1)))
    return best


# ---------------------------------------------------------------------------
# John normalization.

@dataclass(frozen=True)
class JohnMap:
    """Volume-preserving affine normalization x -> a x + b with sandwich radius R.

    B_R subset a(domain) + b subset B_{nR}, det a = 1.
    """

    a: np.ndarray
    b: np.ndarray
    radius: float

    def apply(self, points):
        return np.atleast_2d(points) @ self.a.T + self.b

    def to_dict(self):
        return {
            "a": [float(x) for x in np.asarray(self.a).ravel(order="C")],
            "b": [float(x) for x in np.asarray(self.b).ravel()],
            "R": float(self.radius),
        }


def _mvee(points, tol=1e-8, max_iter=100_000):
    """Minimum-volume enclosing ellipsoid by Khachiyan ascent with away steps.

    Away steps (Todd-Yildirim) drain weight from over-weighted support
    points; without them the plain update dithers on near-cocircular vertex
    sets and misses tight tolerances.  Returns (center, shape) with the
    ellipsoid {x : (x-c)' S (x-c) <= 1}.
    """
    pts = np.asarray(points, dtype=float)
    k, d = pts.shape
    q = np.column_stack([pts, np.ones(k)])
    u = np.full(k, 1.0 / k)
    target = d + 1.0
    for _ in range(int(max_iter)):
        x = q.T @ (u[:, None] * q)
        m = np.einsum("ij,ij->i", q @ np.linalg.inv(x), q)
        j_up = int(np.argmax(m))
        excess = m[j_up] - target
        support = u > 1e-12
        m_support = np.where(support, m, np.inf)
        j_dn = int(np.argmin(m_support))
        deficit = target - m_support[j_dn]
        if max(excess, deficit) <= target * tol:
            break
        if excess >= deficit:
            j, mj = j_up, m[j_up]
            step = (mj - target) / (target * (mj - 1.0))
        else:
            j, mj = j_dn, m_support[j_dn]
            step = (mj - target) / (target * (mj - 1.0))  # negative
            step = max(step, -u[j] / (1.0 - u[j]))
        u = (1.0 - step) * u
        u[j] += step
    else:
        raise NonConvergence("minimum-volume ellipsoid iteration cap exceeded")
    center = pts.T @ u
    cov = pts.T @ (u[:, None] * pts) - np.outer(center, center)
    shape = np.linalg.inv(cov) / d
    # Guarantee coverage despite the finite tolerance.
    rel = np.einsum("ij,jk,ik->i", pts - center, shape, pts - center)
    worst = float(rel.max())
    if worst > 1.0:
        shape = shape / worst
    return center, shape


def john_normalize(domain: ConvexDomain, tol: float = 1e-8,
                   max_iter: int = 100_000) -> JohnMap:
    """John-position normalization of a convex domain.

    Maps the minimum-volume enclosing ellipsoid to the ball of radius nR
    about the origin by a determinant-one affine map; John's lemma then
    sandwiches the image between B_R and B_{nR}.  The sandwich is verified
    on the domain's vertices and edge distances before returning.
    """
    n = domain.n
    if n == 1:
        lo, hi = domain.vertices[0, 0], domain.vertices[1, 0]
        jm = JohnMap(np.eye(1), np.array([-(lo + hi) / 2.0]), (hi - lo) / 2.0)
        return jm
    center, shape = _mvee(domain.vertices, tol, max_iter)
    lam, vec = np.linalg.eigh(shape)
    if lam[0] <= 0:
        raise InvariantViolation("enclosing ellipsoid is degenerate")
    rho = float(np.prod(lam) ** (-1.0 / (2.0 * n)))  # geometric mean semi-axis
    a = rho * (vec * np.sqrt(lam)) @ vec.T  # rho * shape^(1/2), det = 1
    b = -a @ center
    radius = rho / n
    jm = JohnMap(a, b, radius)

    if abs(np.linalg.det(a) - 1.0) > 1e-10:
        raise InvariantViolation("John map determinant deviates from 1")
    mapped = jm.apply(domain.vertices)
    outer = float(np.max(np.hypot(mapped[:, 0], mapped[:, 1])))
    if outer > n * radius * (1.0 + 1e-5):
        raise InvariantViolation(
            f"outer sandwich violated: vertex radius {outer} > {n * radius}"
        )
    image = ConvexDomain(mapped)
    inner = float(np.min(image.offsets))  # distance from origin to each edge
    if inner < radius * (1.0 - 1e-5):
        raise InvariantViolation(
            f"inner sandwich violated: edge distance {inner} < {radius}"
        )
    return jm


def section_rescale(u, john_map: JohnMap, target: BoxLattice | None = None) -> ScalarField:
    """Normalize a solution over a section: u_M(x) = u(A^{-1}(R x)) / R^2.

    A is the full John map y -> a y + b; the image of the domain under
    A/R lands between B_1 and B_n, so the default target is the box
    [-n, n]^n at 129 nodes per axis.
    """
    field = u.field if hasattr(u, "field") else u
    n = field.lattice.n
    big_r = john_map.radius
    if target is None:
        target = BoxLattice((-float(n),) * n, (float(n),) * n, (129,) * n)
    out = resample(field, john_map.a / big_r, john_map.b / big_r, target)
    out.values /= big_r**2
    return ScalarField(target, out.values, out.mask)
