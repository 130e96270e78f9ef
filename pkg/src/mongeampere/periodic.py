"""Damped-Newton solver for the periodic Monge-Ampere problem.

Solves the ergodic system

    MA[v](x) = f(x) + sigma  on the torus,    anchor(v) = 0,

for mean-zero (or origin-anchored) periodic v and the scalar ergodic constant
sigma, with MA the monotone wide-stencil operator shifted by the quadratic
part A.  sigma is an unknown of the bordered Newton system; it converges to 0
under refinement when f is compatible (cell average equal to det A).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InfeasibleProblem, InvalidArgument, InvariantViolation, NonConvergence
from .lattice import MollifierSpec, PeriodicField, cell_average, mollify, normalize_rhs
from .operator import (
    CONVEXITY_TOL,
    _linearize_parts,
    _min_products,
    directional_second_differences,
    stencil_geometry,
    theta_floor,
)
from .reports import SolveReport, hoelder_quotients, strided_subsample
from .stencils import build_stencil

log = logging.getLogger("mongeampere.periodic")

COMPAT_LIMIT = 0.05


@dataclass
class PeriodicProblem:
    """Right-hand side samples plus the quadratic part A of the ansatz."""

    f: PeriodicField
    a_matrix: np.ndarray

    def __post_init__(self):
        self.a_matrix = np.asarray(self.a_matrix, dtype=float)
        n = self.f.lattice.n
        if self.a_matrix.shape != (n, n):
            raise InvalidArgument(f"A must be {n}x{n}")
        if not np.allclose(self.a_matrix, self.a_matrix.T, rtol=0, atol=1e-12):
            raise InvalidArgument("A must be symmetric")
        if np.linalg.eigvalsh(self.a_matrix)[0] <= 0:
            raise InfeasibleProblem("A must be positive definite")
        if self.f.values.min() <= 0:
            raise InfeasibleProblem("f must be strictly positive on the torus")

    @property
    def det_a(self) -> float:
        return float(np.linalg.det(self.a_matrix))


@dataclass
class SolveOptions:
    tol: float = 1e-10
    max_newton: int = 200
    armijo: float = 1e-4
    max_halvings: int = 60
    anchor: str = "mean"  # "mean" | "origin"
    anchor_value: float = 0.0
    stencil_width: int = 1
    initial: PeriodicField | None = None
    initial_sigma: float = 0.0
    compat_limit: float = COMPAT_LIMIT


def check_compatibility(f: PeriodicField, a_matrix, limit: float = COMPAT_LIMIT) -> float:
    """Relative mismatch between cell_average(f) and det A; raise above the limit."""
    det_a = float(np.linalg.det(np.asarray(a_matrix, dtype=float)))
    if det_a <= 0:
        raise InfeasibleProblem("det A must be positive")
    mismatch = abs(cell_average(f) - det_a) / abs(det_a)
    if mismatch > limit:
        raise InfeasibleProblem(
            f"compatibility mismatch {mismatch:.3%} exceeds the {limit:.0%} limit: "
            f"cell average {cell_average(f):.6g} vs det A {det_a:.6g}"
        )
    return mismatch


def _anchor_residual(values, options):
    if options.anchor == "mean":
        return float(values.mean())
    if options.anchor == "origin":
        return float(values.flat[0] - options.anchor_value)
    raise InvalidArgument(f"unknown anchor {options.anchor!r}")


def _assemble_jacobian(lin, shape, options, diag_shift=1e-12):
    """Bordered sparse Jacobian [[dMA/dv, -1], [anchor', 0]] in CSC form."""
    size = int(np.prod(shape))
    geom = lin.geom
    idx = np.arange(size, dtype=np.int64).reshape(shape)
    ax = tuple(range(len(shape)))
    rows, cols, data = [], [], []
    diag = np.zeros(shape)
    for d in range(geom.ndir):
        coeff = lin.weights[d] / geom.lengths2[d]
        nz = coeff != 0.0
        if not np.any(nz):
            continue
        step = tuple(int(s) for s in geom.steps[d])
        plus = np.roll(idx, tuple(-s for s in step), axis=ax)
        minus = np.roll(idx, step, axis=ax)
        rows.extend([idx[nz], idx[nz]])
        cols.extend([plus[nz], minus[nz]])
        data.extend([coeff[nz], coeff[nz]])
        diag -= 2.0 * coeff
    # Tiny shift keeps rows of fully floored nodes nonsingular.
    diag -= diag_shift
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    data.append(diag.ravel())
    # sigma column.
    rows.append(idx.ravel())
    cols.append(np.full(size, size, dtype=np.int64))
    data.append(np.full(size, -1.0))
    # anchor row.
    if options.anchor == "mean":
        rows.append(np.full(size, size, dtype=np.int64))
        cols.append(idx.ravel())
        data.append(np.full(size, 1.0 / size))
    else:
        rows.append(np.array([size], dtype=np.int64))
        cols.append(np.array([0], dtype=np.int64))
        data.append(np.array([1.0]))
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size + 1, size + 1),
    )
    return mat.tocsc()


def solve_periodic(problem: PeriodicProblem, options: SolveOptions | None = None):
    """Solve for (v, sigma); returns (PeriodicField, float, SolveReport).

    Damped Newton with Armijo backtracking on the squared residual; the
    active stencil basis is frozen per iteration.  Raises NonConvergence
    (carrying the best iterate) when the line search dies or the iteration
    budget runs out.
    """
    options = options or SolveOptions()
    lattice = problem.f.lattice
    check_compatibility(problem.f, problem.a_matrix, options.compat_limit)
    stencil = build_stencil(lattice.n, options.stencil_width)
    theta = theta_floor(problem.a_matrix)
    f_vals = problem.f.values
    scale = max(1.0, float(np.abs(f_vals).max()))
    tol = options.tol * scale

    if options.initial is not None:
        if options.initial.lattice != lattice:
            raise InvalidArgument("initial guess lives on a different lattice")
        v = options.initial.values.copy()
    else:
        v = np.zeros(lattice.shape)
    sigma = float(options.initial_sigma)

    def node_residual(values, sig):
        delta2, _ = directional_second_differences(
            PeriodicField(lattice, values), stencil, problem.a_matrix
        )
        ma, _, _ = _min_products(delta2, stencil, theta)
        return ma - f_vals - sig, delta2

    trace = []
    best = None
    r_nodes, delta2 = node_residual(v, sigma)
    for iteration in range(options.max_newton):
        r_anchor = _anchor_residual(v, options)
        r_inf = float(np.abs(r_nodes).max())
        trace.append((iteration, r_inf, sigma))
        if best is None or r_inf < best[0]:
            best = (r_inf, v.copy(), sigma)
        log.debug("newton it=%d residual=%.3e sigma=%.3e", iteration, r_inf, sigma)
        if r_inf <= tol and abs(r_anchor) <= tol:
            break

        _, _, weights, _ = _linearize_parts(delta2, stencil, theta)
        geom = stencil_geometry(stencil, lattice)
        lin = _Lin(geom, weights)
        jac = _assemble_jacobian(lin, lattice.shape, options)
        rhs = np.concatenate([r_nodes.ravel(), [r_anchor]])
        try:
            step = spla.spsolve(jac, -rhs)
        except RuntimeError as exc:
            raise NonConvergence(
                f"linear solve failed at iteration {iteration}: {exc}",
                best=(PeriodicField(lattice, best[1]), best[2]),
                residual_inf=best[0],
                iterations=iteration,
            ) from exc
        dv = step[:-1].reshape(lattice.shape)
        dsigma = float(step[-1])

        phi0 = 0.5 * float(rhs @ rhs)
        alpha = 1.0
        accepted = False
        for _ in range(options.max_halvings + 1):
            v_try = v + alpha * dv
            sig_try = sigma + alpha * dsigma
            r_try, delta2_try = node_residual(v_try, sig_try)
            rhs_try = np.concatenate(
                [r_try.ravel(), [_anchor_residual(v_try, options)]]
            )
            phi = 0.5 * float(rhs_try @ rhs_try)
            if phi <= phi0 * (1.0 - 2.0 * options.armijo * alpha):
                v, sigma = v_try, sig_try
                r_nodes, delta2 = r_try, delta2_try
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise NonConvergence(
                f"line search stalled after {options.max_halvings} halvings "
                f"at iteration {iteration} (residual {r_inf:.3e})",
                best=(PeriodicField(lattice, best[1]), best[2]),
                residual_inf=best[0],
                iterations=iteration,
            )
    else:
        raise NonConvergence(
            f"no convergence in {options.max_newton} Newton iterations",
            best=(PeriodicField(lattice, best[1]), best[2]),
            residual_inf=best[0],
            iterations=options.max_newton,
        )

    v_field = PeriodicField(lattice, v)
    report = _build_report(problem, options, v_field, sigma, len(trace) - 1, trace)
    return v_field, sigma, report


class _Lin:
    """Minimal weight carrier for Jacobian assembly."""

    def __init__(self, geom, weights):
        self.geom = geom
        self.weights = weights


def _build_report(problem, options, v_field, sigma, iterations, trace):
    lattice = v_field.lattice
    stencil = build_stencil(lattice.n, options.stencil_width)
    theta = theta_floor(problem.a_matrix)
    delta2, _ = directional_second_differences(v_field, stencil, problem.a_matrix)
    _, _, _, floored = _linearize_parts(delta2, stencil, theta)
    defect = float(delta2.min())

    r_independent = residual(problem, v_field, sigma, options.stencil_width)
    r_inf_ind = float(np.abs(r_independent.values).max())
    ma, _, _ = _min_products(delta2, stencil, theta)
    r_inf_int = float(np.abs(ma - problem.f.values - sigma).max())
    scale = max(1.0, float(np.abs(problem.f.values).max()))
    if abs(r_inf_ind - r_inf_int) > 1e-9 * scale:
        raise InvariantViolation(
            f"independent residual {r_inf_ind:.3e} disagrees with solver residual "
            f"{r_inf_int:.3e}"
        )
    if defect <= 0.0:
        raise InvariantViolation(
            f"converged iterate is not certified convex (defect {defect:.3e})"
        )

    q25, q50 = _gradient_hoelder(v_field)
    return SolveReport(
        iterations=iterations,
        residual_inf=r_inf_ind,
        sigma=float(sigma),
        floored_nodes=int(floored.sum()),
        convexity_defect=defect,
        hoelder_q25=q25,
        hoelder_q50=q50,
        newton_trace=trace,
    )


def _gradient_hoelder(v_field: PeriodicField):
    lattice = v_field.lattice
    vals = v_field.values
    grads = []
    for ax in range(lattice.n):
        h = lattice.spacing[ax]
        grads.append((np.roll(vals, -1, axis=ax) - np.roll(vals, 1, axis=ax)) / (2 * h))
    sub = strided_subsample(lattice.shape)
    pts = np.stack([g[sub].ravel() for g in lattice.nodes()], axis=-1)
    gd = np.stack([g[sub].ravel() for g in grads], axis=-1)
    out = hoelder_quotients(pts, gd, alphas=(0.25, 0.5), periods=lattice.periods)
    return out[0.25], out[0.5]


def residual(problem: PeriodicProblem, v: PeriodicField, sigma: float,
             stencil_width: int = 1) -> PeriodicField:
    """Pointwise MA[v] - f - sigma, evaluated by an independent code path.

    Deliberately shares no assembly code with the solver: factors, floors and
    the min over bases are recomputed here from the stencil definition alone.
    """
    lattice = v.lattice
    a = np.asarray(problem.a_matrix, dtype=float)
    theta = 1e-12 * max(1.0, float(np.max(np.abs(a))))
    stencil = build_stencil(lattice.n, stencil_width)
    h = np.asarray(lattice.spacing, dtype=float)
    axes = tuple(range(lattice.n))
    best = None
    for basis in stencil.bases:
        prod = np.ones(lattice.shape)
        for d in basis:
            direction = np.asarray(stencil.directions[d], dtype=float)
            phys = direction * h
            len2 = float(phys @ phys)
            e = phys / np.sqrt(len2)
            shift = tuple(int(c) for c in stencil.directions[d])
            forward = np.roll(v.values, tuple(-s for s in shift), axis=axes)
            backward = np.roll(v.values, shift, axis=axes)
            factor = float(e @ a @ e) + (forward + backward - 2.0 * v.values) / len2
            prod = prod * np.maximum(factor, theta)
        best = prod if best is None else np.minimum(best, prod)
    return PeriodicField(lattice, best - problem.f.values - sigma)


def compare_solutions(v1: PeriodicField, v2: PeriodicField) -> float:
    """Sup-norm distance modulo the anchor (means are aligned first)."""
    if v1.lattice != v2.lattice:
        raise InvalidArgument("solutions live on different lattices")
    d1 = v1.values - v1.values.mean()
    d2 = v2.values - v2.values.mean()
    return float(np.abs(d1 - d2).max())


def mollified_continuation(problem: PeriodicProblem, epsilons,
                           options: SolveOptions | None = None):
    """Solve through a mollification schedule, warm-starting each stage.

    epsilons is a strictly decreasing list of mollifier widths; after the
    smoothest stage the raw f is solved last.  The report's continuation
    table records per-stage sup distance to the final iterate.
    """
    options = options or SolveOptions()
    eps = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise InvalidArgument("mollification schedule must be strictly decreasing")
    det_a = problem.det_a
    stages = []
    current = options
    v_stage = None
    for e in eps:
        smooth = normalize_rhs(mollify(problem.f, MollifierSpec(e)), det_a)
        sub = PeriodicProblem(smooth, problem.a_matrix)
        v_stage, sig_stage, _ = solve_periodic(sub, current)
        stages.append((e, v_stage))
        current = replace(current, initial=v_stage, initial_sigma=sig_stage)
        log.info("continuation stage eps=%g done", e)
    v, sigma, report = solve_periodic(problem, current)
    report.continuation = [
        {"epsilon": e, "distance_to_final": compare_solutions(vs, v)}
        for e, vs in stages
    ]
    return v, sigma, report
