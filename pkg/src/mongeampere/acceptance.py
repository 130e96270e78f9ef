"""Twelve-point verification suite shared by `verify` and the test harness.

Each criterion is a pure function of a SuiteContext; results carry only
deterministic numbers so that two runs of the suite serialize to identical
bytes.  Wall-clock budgets reduce to a within_runtime boolean and the
measured times never enter the results.
"""

from __future__ import annotations

import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from .alexandrov import subdifferential_measure
from .dirichlet import (
    ConvexDomain,
    DirichletProblem,
    box_domain,
    lattice_for,
    solve_dirichlet,
)
from .errors import MongeAmpereError
from .lattice import PeriodicField, ScalarField, box_lattice, make_torus
from .operator import (
    concavity_gap,
    directional_second_differences,
    linearize,
    ma_operator,
)
from .periodic import PeriodicProblem, SolveOptions, compare_solutions, solve_periodic
from .reports import canonical_json
from .stencils import build_stencil
from .structure import (
    LatticeDirectionSet,
    QuadraticPart,
    anchored_copy,
    concavity_residual,
    doubling_trace,
    estimate_a,
    estimate_b,
    harnack_ratio,
    periodic_residual,
    quotient_profile,
    reconstruct_entire,
    scaling_profile,
    synthesize_entire,
)


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    within_runtime: bool
    details: dict

    def to_dict(self) -> dict:
        return {
            "id": self.cid,
            "name": self.name,
            "passed": self.passed,
            "within_runtime": self.within_runtime,
            "details": self.details,
        }

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"criterion {self.cid:2d} {self.name:<28s} {mark}"


class SuiteContext:
    """Workspace and per-run memoization for one evaluation of the suite."""

    def __init__(self, workdir: str | None = None):
        if workdir is None:
            workdir = tempfile.mkdtemp(prefix="ma-verify-")
        os.makedirs(workdir, exist_ok=True)
        self.workdir = workdir
        self._cache: dict = {}

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]


def _closed_form_1d(x):
    # v'' = f - 1 integrates twice against f = 1 + cos(2 pi x)/2.
    return -np.cos(2.0 * np.pi * x) / (8.0 * np.pi**2)


def _solve_cosine(resolution):
    """Periodic solve of the x-only cosine rhs in 1 or 2 dimensions."""
    n = len(resolution)
    tor = make_torus((1.0,) * n, resolution)
    x = tor.nodes()[0]
    f = PeriodicField(tor, 1.0 + 0.5 * np.cos(2.0 * np.pi * x))
    v, sigma, report = solve_periodic(PeriodicProblem(f, np.eye(n)))
    exact = _closed_form_1d(x)
    exact = exact - exact.mean()
    err = float(np.abs(v.values - exact).max())
    return v, sigma, report, err


def _checkerboard_problem(resolution=32):
    tor = make_torus((1.0, 1.0), (resolution, resolution))
    xx, yy = tor.nodes()
    parity = (np.floor(2.0 * xx) + np.floor(2.0 * yy)) % 2
    f = PeriodicField(tor, np.where(parity == 0, 0.5, 1.5))
    return PeriodicProblem(f, np.eye(2))


# ---------------------------------------------------------------------------
# Criteria 1-11.  Each returns (passed, details).

def _c1_flat(ctx):
    tor = make_torus((1.0, 1.0), (64, 64))
    f = PeriodicField(tor, np.ones(tor.shape))
    v, sigma, report = solve_periodic(PeriodicProblem(f, np.eye(2)))
    sup_v = float(np.abs(v.values).max())
    ok = sup_v <= 1e-10 and abs(sigma) <= 1e-12
    return ok, {"sup_v": sup_v, "sigma": sigma, "iterations": report.iterations}


def _c2_closed_form(ctx):
    errors = [_solve_cosine((N,))[3] for N in (64, 128, 256)]
    hs = [1.0 / N for N in (64, 128, 256)]
    order = float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
    ok = errors[-1] <= 1e-4 and order >= 1.5
    return ok, {"resolutions": [64, 128, 256], "errors": errors, "order": order}


def _c3_separable(ctx):
    errors = [_solve_cosine((N, N))[3] for N in (16, 32, 64)]
    decreasing = errors[0] > errors[1] > errors[2]
    ok = errors[-1] <= 1e-2 and decreasing
    return ok, {
        "resolutions": [16, 32, 64],
        "errors": errors,
        "strictly_decreasing": decreasing,
    }


def _c4_gate(ctx):
    import contextlib
    import io

    from . import cli

    outdir = os.path.join(ctx.workdir, "gate-out")
    cfg = os.path.join(ctx.workdir, "gate.cfg")
    with open(cfg, "w") as fh:
        fh.write(
            "periods = 1 1\n"
            "resolution = 32 32\n"
            "A = 1.1 0 0 1\n"  # det A off the unit checkerboard mean by 10%
            "f = checkerboard\n"
        )
    sink = io.StringIO()
    with contextlib.redirect_stderr(sink):
        code = cli.main(["solve-periodic", "--config", cfg, "--out", outdir])
    grid_written = os.path.exists(os.path.join(outdir, "v.ma-grid"))
    ok = code == 2 and not grid_written
    return ok, {
        "exit_code": code,
        "grid_written": grid_written,
        "refused": "compatibility" in sink.getvalue(),
    }


def _c5_uniqueness(ctx):
    problem = _checkerboard_problem()
    vA, sA, repA = solve_periodic(problem, SolveOptions(anchor="mean"))
    rng = np.random.default_rng(7)
    init = PeriodicField(
        problem.f.lattice, 1e-6 * rng.standard_normal(problem.f.lattice.shape)
    )
    vB, sB, repB = solve_periodic(
        problem, SolveOptions(anchor="origin", initial=init)
    )
    dev = compare_solutions(vA, vB)
    ok = dev <= 1e-8
    return ok, {
        "deviation": dev,
        "sigma_mean_anchor": sA,
        "sigma_origin_anchor": sB,
        "iterations": [repA.iterations, repB.iterations],
    }


def _synth_sample_small():
    qp = QuadraticPart(
        np.array([[2.0, 0.5], [0.5, 1.5]]), np.array([0.3, -0.7]), 0.25
    )
    tor = make_torus((1.0, 1.0), (8, 8))
    x, y = tor.nodes()
    v = PeriodicField(
        tor,
        0.015 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)
        + 0.005 * np.sin(2 * np.pi * x),
    )
    box = box_lattice((-6.0, -6.0), (6.0, 6.0), (0.125, 0.125))
    return qp, synthesize_entire(qp, v, box)


def _c6_quotients(ctx):
    qp, sample = ctx.cached("synth-small", _synth_sample_small)
    b_hat = estimate_b(sample)
    a_hat = estimate_a(sample, k_max=3)
    rows, gamma = quotient_profile(sample, LatticeDirectionSet(2, 3), a_hat=a_hat)
    max_gap = max(abs(r["gap"]) for r in rows)
    a_err = float(np.abs(a_hat - qp.a).max())
    b_err = float(np.abs(b_hat - qp.b).max())
    ok = max_gap <= 1e-12 and a_err <= 1e-12 and b_err == 0.0
    return ok, {
        "max_gap": max_gap,
        "a_error": a_err,
        "b_error": b_err,
        "gamma": gamma,
        "directions": len(rows),
    }


def _c7_scaling(ctx):
    qp = QuadraticPart(
        np.array([[1.3, 0.2], [0.2, 0.9]]), np.array([0.4, -0.3]), 0.6
    )
    tor = make_torus((1.0, 1.0), (8, 8))
    x, y = tor.nodes()
    v = PeriodicField(
        tor,
        0.01 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)
        + 0.006 * np.sin(2 * np.pi * y),
    )
    box = box_lattice((-65.0, -65.0), (65.0, 65.0), (0.125, 0.125))
    sample = synthesize_entire(qp, v, box)
    rows = scaling_profile(sample, qp, (4.0, 16.0, 64.0))
    lams = [r["lambda"] for r in rows]
    errs = [r["error"] for r in rows]
    slope = float(np.polyfit(np.log(lams), np.log(errs), 1)[0])
    bound = float(np.abs(v.values).max() + abs(qp.c))
    bound_ok = all(e * l * l <= bound + 1e-9 for e, l in zip(errs, lams))
    ok = slope <= -1.9
    return ok, {"profile": rows, "slope": slope, "rescaled_bound_ok": bound_ok}


def _recon_1d(ctx):
    """1-D cosine reconstructions at L = 2, 4, 8 with their h diagnostics."""

    def build():
        tor = make_torus((1.0,), (64,))
        x = tor.nodes()[0]
        f = PeriodicField(tor, 1.0 + 0.5 * np.cos(2.0 * np.pi * x))
        qp = QuadraticPart(np.array([[1.0]]), np.array([0.25]), 0.0)
        v_hat, _, _ = solve_periodic(PeriodicProblem(f, qp.a))
        spans, verdicts = [], []
        for half in (2.0, 4.0, 8.0):
            sample = reconstruct_entire(f, qp, half, 1.0 / 64.0)
            anchored = anchored_copy(v_hat, sample.node_value((0,)))
            h, rows = periodic_residual(sample, qp, anchored, [1.0])
            spans.append(rows[0]["span"])
            verdicts.append(doubling_trace(h).verdict)
        return spans, verdicts

    return ctx.cached("recon-1d", build)


def _c8_structure(ctx):
    spans, verdicts = _recon_1d(ctx)
    # Discrete exactness pins every span near roundoff, so the monotone
    # decrease is asserted with an absolute slack rather than strictly.
    monotone = all(b <= a + 1e-9 for a, b in zip(spans, spans[1:]))
    ok = monotone and spans[-1] <= 1e-3
    return ok, {
        "half_widths": [2.0, 4.0, 8.0],
        "spans": spans,
        "monotone_with_slack": monotone,
        "final_span": spans[-1],
    }


def _c9_measure(ctx):
    h = 1.0 / 64.0
    dom = box_domain((-1.0, -1.0), (1.0, 1.0))
    lat = lattice_for(dom, (h, h))

    def f(p):
        p = np.atleast_2d(p)
        return 3.0 * np.sum(p**2, axis=1) ** 2

    def g(p):
        p = np.atleast_2d(p)
        return 0.25 * np.sum(p**2, axis=1) ** 2

    u, report = solve_dirichlet(DirichletProblem(dom, f, g, lat))
    mass = subdifferential_measure(u.field).interior_total(1)
    a = 1.0 - h / 2.0
    expected = 112.0 / 15.0 * a**6
    rel = abs(mass - expected) / expected
    ok = rel <= 0.05
    return ok, {
        "interior_mass": mass,
        "expected_integral": expected,
        "relative_error": rel,
        "iterations": report.iterations,
    }


def _c10_scheme(ctx):
    stencil = build_stencil(2, 1)
    tor = make_torus((1.0, 1.0), (8, 8))
    rng = np.random.default_rng(11)
    eye = np.eye(2)
    worst_off, worst_center, moved = 0.0, 0.0, 0
    for _ in range(100):
        amp = 10.0 ** rng.uniform(-3.0, -2.0)
        u = PeriodicField(tor, amp * rng.standard_normal(tor.shape))
        base = ma_operator(u, stencil, eye).values
        xi = tuple(rng.integers(0, 8, size=2))
        d = stencil.directions[rng.integers(0, len(stencil.directions))]
        yi = tuple((xi[k] + d[k]) % 8 for k in range(2))
        t = float(rng.uniform(0.05, 0.5)) * amp
        bumped = u.values.copy()
        bumped[yi] += t
        delta = float(
            ma_operator(PeriodicField(tor, bumped), stencil, eye).values[xi]
            - base[xi]
        )
        worst_off = min(worst_off, delta)
        if abs(delta) > 1e-12:
            moved += 1
        bumped = u.values.copy()
        bumped[xi] += t
        worst_center = max(
            worst_center,
            float(
                ma_operator(PeriodicField(tor, bumped), stencil, eye).values[xi]
                - base[xi]
            ),
        )

    # Jacobian agreement requires a floor-free, tie-free base point.
    tor6 = make_torus((1.0, 1.0), (6, 6))
    u = PeriodicField(tor6, 2e-3 * rng.standard_normal(tor6.shape))
    a_mat = 2.0 * np.eye(2)
    lin = linearize(u, stencil, a_mat)
    floored = int(lin.floored.sum())
    jac_rel = 0.0
    for _ in range(5):
        dv = PeriodicField(tor6, rng.standard_normal(tor6.shape))
        d2dv, _ = directional_second_differences(dv, stencil, None)
        analytic = lin.apply(np.where(np.isnan(d2dv), 0.0, d2dv))
        eps = 1e-6
        fp = ma_operator(
            PeriodicField(tor6, u.values + eps * dv.values), stencil, a_mat
        ).values
        fm = ma_operator(
            PeriodicField(tor6, u.values - eps * dv.values), stencil, a_mat
        ).values
        fd = (fp - fm) / (2.0 * eps)
        jac_rel = max(
            jac_rel,
            float(np.abs(fd - analytic).max() / max(np.abs(analytic).max(), 1e-14)),
        )

    min_gap = np.inf
    for _ in range(1000):
        m1 = rng.standard_normal((2, 2))
        m2 = rng.standard_normal((2, 2))
        min_gap = min(
            min_gap,
            concavity_gap(
                m1 @ m1.T + 0.05 * np.eye(2), m2 @ m2.T + 0.05 * np.eye(2)
            ),
        )
    min_gap = float(min_gap)

    ok = (
        worst_off >= -1e-12
        and worst_center <= 1e-12
        and moved >= 10
        and floored == 0
        and jac_rel <= 1e-6
        and min_gap >= -1e-12
    )
    return ok, {
        "monotone_worst_off": worst_off,
        "monotone_worst_center": worst_center,
        "perturbations_felt": moved,
        "jacobian_relative_error": jac_rel,
        "jacobian_floored_nodes": floored,
        "concavity_min_gap": min_gap,
    }


def _c11_diagnostics(ctx):
    _, verdicts = _recon_1d(ctx)

    def ngon(radius, m=64):
        th = (np.arange(m) + 0.5) * 2.0 * np.pi / m
        return np.stack([radius * np.cos(th), radius * np.sin(th)], axis=-1)

    level = 5.0
    dom1 = ConvexDomain(ngon(np.sqrt(2.0 * level)))
    dom2 = ConvexDomain(ngon(np.sqrt(2.0 * (level + 1.0))))
    lat = box_lattice((-4.0, -4.0), (4.0, 4.0), (0.125, 0.125))

    def f(p):
        p = np.atleast_2d(p)
        return 1.0 + 0.3 * np.cos(2 * np.pi * p[:, 0]) * np.cos(2 * np.pi * p[:, 1])

    def g_at(value):
        return lambda p: np.full(np.atleast_2d(p).shape[0], value)

    u1, _ = solve_dirichlet(DirichletProblem(dom1, f, g_at(level), lat))
    u2, _ = solve_dirichlet(DirichletProblem(dom2, f, g_at(level + 1.0), lat))
    common = u1.field.valid_mask & u2.field.valid_mask
    diff = np.where(common, u2.field.values - u1.field.values, np.nan)
    w = ScalarField(lat, diff - np.nanmin(diff), common)
    harnack = []
    for inner in (0.5, 1.0, 2.0):
        ratio, capped = harnack_ratio(w, inner, 2.0)
        harnack.append(
            {"inner": inner, "outer": 2.0, "ratio": ratio, "capped": capped}
        )
    stats = concavity_residual(u1, u2)
    ok = (
        all(verdicts)
        and all(np.isfinite(r["ratio"]) and not r["capped"] for r in harnack)
        and stats.violation_fraction == 0.0
    )
    return ok, {
        "doubling_verdicts": verdicts,
        "harnack": harnack,
        "concavity": stats.to_dict(),
    }


_BUDGETS = {1: 5.0, 2: 5.0, 3: 30.0, 8: 60.0}

CRITERIA = [
    (1, "flat-rhs", _c1_flat),
    (2, "closed-form-1d", _c2_closed_form),
    (3, "separable-2d", _c3_separable),
    (4, "compatibility-gate", _c4_gate),
    (5, "uniqueness-up-to-constants", _c5_uniqueness),
    (6, "quotient-equality", _c6_quotients),
    (7, "scaling-limit", _c7_scaling),
    (8, "structure-endpoint", _c8_structure),
    (9, "measure-consistency", _c9_measure),
    (10, "monotone-scheme", _c10_scheme),
    (11, "doubling-harnack", _c11_diagnostics),
]

CRITERION_IDS = [cid for cid, _, _ in CRITERIA] + [12]


def run_criterion(ctx: SuiteContext, cid: int) -> CriterionResult:
    """Evaluate one of criteria 1-11 with its runtime budget."""
    for num, name, func in CRITERIA:
        if num == cid:
            break
    else:
        raise ValueError(f"no criterion {cid}")
    start = time.perf_counter()
    try:
        ok, details = func(ctx)
    except MongeAmpereError as exc:
        ok, details = False, {"error": f"{type(exc).__name__}: {exc}"}
    elapsed = time.perf_counter() - start
    budget = _BUDGETS.get(cid)
    within = budget is None or elapsed <= budget
    return CriterionResult(cid, name, ok and within, within, details)


def _run_pass(workdir: str) -> list[CriterionResult]:
    ctx = SuiteContext(workdir)
    return [run_criterion(ctx, cid) for cid, _, _ in CRITERIA]


def run_suite(workdir: str | None = None, only: int | None = None):
    """Run the suite; the determinism row re-evaluates everything afresh.

    Returns a list of CriterionResult.  With `only`, just that row runs
    (the determinism row still needs two full passes).
    """
    if workdir is None:
        workdir = tempfile.mkdtemp(prefix="ma-verify-")
    if only is not None and only != 12:
        ctx = SuiteContext(os.path.join(workdir, "pass1"))
        return [run_criterion(ctx, only)]
    first = _run_pass(os.path.join(workdir, "pass1"))
    second = _run_pass(os.path.join(workdir, "pass2"))
    bytes1 = canonical_json([r.to_dict() for r in first])
    bytes2 = canonical_json([r.to_dict() for r in second])
    identical = bytes1 == bytes2
    det = CriterionResult(
        12,
        "determinism",
        identical,
        True,
        {"identical": identical, "report_bytes": len(bytes1)},
    )
    if only == 12:
        return [det]
    return first + [det]
