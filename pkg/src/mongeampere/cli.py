"""Command line front end: solve-periodic, solve-dirichlet, analyze, verify.

Problems come from flat key = value config files; outputs are ma-grid files,
canonical JSON reports carrying the config digest and input checksums, CSV
tables, and (unless figures = off) PNG renderings.  Exit codes: 0 ok,
1 usage or parse, 2 infeasible, 3 non-convergence, 4 invariant gate failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import figures
from .config import REQUIRED, ConfigError, RunConfig
from .dirichlet import (
    ConvexDomain,
    DirichletOptions,
    DirichletProblem,
    box_domain,
    john_normalize,
    lattice_for,
    load_domain_csv,
    solve_dirichlet,
)
from .errors import (
    InfeasibleProblem,
    InvalidArgument,
    InvariantViolation,
    MongeAmpereError,
    NonConvergence,
)
from .gridio import file_checksum, read_grid, write_grid
from .lattice import PeriodicField, ScalarField, make_torus, normalize_rhs
from .operator import ConvexGridFunction
from .periodic import (
    PeriodicProblem,
    SolveOptions,
    check_compatibility,
    mollified_continuation,
    solve_periodic,
)
from .reports import StructureReport, write_csv, write_json
from .stencils import build_stencil
from .structure import (
    EntireSample,
    LatticeDirectionSet,
    QuadraticPart,
    anchored_copy,
    concavity_residual,
    doubling_trace,
    estimate_a,
    estimate_b,
    fit_decay,
    harnack_ratio,
    periodic_residual,
    quotient_profile,
    scaling_profile,
)

log = logging.getLogger("mongeampere.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("MA_LOG", "error").strip().lower()
    level = _LOG_LEVELS.get(name)
    if level is None:
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("mongeampere").setLevel(level)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _apply_threads(n: int) -> None:
    if not n:
        return  # 0 keeps the implementation default
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        log.info("--threads recorded in the environment only (no threadpoolctl)")


def _resolve(cfg: RunConfig, rel: str) -> str:
    base = os.path.dirname(cfg.path) if cfg.path else "."
    return os.path.normpath(os.path.join(base, rel))


# ---------------------------------------------------------------------------
# Right-hand-side and boundary builders.

def _periodic_rhs(cfg: RunConfig, seed: int, inputs: dict):
    """Torus lattice plus f samples from the config's f source."""
    spec = cfg.get_str("f", REQUIRED)
    if spec.startswith("grid:"):
        path = _resolve(cfg, spec[len("grid:"):].strip())
        field = read_grid(path)
        if not isinstance(field, PeriodicField):
            raise ConfigError(f"{path}: f grid must be periodic")
        inputs[path] = file_checksum(path)
        # periods/resolution may still appear; they must agree with the file.
        resolution = cfg.get_ints("resolution", None)
        periods = cfg.get_floats("periods", None)
        lat = field.lattice
        if resolution is not None and tuple(resolution) != lat.resolution:
            raise ConfigError(
                f"{cfg.name}: resolution disagrees with {path} "
                f"({tuple(resolution)} vs {lat.resolution})"
            )
        if periods is not None and not np.allclose(
            periods, lat.periods, rtol=0, atol=1e-12
        ):
            raise ConfigError(f"{cfg.name}: periods disagree with {path}")
        return lat, field

    resolution = cfg.get_ints("resolution", REQUIRED)
    periods = cfg.get_floats("periods", [1.0] * len(resolution))
    if len(periods) != len(resolution):
        raise ConfigError(
            f"{cfg.name}: periods lists {len(periods)} entries, "
            f"resolution lists {len(resolution)}"
        )
    torus = make_torus(periods, resolution)
    nodes = torus.nodes()

    if spec == "constant":
        values = np.full(torus.shape, cfg.get_float("f_value", 1.0))
    elif spec in ("cosine-1d", "separable"):
        if spec == "cosine-1d" and torus.n != 1:
            raise ConfigError(f"{cfg.name}: cosine-1d needs a 1-D torus")
        amp = cfg.get_float("f_amplitude", 0.5)
        if abs(amp) >= 1.0:
            raise ConfigError(f"{cfg.name}: f_amplitude must stay below 1")
        values = 1.0 + amp * np.cos(2.0 * np.pi * nodes[0] / periods[0])
    elif spec == "checkerboard":
        lo = cfg.get_float("f_lo", 0.5)
        hi = cfg.get_float("f_hi", 1.5)
        if lo <= 0 or hi <= 0:
            raise ConfigError(f"{cfg.name}: checkerboard values must be positive")
        parity = np.zeros(torus.shape)
        for ax in range(torus.n):
            parity += np.floor(2.0 * nodes[ax] / periods[ax])
        values = np.where(parity % 2 == 0, lo, hi)
    elif spec == "seeded-noise":
        lo = cfg.get_float("f_lo", 0.5)
        hi = cfg.get_float("f_hi", 2.0)
        if lo <= 0 or hi <= lo:
            raise ConfigError(f"{cfg.name}: noise range needs 0 < f_lo < f_hi")
        rng = np.random.default_rng(seed)
        values = rng.uniform(lo, hi, size=torus.shape)
    else:
        raise ConfigError(f"{cfg.name}: unknown f source {spec!r}")
    return torus, PeriodicField(torus, values)


def _dirichlet_rhs(cfg: RunConfig, n: int):
    spec = cfg.get_choice("f", {"constant", "radial", "checkerboard"}, "constant")
    if spec == "constant":
        value = cfg.get_float("f_value", 1.0)

        def f(p):
            return np.full(np.atleast_2d(p).shape[0], value)

    elif spec == "radial":
        # f matching the quartic reference u = |x|^4 / 4 in dimension n.

        def f(p):
            p = np.atleast_2d(p)
            return 3.0 * np.sum(p**2, axis=1) ** n

    else:
        lo = cfg.get_float("f_lo", 0.5)
        hi = cfg.get_float("f_hi", 1.5)

        def f(p):
            p = np.atleast_2d(p)
            parity = np.floor(2.0 * p).sum(axis=1)
            return np.where(parity % 2 == 0, lo, hi)

    return f


def _dirichlet_boundary(cfg: RunConfig):
    spec = cfg.get_choice("g", {"zero", "constant", "quadratic", "radial"}, "zero")
    if spec == "zero":
        return lambda p: np.zeros(np.atleast_2d(p).shape[0])
    if spec == "constant":
        value = cfg.get_float("g_value", 0.0)
        return lambda p: np.full(np.atleast_2d(p).shape[0], value)
    if spec == "quadratic":
        return lambda p: 0.5 * np.sum(np.atleast_2d(p) ** 2, axis=1)
    return lambda p: 0.25 * np.sum(np.atleast_2d(p) ** 2, axis=1) ** 2


def _reference(cfg: RunConfig):
    spec = cfg.get_choice("reference", {"none", "quadratic", "radial"}, "none")
    if spec == "none":
        return None
    if spec == "quadratic":
        return lambda p: 0.5 * np.sum(np.atleast_2d(p) ** 2, axis=1)
    return lambda p: 0.25 * np.sum(np.atleast_2d(p) ** 2, axis=1) ** 2


def _build_domain(cfg: RunConfig, inputs: dict) -> ConvexDomain:
    kind = cfg.get_choice("domain", {"box", "disk", "polygon"}, REQUIRED)
    if kind == "box":
        lo = cfg.get_floats("domain_lo", REQUIRED)
        hi = cfg.get_floats("domain_hi", REQUIRED)
        if len(lo) != len(hi):
            raise ConfigError(f"{cfg.name}: domain_lo/domain_hi lengths differ")
        return box_domain(lo, hi)
    if kind == "disk":
        radius = cfg.get_float("radius", 1.0)
        segments = cfg.get_int("segments", 64)
        center = cfg.get_floats("center", [0.0, 0.0])
        if radius <= 0 or segments < 3 or len(center) != 2:
            raise ConfigError(f"{cfg.name}: bad disk parameters")
        th = (np.arange(segments) + 0.5) * 2.0 * np.pi / segments
        ring = np.stack(
            [center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)],
            axis=-1,
        )
        return ConvexDomain(ring)
    path = cfg.get_path("domain_csv", REQUIRED)
    domain = load_domain_csv(path)
    inputs[path] = file_checksum(path)
    return domain


# ---------------------------------------------------------------------------
# Commands.

def _seed_of(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        cfg.used.add("seed")
        return args.seed
    return cfg.get_int("seed", 0)


def cmd_solve_periodic(args) -> int:
    cfg = RunConfig.from_file(args.config)
    inputs: dict = {}
    torus, f = _periodic_rhs(cfg, _seed_of(args, cfg), inputs)
    n = torus.n
    a_list = cfg.get_floats("A", None)
    if a_list is None:
        a_mat = np.eye(n)
    else:
        if len(a_list) != n * n:
            raise ConfigError(f"{cfg.name}: A needs {n * n} row-major entries")
        a_mat = np.asarray(a_list).reshape(n, n)
    if cfg.get_bool("f_normalize", False):
        f = normalize_rhs(f, float(np.linalg.det(a_mat)))
    options = SolveOptions(
        tol=cfg.get_float("tol", 1e-10),
        max_newton=cfg.get_int("max_newton", 200),
        anchor=cfg.get_choice("anchor", {"mean", "origin"}, "mean"),
        anchor_value=cfg.get_float("anchor_value", 0.0),
        stencil_width=cfg.get_int("stencil_width", 1),
    )
    use_continuation = cfg.get_bool("continuation", False)
    schedule = cfg.get_floats("continuation_schedule", [0.25, 0.125, 0.0625])
    render = cfg.get_bool("figures", True)
    cfg.reject_unknown()

    check_compatibility(f, a_mat)  # infeasible data fails before any solve
    problem = PeriodicProblem(f, a_mat)
    if use_continuation:
        v, sigma, report = mollified_continuation(problem, schedule, options)
    else:
        v, sigma, report = solve_periodic(problem, options)

    out = args.out
    os.makedirs(out, exist_ok=True)
    write_grid(os.path.join(out, "v.ma-grid"), v)
    write_json(
        os.path.join(out, "report.json"),
        {
            "command": "solve-periodic",
            "config_digest": cfg.digest,
            "inputs": inputs,
            "solve": report.to_dict(),
        },
    )
    if render and n <= 2:
        figures.save_field(os.path.join(out, "v.png"), v, "periodic part v")
    print(
        f"solve-periodic: {report.iterations} iterations, "
        f"residual {report.residual_inf:.3e}, sigma {sigma:.6e}"
    )
    return 0


def cmd_solve_dirichlet(args) -> int:
    cfg = RunConfig.from_file(args.config)
    inputs: dict = {}
    domain = _build_domain(cfg, inputs)
    n = domain.n
    f = _dirichlet_rhs(cfg, n)
    g = _dirichlet_boundary(cfg)
    reference = _reference(cfg)
    spacings = cfg.get_floats("spacings", None)
    if spacings is None:
        spacings = [cfg.get_float("spacing", REQUIRED)]
    options_base = dict(
        tol=cfg.get_float("tol", 1e-10),
        max_newton=cfg.get_int("max_newton", 200),
        stencil_width=cfg.get_int("stencil_width", 1),
    )
    render = cfg.get_bool("figures", True)
    cfg.reject_unknown()

    rows = []
    solution = report = None
    for h in spacings:
        if h <= 0:
            raise ConfigError(f"{cfg.name}: spacing must be positive")
        lat = lattice_for(domain, (h,) * n)
        problem = DirichletProblem(domain, f, g, lat)
        solution, report = solve_dirichlet(problem, DirichletOptions(**options_base))
        row = {
            "spacing": h,
            "nodes": int(np.prod(lat.shape)),
            "iterations": report.iterations,
            "residual_inf": report.residual_inf,
        }
        if reference is not None:
            pts = np.stack([c.ravel() for c in lat.nodes()], axis=-1)
            exact = reference(pts).reshape(lat.shape)
            keep = solution.field.valid_mask
            row["sup_error"] = float(
                np.abs(solution.field.values - exact)[keep].max()
            )
        rows.append(row)
        log.info("spacing %g done: %s", h, row)

    out = args.out
    os.makedirs(out, exist_ok=True)
    write_grid(os.path.join(out, "u.ma-grid"), solution.field)
    write_json(
        os.path.join(out, "report.json"),
        {
            "command": "solve-dirichlet",
            "config_digest": cfg.digest,
            "inputs": inputs,
            "solve": report.to_dict(),
            "john": john_normalize(domain).to_dict(),
        },
    )
    if reference is not None or len(rows) > 1:
        header = list(rows[0].keys())
        write_csv(
            os.path.join(out, "errors.csv"),
            header,
            [[row[k] for k in header] for row in rows],
        )
    if render and n <= 2:
        figures.save_field(os.path.join(out, "u.png"), solution.field, "solution u")
    last = rows[-1]
    tail = f", sup error {last['sup_error']:.3e}" if "sup_error" in last else ""
    print(
        f"solve-dirichlet: {last['iterations']} iterations at spacing "
        f"{last['spacing']:g}, residual {last['residual_inf']:.3e}{tail}"
    )
    return 0


def cmd_analyze(args) -> int:
    cfg = RunConfig.from_file(args.config)
    inputs: dict = {}
    sample_path = cfg.get_path("sample", REQUIRED)
    field = read_grid(sample_path)
    if not isinstance(field, ScalarField):
        raise InvalidArgument(f"{sample_path}: analyze expects a box-lattice sample")
    inputs[sample_path] = file_checksum(sample_path)
    torus, f = _periodic_rhs(cfg, _seed_of(args, cfg), inputs)
    if torus.n != field.lattice.n:
        raise ConfigError(f"{cfg.name}: f and sample dimensions differ")
    k_max = cfg.get_int("k_max", 3)
    lambdas = cfg.get_floats("lambdas", [4.0, 16.0, 64.0])
    radii = cfg.get_floats("radii", None)
    boxes = cfg.get_floats("boxes", None)
    tol = cfg.get_float("tol", 1e-10)
    stencil_width = cfg.get_int("stencil_width", 1)
    render = cfg.get_bool("figures", True)
    cfg.reject_unknown()

    sample = EntireSample(field, f=f, provenance="loaded")  # convexity gate
    n = sample.n
    b_hat = estimate_b(sample)
    a_hat = estimate_a(sample, k_max=k_max)
    check_compatibility(f, a_hat)
    rows, gamma = quotient_profile(sample, LatticeDirectionSet(n, k_max), a_hat=a_hat)
    qp_hat = QuadraticPart(a_hat, b_hat, 0.0)

    v_hat, sigma, solve_rep = solve_periodic(
        PeriodicProblem(f, a_hat),
        SolveOptions(tol=tol, stencil_width=stencil_width),
    )
    anchored = anchored_copy(v_hat, sample.node_value((0,) * n))
    if boxes is None:
        boxes = []
        half = 1.0
        while half <= sample.half_width + 1e-9:
            boxes.append(half)
            half *= 2.0
        if not boxes:
            boxes = [sample.half_width]
    h, h_rows = periodic_residual(sample, qp_hat, anchored, boxes)
    doubling = doubling_trace(h)
    shift = float(np.nanmin(np.where(h.valid_mask, h.values, np.nan)))
    w = ScalarField(
        h.lattice,
        np.where(h.valid_mask, h.values - shift, np.nan),
        h.valid_mask,
    )
    harnack_rows = []
    for inner in boxes[:-1]:
        ratio, capped = harnack_ratio(w, inner, boxes[-1])
        harnack_rows.append(
            {"inner": inner, "outer": boxes[-1], "ratio": ratio, "capped": capped}
        )
    decay = fit_decay(sample, qp_hat, radii)
    usable = [lam for lam in lambdas if lam <= sample.half_width + 1e-9]
    scaling_rows = scaling_profile(sample, qp_hat, usable) if usable else []

    # Linearized comparison of the sample against its structural model
    # Q + b.x + v; both solve the same equation up to the decomposition error.
    stencil = build_stencil(n, stencil_width)
    pts = np.stack([c.ravel() for c in field.lattice.nodes()], axis=-1)
    model_vals = qp_hat.evaluate(pts).reshape(field.lattice.shape) + anchored.sample_box(
        field.lattice
    )
    model = ScalarField(field.lattice, model_vals, field.valid_mask)
    stats = concavity_residual(
        ConvexGridFunction(field, stencil), ConvexGridFunction(model, stencil)
    )

    report = StructureReport(
        a_matrix=a_hat.tolist(),
        b_vector=b_hat.tolist(),
        gamma=gamma,
        quotient_table=rows,
        decay=decay.to_dict(),
        scaling_errors=scaling_rows,
        h_stats=h_rows,
        doubling=doubling.to_dict(),
        harnack=harnack_rows,
        concavity=stats.to_dict(),
    )
    out = args.out
    os.makedirs(out, exist_ok=True)
    write_json(
        os.path.join(out, "structure-report.json"),
        {
            "command": "analyze",
            "config_digest": cfg.digest,
            "inputs": inputs,
            "structure": report.to_dict(),
            "solve": solve_rep.to_dict(),
        },
    )
    write_csv(
        os.path.join(out, "quotient.csv"),
        [f"k{i + 1}" for i in range(n)] + ["sup", "inf", "gap"],
        [list(r["k"]) + [r["sup"], r["inf"], r["gap"]] for r in rows],
    )
    write_csv(
        os.path.join(out, "decay.csv"),
        ["radius", "sup_residual"],
        list(zip(decay.radii, decay.sups)),
    )
    write_csv(
        os.path.join(out, "scaling.csv"),
        ["lambda", "error"],
        [[r["lambda"], r["error"]] for r in scaling_rows],
    )
    write_csv(
        os.path.join(out, "hstats.csv"),
        ["half_width", "sup", "inf", "span"],
        [[r["half_width"], r["sup"], r["inf"], r["span"]] for r in h_rows],
    )
    if render:
        figures.save_gap_bars(
            os.path.join(out, "quotient-gaps.png"), rows, "second-quotient gaps"
        )
        figures.save_loglog(
            os.path.join(out, "decay.png"),
            decay.radii,
            decay.sups,
            "box radius",
            "sup |u - Q - b.x - c|",
            "growth of the non-quadratic remainder",
        )
        if scaling_rows:
            figures.save_loglog(
                os.path.join(out, "scaling.png"),
                [r["lambda"] for r in scaling_rows],
                [r["error"] for r in scaling_rows],
                "lambda",
                "sup error on the unit ball",
                "quadratic rescaling error",
                slope_guide=-2.0,
            )
        if n <= 2:
            figures.save_field(os.path.join(out, "h.png"), h, "residual h")
    span = h_rows[-1]["span"]
    print(
        f"analyze: gamma {gamma:.6f}, max |gap| "
        f"{max(abs(r['gap']) for r in rows):.3e}, h span {span:.3e} "
        f"on the half-width {h_rows[-1]['half_width']:g} box"
    )
    return 0


def cmd_verify(args) -> int:
    from . import acceptance

    if args.config:
        cfg = RunConfig.from_file(args.config)
        cfg.reject_unknown()  # verify takes no tuning keys
    else:
        cfg = RunConfig.empty()
    out = args.out
    os.makedirs(out, exist_ok=True)
    results = acceptance.run_suite(
        workdir=os.path.join(out, "work"), only=args.only
    )
    for result in results:
        print(result.line())
    write_json(
        os.path.join(out, "verify-report.json"),
        {
            "command": "verify",
            "config_digest": cfg.digest,
            "inputs": {},
            "criteria": [r.to_dict() for r in results],
        },
    )
    write_csv(
        os.path.join(out, "criteria.csv"),
        ["id", "name", "passed", "within_runtime"],
        [[r.cid, r.name, r.passed, r.within_runtime] for r in results],
    )
    return 0 if all(r.passed for r in results) else 4


# ---------------------------------------------------------------------------
# Entry point.

def _build_parser() -> _Parser:
    parser = _Parser(prog="mongeampere", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    def common(sub, config_required=True):
        sub.add_argument("--config", required=config_required, help="key = value run file")
        sub.add_argument("--out", default="out", help="output directory (created)")
        sub.add_argument(
            "--threads", type=int, default=0, help="worker threads, 0 = default"
        )
        sub.add_argument("--seed", type=int, default=None, help="seed override")

    sp = subs.add_parser("solve-periodic", help="torus problem with ergodic constant")
    common(sp)
    sp.set_defaults(func=cmd_solve_periodic)

    sd = subs.add_parser("solve-dirichlet", help="convex-domain boundary problem")
    common(sd)
    sd.set_defaults(func=cmd_solve_dirichlet)

    an = subs.add_parser("analyze", help="structure decomposition of a sample")
    common(an)
    an.set_defaults(func=cmd_analyze)

    vf = subs.add_parser("verify", help="run the acceptance suite")
    common(vf, config_required=False)
    vf.add_argument(
        "--only", type=int, default=None, help="run a single numbered criterion"
    )
    vf.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _apply_threads(args.threads)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except InvalidArgument as exc:  # includes ConfigError
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleProblem as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 3
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    except MongeAmpereError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
