"""End-to-end command line runs: outputs, determinism, and exit codes.

Everything goes through main(argv) in-process; each test gets its own
tmp_path for configs and output directories.
"""
import json
import os

import numpy as np
import pytest

from mongeampere import (
    PeriodicField,
    PeriodicProblem,
    QuadraticPart,
    box_lattice,
    make_torus,
    read_grid,
    solve_periodic,
    synthesize_entire,
    write_grid,
    ScalarField,
)
from mongeampere.cli import main

SOLVE_KEYS = {
    "iterations",
    "residual_inf",
    "sigma",
    "floored_nodes",
    "convexity_defect",
    "hoelder_q25",
    "hoelder_q50",
}


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1
    assert main(["solve-periodic"]) == 1  # --config is required
    capsys.readouterr()


def test_solve_periodic_cosine_outputs(tmp_path, capsys):
    text = "f = cosine-1d\nresolution = 64\nfigures = off\n"
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert main(["solve-periodic", "--config", cfg, "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("solve-periodic:")

    report = json.loads((out / "report.json").read_text())
    assert report["command"] == "solve-periodic"
    assert set(report["solve"]) == SOLVE_KEYS
    assert report["solve"]["floored_nodes"] == 0
    import hashlib

    assert report["config_digest"] == hashlib.sha256(text.encode()).hexdigest()

    v = read_grid(out / "v.ma-grid")
    x = v.lattice.nodes()[0]
    exact = -np.cos(2 * np.pi * x) / (8 * np.pi**2)
    err = np.abs((v.values - v.values.mean()) - (exact - exact.mean())).max()
    assert err <= 1.05e-5
    assert not (out / "v.png").exists()


def test_solve_periodic_renders_figure_by_default(tmp_path, capsys):
    cfg = write_config(tmp_path, "f = cosine-1d\nresolution = 64\n")
    out = tmp_path / "out"
    assert main(["solve-periodic", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "v.png").exists()
    capsys.readouterr()


def test_repeat_runs_are_byte_identical(tmp_path, capsys):
    cfg = write_config(
        tmp_path, "f = checkerboard\nresolution = 32 32\nfigures = off\n"
    )
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["solve-periodic", "--config", cfg, "--out", str(out)]) == 0
        outs.append(out)
    for fname in ("report.json", "v.ma-grid"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    capsys.readouterr()


def test_seed_flag_overrides_config(tmp_path, capsys):
    base = "f = seeded-noise\nresolution = 16 16\nf_normalize = on\nfigures = off\n"
    cfg_seeded = write_config(tmp_path, base + "seed = 7\n", "a.cfg")
    cfg_plain = write_config(tmp_path, base, "b.cfg")
    out1, out2, out3 = (tmp_path / n for n in ("o1", "o2", "o3"))
    assert main(["solve-periodic", "--config", cfg_seeded, "--out", str(out1)]) == 0
    assert main(
        ["solve-periodic", "--config", cfg_plain, "--out", str(out2), "--seed", "7"]
    ) == 0
    assert main(
        ["solve-periodic", "--config", cfg_plain, "--out", str(out3), "--seed", "8"]
    ) == 0
    same = (out1 / "v.ma-grid").read_bytes()
    assert same == (out2 / "v.ma-grid").read_bytes()
    assert same != (out3 / "v.ma-grid").read_bytes()
    capsys.readouterr()


@pytest.mark.parametrize(
    "text",
    [
        "just words\n",
        "f = cosine-1d\nresolution = 64\nmystery = 1\n",
        "f = fancy\nresolution = 64\n",
        "f = cosine-1d\nresolution = 8 8\n",
    ],
)
def test_config_problems_exit_1(tmp_path, capsys, text):
    cfg = write_config(tmp_path, text)
    code = main(["solve-periodic", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_incompatible_rhs_exits_2(tmp_path, capsys):
    # Constant f = 1.2 against det A = 1 misses the 5% compatibility window.
    cfg = write_config(
        tmp_path, "f = constant\nf_value = 1.2\nresolution = 16 16\nfigures = off\n"
    )
    code = main(["solve-periodic", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == 2
    assert "infeasible" in capsys.readouterr().err


def test_iteration_budget_exits_3(tmp_path, capsys):
    cfg = write_config(
        tmp_path, "f = cosine-1d\nresolution = 64\nmax_newton = 1\nfigures = off\n"
    )
    code = main(["solve-periodic", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == 3
    assert "non-convergence" in capsys.readouterr().err


def test_concave_sample_exits_4(tmp_path, capsys):
    lat = box_lattice((-2.0, -2.0), (2.0, 2.0), (0.25, 0.25))
    xx, yy = lat.nodes()
    write_grid(tmp_path / "bad.ma-grid", ScalarField(lat, -0.5 * (xx**2 + yy**2)))
    cfg = write_config(
        tmp_path,
        "sample = bad.ma-grid\nf = constant\nresolution = 16 16\nfigures = off\n",
    )
    code = main(["analyze", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == 4
    assert "invariant" in capsys.readouterr().err


def test_solve_dirichlet_sweep_and_john_block(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "domain = disk\nradius = 1.0\nsegments = 64\n"
        "f = radial\ng = radial\nreference = radial\n"
        "spacings = 1/4 1/8\n",
    )
    out = tmp_path / "out"
    assert main(["solve-dirichlet", "--config", cfg, "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("solve-dirichlet:")

    report = json.loads((out / "report.json").read_text())
    assert set(report["solve"]) == SOLVE_KEYS
    assert report["john"]["R"] == pytest.approx(0.5, rel=1e-2)
    np.testing.assert_allclose(np.reshape(report["john"]["a"], (2, 2)), np.eye(2), atol=1e-2)

    lines = (out / "errors.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header[0] == "spacing" and "sup_error" in header
    col = header.index("sup_error")
    errs = [float(line.split(",")[col]) for line in lines[1:]]
    assert len(errs) == 2
    assert errs[1] < errs[0]
    assert (out / "u.png").exists()
    assert (out / "u.ma-grid").exists()


def test_dirichlet_malformed_domain_csv_exits_1(tmp_path, capsys):
    (tmp_path / "dom.csv").write_text("0,0\n1,0\nnot-a-vertex\n")
    cfg = write_config(
        tmp_path,
        "domain = polygon\ndomain_csv = dom.csv\nf = constant\nspacing = 0.25\n"
        "figures = off\n",
    )
    code = main(["solve-dirichlet", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == 1
    assert "dom.csv:3" in capsys.readouterr().err


def test_analyze_structural_sample(tmp_path, capsys):
    # Build a genuine entire solution u = Q + b.x + c + v with v from the
    # periodic solve, so every analyze diagnostic has a known target.
    tor = make_torus((1.0, 1.0), (16, 16))
    xx, yy = tor.nodes()
    f = PeriodicField(
        tor, (1.0 + 0.5 * np.cos(2 * np.pi * xx)) * (1.0 + 0.5 * np.cos(2 * np.pi * yy))
    )
    v, _, _ = solve_periodic(PeriodicProblem(f, np.eye(2)))
    qp = QuadraticPart(np.eye(2), np.array([0.3, -0.1]), 0.2)
    box = box_lattice((-4.0, -4.0), (4.0, 4.0), (1.0 / 16.0, 1.0 / 16.0))
    sample = synthesize_entire(qp, v, box)
    write_grid(tmp_path / "sample.ma-grid", sample.field)
    write_grid(tmp_path / "f.ma-grid", f)

    cfg = write_config(
        tmp_path,
        "sample = sample.ma-grid\nf = grid:f.ma-grid\n"
        "k_max = 1\nlambdas = 2 4\nfigures = off\n",
    )
    out = tmp_path / "out"
    assert main(["analyze", "--config", cfg, "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("analyze:")

    report = json.loads((out / "structure-report.json").read_text())
    st = report["structure"]
    np.testing.assert_allclose(st["a_matrix"], np.eye(2), rtol=0, atol=1e-10)
    np.testing.assert_allclose(st["b_vector"], [0.3, -0.1], rtol=0, atol=1e-10)
    assert all(abs(row["gap"]) <= 1e-10 for row in st["quotient_table"])
    assert st["h_stats"][-1]["span"] <= 1e-9
    assert st["concavity"]["violation_fraction"] == 0.0
    assert st["doubling"]["verdict"] is True
    assert st["decay"]["degenerate"] is False
    assert st["decay"]["delta"] == pytest.approx(2.0, abs=0.05)
    for name in ("quotient.csv", "decay.csv", "scaling.csv", "hstats.csv"):
        assert (out / name).exists()
    # Checksums of both input grids are recorded.
    assert len(report["inputs"]) == 2


def test_verify_single_criterion(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["verify", "--out", str(out), "--only", "1"]) == 0
    stdout = capsys.readouterr().out
    assert "criterion  1" in stdout and "PASS" in stdout

    rows = (out / "criteria.csv").read_text().strip().splitlines()
    assert rows[0] == "id,name,passed,within_runtime"
    assert rows[1] == "1,flat-rhs,true,true"
    report = json.loads((out / "verify-report.json").read_text())
    assert len(report["criteria"]) == 1
