"""Lattice and field primitives.

The reductions here (cell_average, ordered_sum) feed every report, so they
are checked against an exact rational oracle: summing IEEE doubles as
Fractions gives the true real sum, and fsum promises the correctly rounded
float of that sum.
"""
import math
from fractions import Fraction

import numpy as np
import pytest

from mongeampere import (
    BoxLattice,
    InfeasibleProblem,
    InvalidArgument,
    MollifierSpec,
    PeriodicField,
    ProblemBounds,
    ScalarField,
    TorusLattice,
    box_lattice,
    cell_average,
    make_torus,
    mollify,
    normalize_rhs,
    resample,
    second_quotient,
)
from mongeampere.lattice import ordered_sum


def exact_mean(values):
    """Reference mean via exact rational arithmetic."""
    total = sum(Fraction(float(v)) for v in np.asarray(values).ravel())
    return float(total / len(np.asarray(values).ravel()))


class TestTorusLattice:
    def test_spacing_and_axes(self):
        tor = make_torus((2.0, 3.0), (8, 6))
        assert tor.n == 2
        assert tor.spacing == (0.25, 0.5)
        assert tor.shape == (8, 6)
        np.testing.assert_allclose(tor.axes()[0], np.arange(8) * 0.25)
        np.testing.assert_allclose(tor.axes()[1], np.arange(6) * 0.5)
        assert tor.cell_volume() == 0.125

    def test_rejects_bad_shapes(self):
        with pytest.raises(InvalidArgument):
            TorusLattice((1.0,), (8, 8))
        with pytest.raises(InvalidArgument):
            TorusLattice((1.0, 1.0, 1.0, 1.0), (8, 8, 8, 8))
        with pytest.raises(InvalidArgument):
            TorusLattice((-1.0,), (8,))
        with pytest.raises(InvalidArgument):
            TorusLattice((1.0,), (3,))  # under the 4-node floor


class TestBoxLattice:
    def test_nodes_include_endpoints(self):
        lat = box_lattice((-1.0,), (1.0,), (0.25,))
        x = lat.axes()[0]
        assert x[0] == -1.0 and x[-1] == 1.0
        assert lat.shape == (9,)
        assert lat.spacing == (0.25,)

    def test_incommensurate_extent_rejected(self):
        with pytest.raises(InvalidArgument):
            box_lattice((0.0,), (1.0,), (0.3,))

    def test_degenerate_box_rejected(self):
        with pytest.raises(InvalidArgument):
            BoxLattice((0.0,), (0.0,), (5,))


def test_ordered_sum_matches_exact_rounding():
    rng = np.random.default_rng(42)
    # Wide dynamic range provokes cancellation a naive running sum gets wrong.
    values = rng.standard_normal(500) * 10.0 ** rng.integers(-8, 8, size=500)
    expect = float(sum(Fraction(v) for v in values))
    assert ordered_sum(values) == expect
    assert ordered_sum(values) == math.fsum(values)


def test_ordered_sum_ignores_memory_layout():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((17, 23))
    assert ordered_sum(a) == ordered_sum(np.asfortranarray(a))


def test_cell_average_exact_oracle():
    rng = np.random.default_rng(7)
    tor = make_torus((1.0, 1.0), (16, 16))
    f = PeriodicField(tor, rng.uniform(0.5, 2.0, size=tor.shape))
    assert cell_average(f) == pytest.approx(exact_mean(f.values), abs=0.0, rel=1e-16)
    # Also accepts a bare array.
    assert cell_average(f.values) == cell_average(f)


class TestPeriodicField:
    def test_shape_mismatch_rejected(self):
        tor = make_torus((1.0,), (8,))
        with pytest.raises(InvalidArgument):
            PeriodicField(tor, np.zeros(9))

    def test_nonfinite_rejected(self):
        tor = make_torus((1.0,), (8,))
        vals = np.zeros(8)
        vals[3] = np.nan
        with pytest.raises(InvalidArgument):
            PeriodicField(tor, vals)

    def test_sample_box_is_exact_periodic_extension(self):
        tor = make_torus((1.0, 1.0), (8, 8))
        rng = np.random.default_rng(5)
        f = PeriodicField(tor, rng.standard_normal(tor.shape))
        box = box_lattice((-2.0, -2.0), (2.0, 2.0), (0.125, 0.125))
        got = f.sample_box(box)
        xi = np.rint(box.axes()[0] / 0.125).astype(int) % 8
        yi = np.rint(box.axes()[1] / 0.125).astype(int) % 8
        np.testing.assert_array_equal(got, f.values[np.ix_(xi, yi)])

    def test_sample_box_rejects_incommensurate_nodes(self):
        tor = make_torus((1.0,), (8,))
        f = PeriodicField(tor, np.zeros(8))
        box = box_lattice((0.0,), (1.0,), (0.1,))
        with pytest.raises(InvalidArgument):
            f.sample_box(box)


class TestScalarField:
    def test_mask_defaults_to_full(self):
        lat = box_lattice((0.0,), (1.0,), (0.25,))
        field = ScalarField(lat, np.zeros(5))
        assert field.valid_mask.all()

    def test_nan_allowed_only_under_mask(self):
        lat = box_lattice((0.0,), (1.0,), (0.25,))
        vals = np.zeros(5)
        vals[2] = np.nan
        mask = np.ones(5, dtype=bool)
        mask[2] = False
        ScalarField(lat, vals, mask)  # fine: nan is masked
        with pytest.raises(InvalidArgument):
            ScalarField(lat, vals)


class TestMollifier:
    def test_weights_normalized_and_symmetric(self):
        tor = make_torus((1.0, 1.0), (32, 32))
        offsets, weights = MollifierSpec(0.2).weights(tor)
        assert math.fsum(weights) == pytest.approx(1.0, abs=1e-15)
        table = dict(zip(offsets, weights))
        for d, w in table.items():
            neg = tuple(-c for c in d)
            assert table[neg] == w

    def test_under_resolved_kernel_rejected(self):
        tor = make_torus((1.0,), (8,))  # spacing 1/8, need eps >= 1/4
        with pytest.raises(InvalidArgument):
            MollifierSpec(0.2).weights(tor)

    def test_cosine_multiplier(self):
        # Convolving cos(2 pi x) with a symmetric kernel multiplies it by
        # sum_d w_d cos(2 pi d h); the sine part cancels by symmetry.
        tor = make_torus((1.0,), (64,))
        x = tor.axes()[0]
        f = PeriodicField(tor, np.cos(2 * np.pi * x))
        spec = MollifierSpec(0.125)
        offsets, weights = spec.weights(tor)
        mult = math.fsum(
            w * math.cos(2 * math.pi * d[0] * tor.spacing[0])
            for d, w in zip(offsets, weights)
        )
        smooth = mollify(f, spec)
        np.testing.assert_allclose(smooth.values, mult * f.values, atol=1e-14)
        assert 0.9 < mult < 1.0  # smoothing shrinks the mode

    def test_mollify_preserves_mean_and_contracts_range(self):
        rng = np.random.default_rng(11)
        tor = make_torus((1.0, 1.0), (32, 32))
        f = PeriodicField(tor, rng.uniform(0.5, 2.0, size=tor.shape))
        smooth = mollify(f, MollifierSpec(0.125))
        assert cell_average(smooth) == pytest.approx(cell_average(f), abs=1e-13)
        assert smooth.values.min() >= f.values.min() - 1e-12
        assert smooth.values.max() <= f.values.max() + 1e-12


def test_normalize_rhs_shifts_mean():
    tor = make_torus((1.0,), (16,))
    f = PeriodicField(tor, 1.3 + 0.1 * np.sin(2 * np.pi * tor.axes()[0]))
    out = normalize_rhs(f, 2.0)
    assert cell_average(out) == pytest.approx(2.0, abs=1e-14)


def test_normalize_rhs_guards_positivity():
    # Range [0.4, 9.6] with mean 5: shifting the mean down to 0.2 drags the
    # minimum to -4.4, which must be refused.
    tor = make_torus((1.0,), (16,))
    f = PeriodicField(tor, 5.0 + 4.6 * np.cos(2 * np.pi * tor.axes()[0]))
    with pytest.raises(InfeasibleProblem):
        normalize_rhs(f, 0.2)


def test_problem_bounds_records_pinch():
    tor = make_torus((1.0,), (8,))
    f = PeriodicField(tor, np.linspace(0.5, 2.0, 8))
    pb = ProblemBounds.of(f, np.array([[3.0]]))
    assert pb.f_lo == 0.5 and pb.f_hi == 2.0
    assert pb.eig_lo == pb.eig_hi == 3.0


class TestSecondQuotient:
    def test_periodic_quadratic_mode(self):
        # For v = cos(2 pi x) the discrete second quotient at step h is
        # -cos(2 pi x) * (2 - 2 cos(2 pi h)) / h^2, the symbol of the stencil.
        tor = make_torus((1.0,), (32,))
        x = tor.axes()[0]
        v = PeriodicField(tor, np.cos(2 * np.pi * x))
        q = second_quotient(v, np.array([1.0]), tor.spacing[0])
        h = tor.spacing[0]
        symbol = (2.0 * np.cos(2 * np.pi * h) - 2.0) / h**2
        np.testing.assert_allclose(q.values, symbol * np.cos(2 * np.pi * x), atol=1e-12)

    def test_box_quadratic_exact(self):
        lat = box_lattice((-1.0, -1.0), (1.0, 1.0), (0.25, 0.25))
        xx, yy = lat.nodes()
        m = np.array([[2.0, 0.5], [0.5, 1.5]])
        u = ScalarField(lat, 0.5 * (m[0, 0] * xx**2 + 2 * m[0, 1] * xx * yy + m[1, 1] * yy**2))
        for e in ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]):
            e = np.asarray(e)
            q = second_quotient(u, e, 0.25)
            expect = e @ m @ e / (e @ e)
            vals = q.values[q.valid_mask]
            np.testing.assert_allclose(vals, expect, atol=1e-12)

    def test_box_masks_cut_arms(self):
        lat = box_lattice((0.0,), (1.0,), (0.25,))
        u = ScalarField(lat, np.zeros(5))
        q = second_quotient(u, np.array([1.0]), 0.25)
        np.testing.assert_array_equal(q.valid_mask, [False, True, True, True, False])

    def test_off_lattice_step_rejected(self):
        tor = make_torus((1.0,), (8,))
        v = PeriodicField(tor, np.zeros(8))
        with pytest.raises(InvalidArgument):
            second_quotient(v, np.array([1.0]), 0.3)


class TestResample:
    def test_affine_data_exact(self):
        src = box_lattice((-2.0, -2.0), (2.0, 2.0), (0.25, 0.25))
        xx, yy = src.nodes()
        u = ScalarField(src, 2.0 * xx - yy + 3.0)
        a = np.array([[0.5, 0.0], [0.0, 0.5]])
        b = np.array([0.25, 0.25])
        target = box_lattice((-0.5, -0.5), (0.5, 0.5), (0.125, 0.125))
        out = resample(u, a, b, target)
        assert out.valid_mask.all()
        tx, ty = target.nodes()
        # u(a^{-1}(x - b)) with the affine u above
        px = (tx - 0.25) / 0.5
        py = (ty - 0.25) / 0.5
        np.testing.assert_allclose(out.values, 2.0 * px - py + 3.0, atol=1e-12)

    def test_out_of_range_preimages_masked(self):
        src = box_lattice((0.0,), (1.0,), (0.25,))
        u = ScalarField(src, np.arange(5.0))
        target = box_lattice((-1.0,), (2.0,), (0.5,))
        out = resample(u, np.eye(1), np.zeros(1), target)
        inside = (np.asarray(target.axes()[0]) >= 0.0) & (np.asarray(target.axes()[0]) <= 1.0)
        np.testing.assert_array_equal(out.valid_mask, inside)
