"""Degradation operator algebra: builders, pseudo-inverses, projections."""

import math

import numpy as np
import pytest

from nsrestore import operators as ops
from nsrestore.errors import DimensionError, IncompatibleError, UsageError
from nsrestore.formats import write_tensor
from nsrestore.rng import RngStream
from conftest import max_abs


class TestHandBuiltAtoms:
    def test_grayscale_row_and_pinv(self):
        # one RGB pixel: forward row is [1/3,1/3,1/3], pinv replicates
        g = ops.build_operator("grayscale", (3, 1, 1))
        assert g.apply(np.array([0.3, 0.6, 0.9]))[0, 0, 0] == pytest.approx((0.3 + 0.6 + 0.9) / 3)
        assert np.array_equal(g.pinv_apply([0.6]).reshape(-1), [0.6, 0.6, 0.6])
        dense = g.to_dense()
        assert np.allclose(dense, [[1 / 3, 1 / 3, 1 / 3]])

    def test_avgpool_patch_mean(self):
        a = ops.build_operator("avgpool:2", (1, 2, 2))
        patch = np.array([0.0, 1.0, 2.0, 5.0])
        assert a.apply(patch).reshape(-1)[0] == pytest.approx(np.mean(patch))
        assert np.array_equal(a.pinv_apply([2.0]).reshape(-1), [2.0, 2.0, 2.0, 2.0])

    def test_identity_and_zero(self):
        ident = ops.build_operator("identity", (5,))
        x = RngStream(1).gaussian((5,))
        assert np.array_equal(ident.apply(x), x)
        assert np.array_equal(ident.pinv_apply(x), x)
        zero = ops.build_operator("zero:3", (5,))
        assert np.array_equal(zero.apply(x), np.zeros(3))
        assert np.array_equal(zero.pinv_apply(np.ones(3)), np.zeros(5))

    def test_mask_is_its_own_pinv(self, mask16_path):
        m = ops.build_operator(f"mask:{mask16_path}", (3, 16, 16))
        x = RngStream(2).gaussian((3, 16, 16))
        assert np.array_equal(m.apply(x), m.pinv_apply(x))
        assert np.array_equal(m.apply(m.apply(x)), m.apply(x))

    def test_mask_size_mismatch(self, mask16_path):
        with pytest.raises(DimensionError):
            ops.build_operator(f"mask:{mask16_path}", (3, 8, 8))

    def test_avgpool_needs_divisible_sides(self):
        with pytest.raises(DimensionError):
            ops.build_operator("avgpool:3", (1, 8, 8))


class TestWalsh:
    def test_fwht_matches_hadamard_matrix(self):
        # oracle: explicit Sylvester Hadamard matrix by recursion
        h = np.array([[1.0]])
        for _ in range(3):
            h = np.block([[h, h], [h, -h]])
        x = RngStream(3).gaussian((8,))
        assert np.allclose(ops.fwht(x), h @ x, atol=1e-12)

    def test_rows_are_orthonormal_and_pinv_is_adjoint(self):
        op = ops.build_operator("cs:walsh:0.25:11", (1, 4, 4))
        dense = op.to_dense()
        assert np.abs(dense @ dense.T - np.eye(op.out_dim)).max() <= 1e-12
        y = RngStream(5).gaussian((op.out_dim,))
        assert np.abs(op.pinv_apply(y).reshape(-1) - dense.T @ y).max() <= 1e-12

    def test_row_count_and_determinism(self):
        op = ops.build_operator("cs:walsh:0.25:9", (1, 4, 4))
        assert op.out_dim == math.ceil(0.25 * 16)
        op2 = ops.build_operator("cs:walsh:0.25:9", (1, 4, 4))
        assert np.array_equal(op.rows, op2.rows)

    def test_non_power_of_two_rejected(self):
        with pytest.raises(DimensionError):
            ops.build_operator("cs:walsh:0.5:1", (3, 4, 4))


@pytest.fixture(scope="module")
def op_set(mask16_path, mask4_path):
    shape = (3, 16, 16)
    specs = [
        "identity",
        "zero:8",
        "grayscale",
        "avgpool:4",
        f"mask:{mask16_path}",
        f"compose(mask:{mask4_path},grayscale,avgpool:4)",
    ]
    built = [ops.build_operator(s, shape) for s in specs]
    built.append(ops.build_operator("cs:walsh:0.3:5", (1, 16, 16)))
    built.append(ops.build_operator("blur:gauss:3:1.5", (1, 8, 8)))
    return built


class TestProjections:
    def test_decomposition_complete_to_fp_addition(self, op_set):
        # null_project is x minus the range part, so reconstructing x can
        # round only in that subtraction and in the test's own addition:
        # the error budget is one ulp of the operand scale, nothing more
        eps = 2.0**-52
        rng = RngStream(17)
        for op in op_set:
            for _ in range(20):
                x = rng.gaussian(op.in_shape)
                r = ops.range_project(op, x)
                n = ops.null_project(op, x)
                budget = eps * np.maximum.reduce([np.abs(x), np.abs(r), np.abs(n)])
                assert np.all(np.abs((r + n) - x) <= budget), op.kind

    def test_null_part_is_the_exact_complement(self, op_set):
        # the defining identity: null_project recomputes bitwise as x - range
        rng = RngStream(20)
        for op in op_set:
            x = rng.gaussian(op.in_shape)
            assert np.array_equal(ops.null_project(op, x), x - ops.range_project(op, x))

    def test_null_space_annihilated(self, op_set):
        rng = RngStream(18)
        for op in op_set:
            for _ in range(10):
                x = rng.gaussian(op.in_shape)
                leak = op.apply(ops.null_project(op, x))
                assert max_abs(leak) <= 1e-10 * max(max_abs(x), 1.0), op.kind

    def test_range_projection_idempotent(self, op_set):
        rng = RngStream(19)
        for op in op_set:
            x = rng.gaussian(op.in_shape)
            r = ops.range_project(op, x)
            assert max_abs(ops.range_project(op, r) - r) <= 1e-10, op.kind

    def test_grayscale_fixed_points(self):
        g = ops.build_operator("grayscale", (3, 1, 1))
        # constant pixels live in the range space
        assert np.allclose(ops.range_project(g, [0.4, 0.4, 0.4]).reshape(-1), [0.4, 0.4, 0.4])
        # zero-mean pixels live in the null space (oracle: subtract the mean)
        x = np.array([1.0, 0.0, -1.0])
        assert np.allclose(ops.null_project(g, x).reshape(-1), x - x.mean(), atol=1e-15)
        assert np.allclose(ops.null_project(g, x).reshape(-1), x, atol=1e-15)

    def test_identity_and_zero_projections(self):
        ident = ops.build_operator("identity", (6,))
        zero = ops.build_operator("zero:2", (6,))
        x = RngStream(4).gaussian((6,))
        assert np.array_equal(ops.range_project(ident, x), x)
        assert np.array_equal(ops.null_project(ident, x), np.zeros(6))
        assert np.array_equal(ops.range_project(zero, x), np.zeros(6))
        assert np.array_equal(ops.null_project(zero, x), x)


class TestVerifyPinv:
    def test_reports_residuals(self, mask4_path):
        op = ops.build_operator(f"compose(mask:{mask4_path},grayscale,avgpool:4)", (3, 16, 16))
        report = ops.verify_pinv(op, 100, RngStream(6))
        assert report["probes"] == 100
        assert report["max_pinv_residual"] <= 1e-10
        assert report["max_null_residual"] <= 1e-10

    def test_wrong_pinv_is_reported_not_raised(self):
        # the adjoint of a blur is not its pseudo-inverse; the check must
        # quantify the failure rather than crash
        blur = ops.build_operator("blur:gauss:3:1.5", (1, 8, 8))
        wrong = ops.DenseOp(blur.to_dense(), pinv=blur.to_dense().T)
        report = ops.verify_pinv(wrong, 20, RngStream(8))
        assert report["max_pinv_residual"] > 1e-3

    def test_probe_count_validated(self):
        with pytest.raises(UsageError):
            ops.verify_pinv(ops.build_operator("identity", (3,)), 0, RngStream(0))


class TestCompose:
    def test_pinv_ordering_exact(self):
        a = ops.build_operator("grayscale", (3, 4, 4))
        b = ops.build_operator("avgpool:2", (1, 4, 4))
        chain = ops.compose([b, a])  # apply grayscale first, then pool
        y = RngStream(9).gaussian(chain.out_shape)
        assert np.array_equal(chain.pinv_apply(y), a.pinv_apply(b.pinv_apply(y)))

    def test_singleton_compose_matches_atom(self):
        g = ops.build_operator("grayscale", (3, 8, 8))
        c = ops.build_operator("compose(grayscale)", (3, 8, 8))
        rng = RngStream(10)
        for _ in range(5):
            x = rng.gaussian((3, 8, 8))
            assert np.array_equal(c.apply(x), g.apply(x))
            y = rng.gaussian((1, 8, 8))
            assert np.array_equal(c.pinv_apply(y), g.pinv_apply(y))

    def test_compose_identity_behaves_as_identity(self):
        c = ops.build_operator("compose(identity)", (2, 4, 4))
        x = RngStream(11).gaussian((2, 4, 4))
        assert np.array_equal(c.apply(x), x)

    def test_chain_mismatch_rejected(self):
        # the inner grayscale leaves one channel, so the outer one cannot chain
        with pytest.raises(DimensionError):
            ops.build_operator("compose(grayscale,grayscale)", (3, 4, 4))
        with pytest.raises(DimensionError):
            ops.compose([ops.build_operator("grayscale", (3, 4, 4)),
                         ops.build_operator("avgpool:2", (1, 4, 4))])
        # grayscale then avgpool chains fine
        ops.build_operator("compose(avgpool:2,grayscale)", (3, 4, 4))

    def test_nesting_cap(self):
        spec = "identity"
        for _ in range(9):
            spec = f"compose({spec})"
        with pytest.raises(UsageError):
            ops.build_operator(spec, (4,))

    def test_old_photo_composite_pinv_identity(self, mask4_path):
        comp = ops.build_operator(f"compose(mask:{mask4_path},grayscale,avgpool:4)", (3, 16, 16))
        report = ops.verify_pinv(comp, 50, RngStream(12))
        assert report["max_pinv_residual"] <= 1e-10


class TestGrammar:
    @pytest.mark.parametrize(
        "bad",
        [
            "unknown",
            "avgpool",
            "avgpool:x",
            "cs:walsh:0.5",
            "cs:fourier:0.5:1",
            "blur:gauss",
            "compose(identity",
            "zero:-1",
        ],
    )
    def test_unparseable_specs(self, bad):
        with pytest.raises((UsageError, DimensionError)):
            ops.build_operator(bad, (1, 4, 4))

    def test_matrix_spec_round_trip(self, tmp_path):
        mat = RngStream(13).gaussian((3, 8)).reshape(3, 8)
        path = tmp_path / "m.ten"
        write_tensor(path, mat)
        op = ops.build_operator(f"matrix:{path}", (8,))
        x = RngStream(14).gaussian((8,))
        assert np.allclose(op.apply(x), mat @ x, atol=1e-14)
        assert ops.verify_pinv(op, 20, RngStream(15))["max_pinv_residual"] <= 1e-10

    def test_blur_variants_build(self):
        for spec in ("blur:gauss:5:10.0", "blur:uniform:3", "blur:aniso:5:2.0:0.5"):
            op = ops.build_operator(spec, (1, 8, 8))
            assert op.in_shape == op.out_shape
            # kernels are normalized: constants map to themselves
            const = np.full((1, 8, 8), 0.7)
            assert np.allclose(op.apply(const), const, atol=1e-12)

    def test_multichannel_blur_svd_assembles_correctly(self):
        # the full factors are stitched from one per-channel plane SVD
        op = ops.build_operator("blur:gauss:3:1.2", (3, 4, 4))
        f = op.svd()
        dense = op.to_dense()
        assert np.abs(f.reconstruct() - dense).max() <= 1e-9 * f.singulars[0]
        assert np.abs(f.u.T @ f.u - np.eye(48)).max() <= 1e-10
        assert np.abs(f.v.T @ f.v - np.eye(48)).max() <= 1e-10
        assert np.all(np.diff(f.singulars) <= 1e-15)


class TestRestriction:
    def test_avgpool_restriction_matches_full(self):
        full = ops.build_operator("avgpool:2", (1, 4, 8))
        tile, y0, y1 = full.restrict_cols(2, 6)
        x = RngStream(16).gaussian((1, 4, 8))
        assert (y0, y1) == (1, 3)
        assert np.array_equal(tile.apply(x[..., 2:6]), full.apply(x)[..., 1:3])

    def test_misaligned_restriction_rejected(self):
        full = ops.build_operator("avgpool:4", (1, 4, 8))
        with pytest.raises(IncompatibleError):
            full.restrict_cols(2, 6)

    def test_dense_not_tileable(self):
        blur = ops.build_operator("blur:gauss:3:1.5", (1, 8, 8))
        with pytest.raises(IncompatibleError):
            blur.restrict_cols(0, 4)
