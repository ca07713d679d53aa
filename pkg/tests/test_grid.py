"""Tests for resource-grid indexing and DFT pilot construction."""

import numpy as np
import pytest

from siplab.errors import ConfigurationError
from siplab.grid import (
    ResourceGridSpec,
    flat_to_grid,
    grid_index,
    grid_to_flat,
    make_dft_pilots,
    re_index,
    verify_orthogonality,
)


class TestIndexing:
    def test_origin(self):
        assert re_index(0, 0, ResourceGridSpec(48, 14)) == 0

    def test_column_major_formula(self):
        # 5 + 48*2, subcarrier varies fastest
        assert re_index(5, 2, ResourceGridSpec(48, 14)) == 101

    def test_last_element(self):
        spec = ResourceGridSpec(48, 14)
        assert spec.E == 672
        assert re_index(47, 13, spec) == 671

    def test_grid_index_inverse(self):
        spec = ResourceGridSpec(48, 14)
        assert grid_index(0, spec) == (0, 0)
        assert grid_index(101, spec) == (5, 2)
        assert grid_index(48, spec) == (0, 1)

    def test_bijection_small_grid(self):
        spec = ResourceGridSpec(5, 3)
        seen = set()
        for s in range(spec.S):
            for t in range(spec.T):
                e = re_index(s, t, spec)
                assert grid_index(e, spec) == (s, t)
                seen.add(e)
        assert seen == set(range(spec.E))

    @pytest.mark.parametrize("s,t", [(-1, 0), (48, 0), (0, -1), (0, 14)])
    def test_re_index_range_errors(self, s, t):
        with pytest.raises(IndexError):
            re_index(s, t, ResourceGridSpec(48, 14))

    @pytest.mark.parametrize("e", [-1, 672])
    def test_grid_index_range_errors(self, e):
        with pytest.raises(IndexError):
            grid_index(e, ResourceGridSpec(48, 14))

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            ResourceGridSpec(0, 14)


class TestArrayReshapes:
    def test_flat_to_grid_matches_scalar_indexing(self):
        spec = ResourceGridSpec(4, 3)
        flat = np.arange(2 * spec.E).reshape(2, spec.E)
        grid = flat_to_grid(flat, spec)
        for s in range(spec.S):
            for t in range(spec.T):
                assert grid[0, s, t] == flat[0, re_index(s, t, spec)]

    def test_round_trip(self):
        spec = ResourceGridSpec(6, 5)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 2, spec.E))
        np.testing.assert_array_equal(grid_to_flat(flat_to_grid(x, spec), spec), x)

    def test_shape_validation(self):
        spec = ResourceGridSpec(4, 3)
        with pytest.raises(ValueError):
            flat_to_grid(np.zeros(11), spec)
        with pytest.raises(ValueError):
            grid_to_flat(np.zeros((3, 4)), spec)


class TestDftPilots:
    def test_first_user_is_all_ones(self):
        book = make_dft_pilots(4, ResourceGridSpec(4, 2))
        np.testing.assert_allclose(book.phi[0], np.ones(8), atol=1e-14)

    def test_element_formula_second_user(self):
        # k=2, e=1..4 (1-based): exp(-j*pi*(e-1)/2) = 1, -j, -1, j
        book = make_dft_pilots(4, ResourceGridSpec(4, 2))
        np.testing.assert_allclose(book.phi[1, :4], [1, -1j, -1, 1j], atol=1e-14)

    def test_inner_products_two_users(self):
        book = make_dft_pilots(2, ResourceGridSpec(2, 2))
        p = book.phi
        assert abs(np.vdot(p[0], p[1])) < 1e-12
        assert abs(np.vdot(p[0], p[0]) - 4) < 1e-12

    def test_unit_modulus(self):
        book = make_dft_pilots(12, ResourceGridSpec(48, 14))
        np.testing.assert_allclose(np.abs(book.phi), 1.0, atol=1e-12)

    def test_gram_is_scaled_identity_when_k_divides_e(self):
        spec = ResourceGridSpec(48, 14)
        book = make_dft_pilots(12, spec)
        gram = book.phi @ book.phi.conj().T
        np.testing.assert_allclose(gram, spec.E * np.eye(12), atol=1e-9 * spec.E)

    def test_orthogonality_report_passes(self):
        report = verify_orthogonality(make_dft_pilots(12, ResourceGridSpec(48, 14)), tol=1e-9)
        assert report.passed
        assert report.max_diag_deviation < 1e-9 * 672
        assert report.max_cross_correlation < 1e-9 * 672

    def test_identical_rows_fail(self):
        spec = ResourceGridSpec(4, 2)
        book = make_dft_pilots(2, spec)
        degenerate = book.phi.copy()
        degenerate[1] = degenerate[0]
        report = verify_orthogonality(type(book)(phi=degenerate, spec=spec))
        assert not report.passed
        assert report.max_cross_correlation == pytest.approx(spec.E)

    def test_non_divisor_user_count_warns_with_residual(self):
        spec = ResourceGridSpec(48, 14)
        with pytest.warns(UserWarning, match="does not divide"):
            book = make_dft_pilots(5, spec)
        report = verify_orthogonality(book, tol=1e-9)
        assert report.max_cross_correlation > 0.1  # genuinely non-orthogonal
        assert not report.passed

    def test_too_many_users_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            make_dft_pilots(9, ResourceGridSpec(4, 2))

    def test_bad_user_count(self):
        with pytest.raises(ValueError):
            make_dft_pilots(0, ResourceGridSpec(4, 2))
