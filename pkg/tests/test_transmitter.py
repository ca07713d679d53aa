"""Tests for power control, QAM mapping, superimposition, and TP frames."""

import numpy as np
import pytest
import torch

from oracles import oracle_transmit
from siplab.errors import ConfigurationError
from siplab.grid import ResourceGridSpec
from siplab.transmitter import (
    TP_PILOT_SYMBOLS,
    build_tp_frame,
    make_tp_pilots,
    modulate_qam,
    pdp_from_weights,
    qam_constellation,
    superimpose,
    transmit,
)


class TestPdpFromWeights:
    def test_zero_maps_to_half(self):
        np.testing.assert_allclose(pdp_from_weights(np.zeros((2, 3))), 0.5)

    def test_saturation(self):
        assert pdp_from_weights(np.array(20.0)) > 1 - 1e-8
        assert pdp_from_weights(np.array(-20.0)) < 1e-8

    def test_logit_inverse(self):
        w = np.log(0.3 / 0.7)
        assert w == pytest.approx(-0.8473, abs=1e-4)
        assert pdp_from_weights(np.array(w)) == pytest.approx(0.3, abs=1e-12)

    def test_torch_matches_numpy(self):
        w = np.linspace(-4, 4, 17)
        np.testing.assert_allclose(
            pdp_from_weights(torch.as_tensor(w)).numpy(), pdp_from_weights(w), atol=1e-12
        )

    def test_gradient_matches_finite_differences(self):
        # analytic sigmoid' = s(1-s) against central differences at |w| <= 5
        for w0 in np.linspace(-5, 5, 11):
            w = torch.tensor(w0, dtype=torch.float64, requires_grad=True)
            pdp_from_weights(w).backward()
            h = 1e-6
            fd = (pdp_from_weights(np.array(w0 + h)) - pdp_from_weights(np.array(w0 - h))) / (2 * h)
            assert abs(w.grad.item() - fd) / abs(fd) < 1e-6


class TestQam:
    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_unit_average_energy(self, order):
        con = qam_constellation(order)
        assert np.mean(np.abs(con.points) ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_16qam_max_coordinate(self):
        con = qam_constellation(16)
        assert np.max(con.points.real) == pytest.approx(3 / np.sqrt(10), abs=1e-12)

    def test_4qam_points(self):
        con = qam_constellation(4)
        expected = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
        assert set(np.round(con.points, 9)) == set(np.round(expected, 9))

    def test_gray_adjacency_one_bit(self):
        con = qam_constellation(16)
        dmin = con.min_distance
        for i in range(16):
            for j in range(i + 1, 16):
                if abs(con.points[i] - con.points[j]) < dmin * 1.001:
                    assert bin(i ^ j).count("1") == 1

    def test_bit_labels_match_index(self):
        con = qam_constellation(16)
        for v in range(16):
            assert int("".join(map(str, con.bit_labels[v])), 2) == v

    def test_modulate_random_draw(self):
        rng = np.random.default_rng(1)
        sym, labels = modulate_qam(rng, order=16, size=(3, 5))
        assert sym.shape == (3, 5)
        con = qam_constellation(16)
        np.testing.assert_array_equal(sym, con.points[labels])

    def test_modulate_from_bits(self):
        sym, labels = modulate_qam(np.array([0, 0, 0, 0, 1, 1, 1, 1]), order=16)
        np.testing.assert_array_equal(labels, [0, 15])

    def test_unsupported_order(self):
        with pytest.raises(ValueError):
            qam_constellation(32)


class TestSuperimpose:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.K, self.E = 3, 8
        self.phi = torch.as_tensor(np.exp(2j * np.pi * rng.uniform(size=(self.K, self.E))))
        self.d = torch.as_tensor(rng.standard_normal((self.K, self.E)) + 1j * rng.standard_normal((self.K, self.E)))

    def test_pure_pilot(self):
        s = superimpose(torch.ones(self.K, self.E, dtype=torch.float64), self.phi, self.d, P=2.0)
        torch.testing.assert_close(s, np.sqrt(2.0) * self.phi)

    def test_pure_data(self):
        s = superimpose(torch.zeros(self.K, self.E, dtype=torch.float64), self.phi, self.d, P=2.0)
        torch.testing.assert_close(s, np.sqrt(2.0) * self.d)

    def test_uniform_03_split(self):
        rho = torch.full((self.K, self.E), 0.3, dtype=torch.float64)
        s = superimpose(rho, self.phi, self.d, P=1.0)
        expected = np.sqrt(0.3) * self.phi + np.sqrt(0.7) * self.d
        torch.testing.assert_close(s, expected)

    def test_power_split_sums_to_p(self):
        # pilot weight^2 + data weight^2 = P exactly, per RE
        rho = torch.rand(self.K, self.E, dtype=torch.float64)
        P = 1.7
        pilot_w2 = P * rho
        data_w2 = P * (1 - rho)
        torch.testing.assert_close(pilot_w2 + data_w2, torch.full_like(rho, P))

    def test_rho_out_of_range(self):
        bad = torch.full((self.K, self.E), 1.5, dtype=torch.float64)
        with pytest.raises(ValueError):
            superimpose(bad, self.phi, self.d)


class TestTransmit:
    def test_identity_channel_single_user(self):
        rng = np.random.default_rng(3)
        H = torch.as_tensor(rng.standard_normal((4, 1, 6)) + 1j * rng.standard_normal((4, 1, 6)))
        s = torch.ones(1, 6, dtype=torch.complex128)
        torch.testing.assert_close(transmit(H, s, 0.0), H[:, 0, :])

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            H = rng.standard_normal((3, 2, 8)) + 1j * rng.standard_normal((3, 2, 8))
            s = rng.standard_normal((2, 8)) + 1j * rng.standard_normal((2, 8))
            got = transmit(torch.as_tensor(H), torch.as_tensor(s), 0.0).numpy()
            np.testing.assert_allclose(got, oracle_transmit(H, s), atol=1e-12)

    def test_noise_statistics(self):
        gen = torch.Generator().manual_seed(5)
        H = torch.zeros(1, 1, 100_000, dtype=torch.complex128)
        s = torch.zeros(1, 100_000, dtype=torch.complex128)
        y = transmit(H, s, 0.25, rng=gen)
        assert float((y.abs() ** 2).mean()) == pytest.approx(0.25, rel=0.02)

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            transmit(torch.zeros(1, 1, 2, dtype=torch.complex128), torch.zeros(1, 2, dtype=torch.complex128), -1.0)


class TestTpFrame:
    def setup_method(self):
        self.spec = ResourceGridSpec(24, 14)
        self.K = 4
        self.seq = make_tp_pilots(self.K, self.spec.S)
        rng = np.random.default_rng(11)
        self.d = (rng.standard_normal((self.K, self.spec.E)) + 1j * rng.standard_normal((self.K, self.spec.E))) / np.sqrt(2)

    def test_pilot_re_count(self):
        frame = build_tp_frame(self.seq, self.d, 1.0, self.spec)
        assert frame.pilot_mask.sum() == 2 * self.spec.S
        assert (~frame.pilot_mask).sum() == 12 * self.spec.S

    def test_mask_disjoint_and_positions(self):
        frame = build_tp_frame(self.seq, self.d, 1.0, self.spec)
        assert frame.pilot_symbols == TP_PILOT_SYMBOLS
        pilot_cols = np.where(frame.pilot_mask.any(axis=0))[0]
        np.testing.assert_array_equal(pilot_cols, [2, 11])
        assert not np.any(frame.pilot_mask & ~frame.pilot_mask)

    def test_data_resource_fraction(self):
        frame = build_tp_frame(self.seq, self.d, 1.0, self.spec)
        fraction = (~frame.pilot_mask).sum() / frame.pilot_mask.size
        assert fraction == pytest.approx(12 / 14)

    def test_average_power_preserved(self):
        # pilot REs carry |sqrt(P)*seq|^2 = P exactly; data REs are sqrt(P)*d,
        # so the frame-average per-user power is P for unit-energy data
        P = 1.3
        frame = build_tp_frame(self.seq, self.d, P, self.spec)
        for t in frame.pilot_symbols:
            cols = np.arange(self.spec.S) + self.spec.S * t
            np.testing.assert_allclose(np.abs(frame.s_tx[:, cols]) ** 2, P, atol=1e-12)
        np.testing.assert_allclose(
            frame.s_tx[:, frame.data_re_indices], np.sqrt(P) * self.d[:, frame.data_re_indices], atol=1e-12
        )

    def test_capacity_error(self):
        with pytest.raises(ConfigurationError):
            make_tp_pilots(30, 24)

    def test_short_frame_error(self):
        with pytest.raises(ConfigurationError):
            build_tp_frame(self.seq, self.d[:, : 24 * 3], 1.0, ResourceGridSpec(24, 3))

    def test_tp_pilot_orthogonality_per_block(self):
        # correlating any aligned K-subcarrier block separates users exactly
        seq = make_tp_pilots(4, 24)
        block = seq[:, :4]
        gram = block @ block.conj().T
        np.testing.assert_allclose(gram, 4 * np.eye(4), atol=1e-12)
