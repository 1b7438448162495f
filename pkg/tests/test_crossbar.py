import dataclasses

import numpy as np
import pytest

from pcmnet.crossbar import (AnalogNetwork, analog_forward, effective_weights,
                             identity_probe, mvm, program_float_network,
                             program_layer, program_network)
from pcmnet.device import DeviceConfig, drift, weight_to_conductance
from pcmnet.network import ShapeError
from pcmnet.quantize import DecomposedLayer, decompose, reconstruct


def drift_only_cfg():
    return dataclasses.replace(DeviceConfig().noiseless(),
                               drift_nu_mean=0.06, drift_nu_std=0.02)


class TestProgramLayer:
    def test_zero_multiples_give_zero_conductance(self, scheme, dev_cfg, rng):
        dec = DecomposedLayer(np.zeros((3, 4)), np.zeros((3, 4)))
        tile = program_layer(dec, scheme, dev_cfg, 0.0, rng)
        assert (tile.g_pos == 0).all() and (tile.g_neg == 0).all()
        assert np.abs(tile.baseline_probe).max() < 5 * dev_cfg.read_noise_std * tile.w_range

    def test_noise_off_readback_equals_reconstruction(self, scheme, dec_layers, rng):
        cfg = DeviceConfig().noiseless()
        dec = dec_layers[0]
        tile = program_layer(dec, scheme, cfg, 0.0, rng)
        np.testing.assert_allclose(
            effective_weights(tile, 0.0, cfg, rng), reconstruct(dec, scheme),
            rtol=0, atol=1e-12)

    def test_noise_on_readback_within_noise_budget(self, scheme, dev_cfg, rng):
        w = np.random.default_rng(1).normal(0, 0.3, (8, 8))
        dec = decompose(w, scheme)
        ideal = reconstruct(dec, scheme)
        errs = []
        for _ in range(50):
            tile = program_layer(dec, scheme, dev_cfg, 0.0, rng)
            errs.append(np.abs(effective_weights(tile, 0.0, dev_cfg, rng) - ideal).mean())
        # Budget: worst-case program noise (6% of each line) plus read noise.
        cal = weight_to_conductance(scheme, dev_cfg)
        budget = 0.06 * (np.abs(dec.m_pos * scheme.pos.base)
                         + np.abs(dec.m_neg * scheme.neg.base)).mean() \
            + 2 * dev_cfg.read_noise_std * cal.w_range
        assert np.mean(errs) < budget

    def test_overflow_rejected(self, scheme, dev_cfg, rng):
        big = max(scheme.pos.multiples)
        dec = DecomposedLayer(np.full((2, 2), big * 10), np.zeros((2, 2)))
        with pytest.raises(ValueError, match="calibration|g_max"):
            program_layer(dec, scheme, dev_cfg, 0.0, rng)


class TestMvm:
    def make_tile(self, scheme, cfg, rng, shape=(6, 5), seed=2):
        w = np.random.default_rng(seed).normal(0, 0.3, shape)
        dec = decompose(w, scheme)
        return program_layer(dec, scheme, cfg, 0.0, rng), reconstruct(dec, scheme)

    def test_zero_input_zero_output(self, scheme, dev_cfg, rng):
        tile, _ = self.make_tile(scheme, dev_cfg, rng)
        np.testing.assert_array_equal(mvm(tile, np.zeros(5), 100.0, dev_cfg, rng),
                                      np.zeros(6))

    def test_noise_off_equals_digital_product(self, scheme, rng):
        cfg = DeviceConfig().noiseless()
        tile, w = self.make_tile(scheme, cfg, rng)
        x = np.random.default_rng(3).random(5)
        np.testing.assert_allclose(mvm(tile, x, 50.0, cfg, rng), w @ x, rtol=0, atol=1e-12)

    def test_drift_only_equals_explicitly_drifted_product(self, scheme, rng):
        cfg = drift_only_cfg()
        tile, _ = self.make_tile(scheme, cfg, rng, shape=(8, 8))
        x = np.random.default_rng(4).random(8)
        t = 300.0
        wp = drift(tile.g_pos, 0.0, t, tile.nu_pos, cfg.t_ref)
        wn = drift(tile.g_neg, 0.0, t, tile.nu_neg, cfg.t_ref)
        expected = (wp - wn) @ x
        np.testing.assert_allclose(mvm(tile, x, t, cfg, rng), expected, rtol=0, atol=1e-12)

    def test_shape_mismatch_rejected(self, scheme, dev_cfg, rng):
        tile, _ = self.make_tile(scheme, dev_cfg, rng)
        with pytest.raises(ShapeError):
            mvm(tile, np.zeros(7), 0.0, dev_cfg, rng)


class TestIdentityProbe:
    def test_noise_off_probe_is_programmed_weights(self, scheme, rng):
        cfg = DeviceConfig().noiseless()
        w = np.random.default_rng(5).normal(0, 0.3, (4, 4))
        dec = decompose(w, scheme)
        tile = program_layer(dec, scheme, cfg, 0.0, rng)
        np.testing.assert_allclose(identity_probe(tile, 0.0, cfg, rng),
                                   reconstruct(dec, scheme), rtol=0, atol=1e-12)

    def test_diagonal_tile_probe_nearly_diagonal(self, scheme, dev_cfg, rng):
        level = scheme.pos.base * scheme.pos.multiples[-1]
        dec = decompose(np.diag(np.full(5, level)), scheme)
        tile = program_layer(dec, scheme, dev_cfg, 0.0, rng)
        probe = identity_probe(tile, 0.0, dev_cfg, rng)
        off = probe[~np.eye(5, dtype=bool)]
        assert np.abs(off).max() < 6 * dev_cfg.read_noise_std * tile.w_range

    def test_probe_columns_equal_basis_mvms_with_same_stream(self, scheme, dev_cfg, rng):
        w = np.random.default_rng(6).normal(0, 0.3, (4, 3))
        tile = program_layer(decompose(w, scheme), scheme, dev_cfg, 0.0, rng)
        probe = identity_probe(tile, 40.0, dev_cfg, np.random.default_rng(99))
        # Same rng stream, same draw order: per-cell reads reproduce the probe.
        direct = effective_weights(tile, 40.0, dev_cfg, np.random.default_rng(99))
        np.testing.assert_array_equal(probe, direct)
        # And probing e_j with the drawn matrix gives exactly column j.
        np.testing.assert_array_equal(probe[:, 1], probe @ np.eye(3)[1])


class TestAnalogForward:
    def test_noise_off_bit_exact_vs_digital(self, trained_net, dec_layers, scheme, rng):
        cfg = DeviceConfig().noiseless()
        anet = program_network(trained_net, dec_layers, scheme, cfg, 0.0, rng)
        x = np.random.default_rng(7).random((10, 8, 8))
        q_weights = [reconstruct(d, scheme) for d in dec_layers]
        analog = analog_forward(anet, x, 500.0, cfg, rng)
        digital = trained_net.forward(x, weights=q_weights)
        np.testing.assert_array_equal(analog, digital)

    def test_accuracy_within_read_noise_band_at_t0(self, trained_net, dec_layers,
                                                   scheme, digits, dev_cfg, rng):
        from pcmnet.network import evaluate

        _, test_set = digits
        sub = test_set.subset(slice(0, 200))
        q_weights = [reconstruct(d, scheme) for d in dec_layers]
        ref_acc, _ = evaluate(trained_net, sub, weights=q_weights)
        anet = program_network(trained_net, dec_layers, scheme, dev_cfg, 0.0, rng)
        accs = []
        for _ in range(10):
            w_eff = [effective_weights(t, 0.0, dev_cfg, rng) for t in anet.tiles]
            acc, _ = evaluate(trained_net, sub, weights=w_eff)
            accs.append(acc)
        assert abs(np.median(accs) - ref_acc) < 0.1

    def test_monotone_degradation_without_repair(self, trained_net, dec_layers,
                                                 scheme, digits):
        from pcmnet.network import evaluate

        _, test_set = digits
        sub = test_set.subset(slice(0, 150))
        cfg = DeviceConfig()
        acc_early, acc_late = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            anet = program_network(trained_net, dec_layers, scheme, cfg, 0.0, rng)
            for t, bucket in ((300.0, acc_early), (6000.0, acc_late)):
                w_eff = [effective_weights(tile, t, cfg, rng) for tile in anet.tiles]
                bucket.append(evaluate(trained_net, sub, weights=w_eff)[0])
        assert np.median(acc_late) <= np.median(acc_early)


class TestCommonModeRejection:
    def test_constant_conductance_shift_cancels(self, scheme, rng):
        cfg = DeviceConfig().noiseless()
        w = np.random.default_rng(8).normal(0, 0.3, (5, 5))
        tile = program_layer(decompose(w, scheme), scheme, cfg, 0.0, rng)
        x = np.random.default_rng(9).random(5)
        before = mvm(tile, x, 0.0, cfg, rng)
        tile.g_pos = tile.g_pos + 2.0
        tile.g_neg = tile.g_neg + 2.0
        after = mvm(tile, x, 0.0, cfg, rng)
        np.testing.assert_allclose(after, before, rtol=0, atol=1e-12)


class TestFloatProgramming:
    def test_float_network_noise_off_matches_digital(self, trained_net, rng):
        cfg = DeviceConfig().noiseless()
        anet = program_float_network(trained_net, cfg, 0.0, rng)
        x = np.random.default_rng(11).random((5, 8, 8))
        np.testing.assert_allclose(analog_forward(anet, x, 0.0, cfg, rng),
                                   trained_net.forward(x), rtol=0, atol=1e-9)
