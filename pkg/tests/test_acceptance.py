"""Acceptance suite: every criterion prints one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from pcmnet import network
from pcmnet.bitpack import bits_for, pack_matrix, unpack_matrix
from pcmnet.cli import main as cli_main
from pcmnet.crossbar import analog_forward, effective_weights, program_layer, program_network
from pcmnet.device import DeviceConfig, drift, pulse_error
from pcmnet.gradcheck import max_relative_gradient_error
from pcmnet.quantize import (AnnealConfig, anneal, decompose, quantization_error,
                             reconstruct, uniform_grid_scheme, validate_constraints)
from pcmnet.repair import (RepairConfig, TimelineVariant, candidate_weights, correct,
                           repair_network, run_timeline)

from conftest import DELTA_WRITE, EPSILON_READ


_CAPFD = None


@pytest.fixture(autouse=True)
def _expose_capfd(capfd):
    global _CAPFD
    _CAPFD = capfd
    yield
    _CAPFD = None


def _line(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    msg = f"[acceptance {num:02d}] {name}: {status}" + (f" ({detail})" if detail else "")
    if _CAPFD is not None:
        # Step outside pytest's capture so the line always reaches the console.
        with _CAPFD.disabled():
            print(msg, flush=True)
    else:
        print(msg, flush=True)
    assert ok, f"criterion {num} ({name}): {detail}"


class TestAcceptance:
    def test_01_gradient_check(self):
        t0 = time.perf_counter()
        err = max_relative_gradient_error(rng_seed=0)
        elapsed = time.perf_counter() - t0
        _line(1, "analytic gradients vs finite differences",
              err < 1e-4 and elapsed < 10.0,
              f"max rel err {err:.2e}, {elapsed:.1f}s")

    def test_02_training_and_quantized_accuracy(self, digits, trained_net, scheme,
                                                dec_layers):
        train_set, test_set = digits
        t0 = time.perf_counter()
        net = network.train(network.build_network(rng_seed=0), train_set,
                            network.TrainConfig())
        s = anneal(net.all_weights(), AnnealConfig(rng_seed=1),
                   DELTA_WRITE, EPSILON_READ)
        elapsed = time.perf_counter() - t0
        acc_f, _ = network.evaluate(trained_net, test_set)
        q_weights = [reconstruct(d, scheme) for d in dec_layers]
        acc_q, _ = network.evaluate(trained_net, test_set, weights=q_weights)
        _line(2, "float accuracy >= 90%, quantized drop <= 2pp, < 5 min",
              acc_f >= 0.90 and acc_q >= acc_f - 0.02 and elapsed < 300.0,
              f"float {acc_f:.4f}, quantized {acc_q:.4f}, {elapsed:.0f}s")

    def test_03_annealing_feasible_and_beats_uniform_grid(self, trained_net):
        w = trained_net.all_weights()
        sub = np.random.default_rng(0).choice(w, 2000, replace=False)
        grid = uniform_grid_scheme(sub, 8, DELTA_WRITE, EPSILON_READ)
        grid_err = quantization_error(sub, grid.sq_values)
        feasible = beat = 0
        for seed in range(100):
            s = anneal(sub, AnnealConfig(rng_seed=seed), DELTA_WRITE, EPSILON_READ)
            if not validate_constraints(s):
                feasible += 1
            if s.achieved_error <= grid_err:
                beat += 1
        _line(3, "100 annealing seeds: all feasible, >= 95 beat uniform grid",
              feasible == 100 and beat >= 95,
              f"feasible {feasible}/100, beat {beat}/100")

    def test_04_decompose_matches_brute_force(self, scheme):
        rng = np.random.default_rng(4)
        w = rng.normal(0.0, 0.4, (100, 100))
        dec = decompose(w, scheme)
        idx = np.abs(w.ravel()[:, None] - scheme.sq_values[None, :]).argmin(axis=1)
        ok = (dec.m_pos.ravel() == scheme.sq_m_pos[idx]).all() and (
            dec.m_neg.ravel() == scheme.sq_m_neg[idx]).all()
        _line(4, "decomposition equals brute-force nearest search on 10k weights",
              bool(ok))

    def test_05_pulse_error_anchors_and_monotonicity(self, dev_cfg):
        low = pulse_error(100e-9, dev_cfg)
        high = pulse_error(1.28e-3, dev_cfg)
        amps = np.logspace(-8, -2, 500)
        mono = bool((np.diff(pulse_error(amps, dev_cfg)) <= 1e-15).all())
        _line(5, "pulse error anchors (100nA: 6%, 1.28mA: 0.2%) and monotone",
              low == 0.06 and abs(high - 0.002) < 1e-12 and mono,
              f"low {low}, high {high}")

    def test_06_drift_exponent_recovery(self, dev_cfg):
        rng = np.random.default_rng(6)
        ts = np.logspace(0, 5, 15)
        logt = np.log((ts + dev_cfg.t_ref) / dev_cfg.t_ref)

        def recover(read_noise):
            errs = []
            for _ in range(50):
                nu = rng.normal(dev_cfg.drift_nu_mean, dev_cfg.drift_nu_std)
                nu = max(nu, 0.01)
                g = drift(10.0, 0.0, ts, nu, dev_cfg.t_ref)
                g = g * (1.0 + rng.normal(0.0, read_noise, size=g.shape))
                slope = np.polyfit(logt, np.log(g), 1)[0]
                errs.append(abs(-slope - nu) / nu)
            return float(np.median(errs))

        clean = recover(0.0)
        noisy = recover(dev_cfg.read_noise_std)
        _line(6, "drift exponent recovered (clean < 1%, noisy median < 10%)",
              clean < 0.01 and noisy < 0.10,
              f"clean {clean:.2e}, noisy {noisy:.3f}")

    def test_07_noise_off_analog_equals_digital(self, trained_net, dec_layers, scheme):
        cfg = DeviceConfig().noiseless()
        rng = np.random.default_rng(7)
        anet = program_network(trained_net, dec_layers, scheme, cfg, 0.0, rng)
        x = rng.random((100, 8, 8))
        q_weights = [reconstruct(d, scheme) for d in dec_layers]
        analog = analog_forward(anet, x, 1000.0, cfg, rng)
        digital = trained_net.forward(x, weights=q_weights)
        _line(7, "noise-off analog forward bit-exact vs digital (100 inputs)",
              bool((analog == digital).all()),
              f"max abs diff {np.max(np.abs(analog - digital)):.1e}")

    def test_08_repair_restores_and_improves(self, trained_net, dec_layers, scheme,
                                             dev_cfg):
        # Noise-off: repair restores drifted candidates exactly.
        import dataclasses

        cfg = dataclasses.replace(DeviceConfig().noiseless(),
                                  drift_nu_mean=0.06, drift_nu_std=0.02)
        anet = program_network(trained_net, dec_layers, scheme, cfg, 0.0,
                               np.random.default_rng(8))
        rcfg = RepairConfig(global_threshold=1e-9, layer_threshold_dt=1e-9)
        t = 300.0
        repair_network(anet, t, cfg, rcfg, np.random.default_rng(8))
        exact = True
        for tile in anet.tiles:
            got = effective_weights(tile, t, cfg, None)
            ref = tile.target_weights()
            for i, j, _, _ in candidate_weights(tile, scheme, rcfg, t, cfg):
                exact = exact and got[i, j] == ref[i, j]
        # Noisy Monte-Carlo: probe error improves in >= 95/100 trials.
        w = np.random.default_rng(88).normal(0, 0.25, (8, 8))
        dec = decompose(w, scheme)
        improved = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            tile = program_layer(dec, scheme, dev_cfg, 0.0, rng)
            cands = candidate_weights(tile, scheme, RepairConfig(), 5.0, dev_cfg)
            ev = correct(tile, cands, scheme, dev_cfg, rng, 5.0)
            if ev.post_probe_error < ev.pre_probe_error:
                improved += 1
        _line(8, "repair: noise-off exact restore, noisy probe improves >= 95/100",
              exact and improved >= 95,
              f"exact {exact}, improved {improved}/100")

    @staticmethod
    @pytest.fixture(scope="class")
    def timeline_stats(trained_net, dec_layers, scheme, digits, noise_aware_net):
        dev_cfg = DeviceConfig()
        _, test_set = digits
        sub = test_set.subset(slice(0, 200))
        t0 = time.perf_counter()
        finals = {"self_repair": [], "no_repair": []}
        initials = {"self_repair": [], "no_repair": []}
        events = []
        variances = {"self_repair": [], "noise_aware": []}
        for seed in range(20):
            rng = np.random.default_rng(seed)
            from pcmnet.crossbar import program_float_network

            variants = [
                TimelineVariant("self_repair",
                                program_network(trained_net, dec_layers, scheme,
                                                dev_cfg, 0.0, rng), "repair"),
                TimelineVariant("no_repair",
                                program_network(trained_net, dec_layers, scheme,
                                                dev_cfg, 0.0, rng), "none"),
                TimelineVariant("noise_aware",
                                program_float_network(noise_aware_net, dev_cfg,
                                                      0.0, rng), "none"),
            ]
            log = run_timeline(variants, sub, dev_cfg, RepairConfig(), steps=20,
                               step_seconds=300.0, rng_seed=seed)
            for name in ("self_repair", "no_repair"):
                accs = [r["accuracy"] for r in log.rows if r["variant"] == name]
                initials[name].append(accs[0])
                finals[name].append(accs[-1])
            for name in ("self_repair", "noise_aware"):
                accs = [r["accuracy"] for r in log.rows if r["variant"] == name]
                variances[name].append(float(np.var(accs)))
            events.extend(log.events)
        elapsed = time.perf_counter() - t0
        return initials, finals, events, variances, elapsed

    def test_09_timeline_repair_outperforms(self, timeline_stats):
        initials, finals, events, _, elapsed = timeline_stats
        no_repair_degrades = np.median(finals["no_repair"]) <= np.median(
            initials["no_repair"])
        repair_wins = np.median(finals["self_repair"]) >= np.median(
            finals["no_repair"])
        gains = [e["post_accuracy"] >= e["pre_accuracy"] for e in events]
        gain_rate = np.mean(gains) if gains else 0.0
        _line(9, "20-seed timeline: no-repair degrades, repair wins, "
                 "post >= pre in >= 90% of events, < 10 min",
              no_repair_degrades and repair_wins and gain_rate >= 0.90
              and elapsed < 600.0,
              f"no-repair {np.median(initials['no_repair']):.3f}->"
              f"{np.median(finals['no_repair']):.3f}, "
              f"self-repair final {np.median(finals['self_repair']):.3f}, "
              f"gain rate {gain_rate:.2f} over {len(gains)} events, {elapsed:.0f}s")

    def test_10_variance_observation(self, timeline_stats):
        _, _, _, variances, _ = timeline_stats
        sr = float(np.median(variances["self_repair"]))
        na = float(np.median(variances["noise_aware"]))
        # Reported, not hard-asserted: the repaired network's accuracy swings
        # step to step while the noise-aware float network stays steadier.
        _line(10, "inter-step accuracy variance reported (self-repair vs noise-aware)",
              math.isfinite(sr) and math.isfinite(na),
              f"self_repair {sr:.2e}, noise_aware {na:.2e}, wider={sr > na}")

    def test_11_bit_packing(self):
        rng = np.random.default_rng(11)
        ok = True
        for rows, cols in ((16, 16), (9, 13), (1, 37)):
            m = rng.integers(0, 16, size=(rows, cols))
            bits = bits_for(15)
            payload = pack_matrix(m, bits)
            ok = ok and bits == 4
            ok = ok and len(payload) == math.ceil(rows * cols * 4 / 8)
            ok = ok and (unpack_matrix(payload, rows, cols, bits) == m).all()
        _line(11, "multiples < 16 pack at 4 bits (ceil(4n/8) bytes) and round-trip",
              bool(ok))

    def test_12_run_command_byte_identical(self, tmp_path):
        runner = CliRunner()
        out = str(tmp_path / "acc")
        fast = ["--set", "dataset.n_train=400", "--set", "dataset.n_test=120",
                "--set", "train.epochs=6", "--set", "anneal.iterations=500",
                "--set", "steps=5"]
        for cmd in ("train", "quantize"):
            r = runner.invoke(cli_main, [cmd, "--out", out, "--seed", "2"] + fast)
            assert r.exit_code == 0, r.output
        blobs = []
        for _ in range(2):
            r = runner.invoke(cli_main, ["run", "--out", out, "--seed", "2"] + fast)
            assert r.exit_code == 0, r.output
            blobs.append(open(f"{out}/timeline.csv", "rb").read())
        _line(12, "repeated `run` with one seed yields byte-identical timeline.csv",
              blobs[0] == blobs[1], f"{len(blobs[0])} bytes")
