"""Command-line harness: train -> quantize -> program -> run -> report,
fully reproducible from one root seed.

Exit codes: 0 success, 2 configuration error, 3 infeasible quantization
constraints, 4 runtime failure.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import crossbar, datasets, network, quantize, repair, serialize
from .config import (ConfigError, ExperimentConfig, apply_override,
                     config_to_dict, load_config)
from .quantize import SchemeInfeasible

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_RUNTIME = 4

# Fixed substream ids so each stage can be re-run independently but
# reproducibly from the one root seed.
STREAM_TRAIN, STREAM_ANNEAL, STREAM_DEVICE, STREAM_TIMELINE = 0, 1, 2, 3


def _load_cfg(config, seed, out, overrides) -> ExperimentConfig:
    cfg = load_config(config) if config else ExperimentConfig()
    for item in overrides:
        apply_override(cfg, item)
    if seed is not None:
        cfg.rng_seed = seed
    if out is not None:
        cfg.out_dir = out
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def _datasets(cfg: ExperimentConfig):
    dc = cfg.dataset
    if dc.source == "synthetic":
        full = datasets.synthetic_digits(dc.seed, dc.n_train + dc.n_test)
    elif dc.source == "idx":
        full = datasets.load_idx(dc.images_path, dc.labels_path)
    else:
        raise ConfigError(f"unknown dataset source {dc.source!r}")
    n = min(dc.n_train + dc.n_test, len(full))
    train = full.subset(slice(0, min(dc.n_train, n)))
    test = full.subset(slice(min(dc.n_train, n), n))
    return train, test


def _path(cfg, name):
    return os.path.join(cfg.out_dir, name)


common_options = [
    click.option("--config", type=click.Path(exists=True), default=None,
                 help="JSON experiment config; defaults apply when omitted."),
    click.option("--seed", type=int, default=None, help="Override the root rng seed."),
    click.option("--out", type=str, default=None, help="Output directory."),
    click.option("--set", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
                 help="Dotted-path config override; repeatable."),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Quantized self-repairing networks on simulated PCM crossbars."""


def _run_command(fn):
    try:
        fn()
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except SchemeInfeasible as e:
        click.echo(f"infeasible: {e}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_RUNTIME)


@main.command()
@with_common
def train(config, seed, out, overrides):
    """Train the constrained float network (and the noise-aware baseline)."""

    def go():
        cfg = _load_cfg(config, seed, out, overrides)
        train_set, test_set = _datasets(cfg)
        rows = []

        def progress(epoch, loss, acc):
            rows.append((epoch, loss, acc))

        net0 = network.build_network(
            input_hw=train_set.images.shape[1:],
            num_classes=train_set.num_classes,
            rng_seed=cfg.rng_seed * 4 + STREAM_TRAIN,
        )
        net = network.train(net0, train_set, cfg.train, progress=progress)
        serialize.save_network(_path(cfg, "network.pqnb"), net)
        csv_lines = ["epoch,loss,accuracy"] + [f"{e},{l!r},{a!r}" for e, l, a in rows]
        serialize.atomic_write(_path(cfg, "training.csv"), ("\n".join(csv_lines) + "\n").encode())

        w = net.all_weights()
        hist, edges = np.histogram(w, bins=80)
        hist_lines = ["bin_left,bin_right,count"] + [
            f"{float(edges[i])!r},{float(edges[i + 1])!r},{hist[i]}" for i in range(len(hist))
        ]
        serialize.atomic_write(_path(cfg, "weight_hist.csv"), ("\n".join(hist_lines) + "\n").encode())

        if "noise_aware" in cfg.variants:
            na_cfg = network.TrainConfig(**{**cfg.train.__dict__, "noise_aware": True})
            na_net = network.train(net0, train_set, na_cfg)
            serialize.save_network(_path(cfg, "network_noise_aware.pqnb"), na_net)

        acc, f1 = network.evaluate(net, test_set)
        click.echo(f"trained: test accuracy {acc:.4f}, macro F1 {f1:.4f}")

    _run_command(go)


@main.command()
@with_common
def quantize_cmd(config, seed, out, overrides):
    """Anneal a quantization scheme, decompose the network, report bins."""

    def go():
        cfg = _load_cfg(config, seed, out, overrides)
        net = serialize.load_network(_path(cfg, "network.pqnb"))
        weights = net.all_weights()
        acfg = cfg.anneal
        acfg.rng_seed = cfg.rng_seed * 4 + STREAM_ANNEAL
        scheme = quantize.anneal(weights, acfg, cfg.delta_write, cfg.epsilon_read)
        serialize.save_scheme(_path(cfg, "scheme.json"), scheme)

        decs = [quantize.decompose(m, scheme) for m in net.weight_matrices()]
        serialize.save_decomposed(_path(cfg, "decomposed.pqnb"), decs, scheme.digest())

        idx = quantize.nearest_sq_indices(weights, scheme.sq_values)
        counts = np.bincount(idx, minlength=len(scheme.sq_values))
        lines = ["value,m_pos,m_neg,count"] + [
            f"{float(scheme.sq_values[k])!r},{scheme.sq_m_pos[k]},{scheme.sq_m_neg[k]},{counts[k]}"
            for k in range(len(scheme.sq_values))
        ]
        serialize.atomic_write(_path(cfg, "bin_population.csv"), ("\n".join(lines) + "\n").encode())

        from .bitpack import compression_report
        reports = [compression_report(d, scheme) for d in decs]
        serialize.atomic_write(
            _path(cfg, "compression.json"),
            (json.dumps(reports, indent=2) + "\n").encode(),
        )

        train_set, test_set = _datasets(cfg)
        q_weights = [quantize.reconstruct(d, scheme) for d in decs]
        acc_f, f1_f = network.evaluate(net, test_set)
        acc_q, f1_q = network.evaluate(net, test_set, weights=q_weights)
        summary = {"float_accuracy": acc_f, "quantized_accuracy": acc_q,
                   "float_f1": f1_f, "quantized_f1": f1_q,
                   "achieved_error": scheme.achieved_error}
        serialize.atomic_write(_path(cfg, "quantize_summary.json"),
                               (json.dumps(summary, indent=2) + "\n").encode())
        click.echo(f"quantized: accuracy {acc_f:.4f} -> {acc_q:.4f}, "
                   f"error {scheme.achieved_error:.3e}")

    _run_command(go)


main.add_command(quantize_cmd, name="quantize")


def _build_variants(cfg, net, decs, scheme, na_net):
    rng = np.random.default_rng([cfg.rng_seed, STREAM_DEVICE])
    variants = []
    for name in cfg.variants:
        if name == "noise_aware":
            if na_net is None:
                raise ConfigError("noise_aware variant requested but no noise-aware network trained")
            anet = crossbar.program_float_network(na_net, cfg.device, 0.0, rng)
            variants.append(repair.TimelineVariant(name, anet, policy="none"))
        else:
            anet = crossbar.program_network(net, decs, scheme, cfg.device, 0.0, rng)
            policy = {"self_repair": "repair", "no_repair": "none",
                      "drift_comp": "compensate"}[name]
            variants.append(repair.TimelineVariant(name, anet, policy=policy))
    return variants


@main.command()
@with_common
def program(config, seed, out, overrides):
    """Program the quantized network onto tiles and dump tile state."""

    def go():
        cfg = _load_cfg(config, seed, out, overrides)
        net = serialize.load_network(_path(cfg, "network.pqnb"))
        scheme = serialize.load_scheme(_path(cfg, "scheme.json"))
        decs, digest = serialize.load_decomposed(_path(cfg, "decomposed.pqnb"))
        if digest != scheme.digest():
            raise ConfigError("decomposed layers were built with a different scheme")
        rng = np.random.default_rng([cfg.rng_seed, STREAM_DEVICE])
        anet = crossbar.program_network(net, decs, scheme, cfg.device, 0.0, rng)
        serialize.save_tiles(_path(cfg, "tiles.pqnb"), anet.tiles)
        click.echo(f"programmed {len(anet.tiles)} tiles")

    _run_command(go)


@main.command()
@with_common
def run(config, seed, out, overrides):
    """Program all variants and run the drift/repair timeline."""

    def go():
        cfg = _load_cfg(config, seed, out, overrides)
        net = serialize.load_network(_path(cfg, "network.pqnb"))
        scheme = serialize.load_scheme(_path(cfg, "scheme.json"))
        decs, _ = serialize.load_decomposed(_path(cfg, "decomposed.pqnb"))
        na_path = _path(cfg, "network_noise_aware.pqnb")
        na_net = serialize.load_network(na_path) if os.path.exists(na_path) else None
        _, test_set = _datasets(cfg)
        variants = _build_variants(cfg, net, decs, scheme, na_net)
        log = repair.run_timeline(
            variants, test_set, cfg.device, cfg.repair,
            steps=cfg.steps, step_seconds=cfg.step_seconds,
            rng_seed=cfg.rng_seed * 4 + STREAM_TIMELINE,
        )
        serialize.save_timeline(_path(cfg, "timeline.csv"), _path(cfg, "timeline.json"), log)
        click.echo(f"timeline: {len(log.rows)} rows, {len(log.events)} repair events")

    _run_command(go)


@main.command()
@with_common
def report(config, seed, out, overrides):
    """Summarize a timeline log into plot-ready data files."""

    def go():
        cfg = _load_cfg(config, seed, out, overrides)
        log = serialize.load_timeline(_path(cfg, "timeline.csv"), _path(cfg, "timeline.json"))
        by_variant = {}
        for row in log.rows:
            by_variant.setdefault(row["variant"], []).append(row)
        summary = {"variants": {}, "repair_events": len(log.events)}
        for name, rows in by_variant.items():
            accs = [r["accuracy"] for r in rows]
            lines = ["# t accuracy f1 probe_error"] + [
                f"{r['t']!r} {r['accuracy']!r} {r['f1']!r} {r['probe_error']!r}" for r in rows
            ]
            serialize.atomic_write(_path(cfg, f"trajectory_{name}.dat"),
                                   ("\n".join(lines) + "\n").encode())
            summary["variants"][name] = {
                "mean_accuracy": float(np.mean(accs)) if accs else float("nan"),
                "final_accuracy": accs[-1] if accs else float("nan"),
                "accuracy_variance": float(np.var(accs)) if accs else float("nan"),
            }
        # Inter-step accuracy variance: self-repair vs noise-aware comparison.
        for a, b in (("self_repair", "noise_aware"),):
            if a in summary["variants"] and b in summary["variants"]:
                summary["variance_observation"] = {
                    a: summary["variants"][a]["accuracy_variance"],
                    b: summary["variants"][b]["accuracy_variance"],
                }
        if log.events:
            lines = ["t variant pulses irreversible pre_acc post_acc"] + [
                f"{e['t']!r} {e['variant']} {e['weights_touched']} "
                f"{e['irreversible_count']} {e['pre_accuracy']!r} {e['post_accuracy']!r}"
                for e in log.events
            ]
            serialize.atomic_write(_path(cfg, "repair_events.dat"),
                                   ("\n".join(lines) + "\n").encode())
        serialize.atomic_write(_path(cfg, "report.json"),
                               (json.dumps(summary, indent=2) + "\n").encode())
        click.echo(json.dumps(summary, indent=2))

    _run_command(go)


@main.command()
@with_common
def gradcheck(config, seed, out, overrides):
    """Compare analytic gradients with central finite differences."""

    def go():
        cfg = _load_cfg(config, seed, out, overrides)
        from .gradcheck import max_relative_gradient_error

        err = max_relative_gradient_error(rng_seed=cfg.rng_seed)
        click.echo(f"max relative gradient error: {err:.3e}")
        if err >= 1e-4:
            raise RuntimeError(f"gradient check failed: {err:.3e} >= 1e-4")

    _run_command(go)


@main.command()
def formats():
    """Print file formats and CSV schemas."""
    click.echo(FORMATS_TEXT)


FORMATS_TEXT = """\
File formats
============

network.pqnb / decomposed.pqnb / tiles.pqnb  (tagged binary bundle)
  magic "PQNB" | u16 version | u32 meta_len | JSON meta | raw tensors.
  Tensor data is little-endian float64/int64, C order, in the order listed
  in the meta's tensor index.

scheme.json
  JSON with format_version, pos/neg {base, multiples}, delta_write,
  epsilon_read, achieved_error, sha256 digest.

packed weight matrices ("PQW1")
  16-byte header: magic "PQW1" | u16 rows | u16 cols | u8 bits_per_entry |
  u8 polarity (0 positive, 1 negative) | 6-byte scheme digest prefix.
  Payload: entries row-major, little-endian bit order within bytes.

timeline.csv
  columns: t,variant,accuracy,f1,probe_error,repaired,pulses,irreversible
  one row per timestep per variant; floats written with full precision.

timeline.json
  {"rows": [...], "events": [...]} with full repair-event detail
  (layers, pulse counts, irreversible counts, pre/post probe error and
  pre/post accuracy).

training.csv      columns: epoch,loss,accuracy
weight_hist.csv   columns: bin_left,bin_right,count
bin_population.csv columns: value,m_pos,m_neg,count
"""


if __name__ == "__main__":
    main()
