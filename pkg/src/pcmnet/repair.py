"""Self-correction: probe-based drift detection, per-weight candidate
selection, pulse snap-back, the global drift-compensation baseline, and the
timeline experiment that compares network variants over drift steps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import device
from .crossbar import AnalogNetwork, AnalogTile, analog_forward, effective_weights, identity_probe
from .datasets import Dataset
from .device import DeviceConfig
from .network import evaluate
from .quantize import QuantizationScheme

log = logging.getLogger(__name__)


@dataclass
class RepairConfig:
    global_threshold: float = 10.0  # sum |probe - baseline| over all weights
    layer_threshold_dt: float = 1.0
    deviation_fraction: float = 1.0 / 3.0
    scope: str = "per-layer"  # or "whole-network"
    probe_period: float = 300.0
    threshold_mode: str = "step"  # "step": fraction of the base step;
    # "level": fraction of the weight's own quantized level

    def validate(self):
        if self.global_threshold <= 0 or self.layer_threshold_dt <= 0:
            raise ValueError("thresholds must be positive")
        if not (0.0 < self.deviation_fraction < 0.5):
            raise ValueError("deviation_fraction must be in (0, 1/2)")
        if self.scope not in ("per-layer", "whole-network"):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.threshold_mode not in ("step", "level"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")


@dataclass
class RepairEvent:
    t: float
    layers_repaired: list
    weights_touched: int
    irreversible_count: int
    pre_probe_error: float
    post_probe_error: float
    pre_accuracy: float = float("nan")
    post_accuracy: float = float("nan")


@dataclass
class TimelineLog:
    """Per-timestep record: one row dict per (step, variant) plus the full
    repair-event detail."""

    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)

    COLUMNS = ("t", "variant", "accuracy", "f1", "probe_error", "repaired", "pulses", "irreversible")


def _layer_probe_error(tile: AnalogTile, t_now, cfg: DeviceConfig, rng) -> float:
    return float(np.abs(identity_probe(tile, t_now, cfg, rng) - tile.baseline_probe).sum())


def global_error(anet: AnalogNetwork, t_now, cfg: DeviceConfig, rng=None):
    """Sum of absolute probe deviations from the t=0 baselines, all layers."""
    return sum(_layer_probe_error(t, t_now, cfg, rng) for t in anet.tiles)


def identify_layers(anet: AnalogNetwork, t_now, cfg: DeviceConfig,
                    rcfg: RepairConfig, rng=None):
    """Layers whose own probe deviation exceeds the layer threshold dt
    (whole-network scope selects every layer)."""
    if rcfg.scope == "whole-network":
        return list(range(len(anet.tiles)))
    return [
        k
        for k, tile in enumerate(anet.tiles)
        if _layer_probe_error(tile, t_now, cfg, rng) > rcfg.layer_threshold_dt
    ]


def candidate_weights(tile: AnalogTile, scheme: QuantizationScheme,
                      rcfg: RepairConfig, t_now, cfg: DeviceConfig):
    """Cells whose drifted value strayed beyond the deviation threshold from
    their initial quantized value.

    Selection uses the noise-free drifted read (an averaged readout); the
    threshold comparison is strict, so a deviation exactly at the boundary is
    not a candidate. Targets are the originally stored multiples.
    """
    if tile.target_m_pos is None:
        raise ValueError("tile carries no stored multiples; cannot repair a float tile")
    current = effective_weights(tile, t_now, cfg, rng=None)
    initial = tile.target_weights()
    deviation = np.abs(current - initial)
    if rcfg.threshold_mode == "step":
        base = np.where(
            (tile.target_m_pos > 0) & (tile.target_m_neg == 0), scheme.pos.base,
            np.where(
                (tile.target_m_neg > 0) & (tile.target_m_pos == 0), scheme.neg.base,
                min(scheme.pos.base, scheme.neg.base),
            ),
        )
        threshold = rcfg.deviation_fraction * base
    else:
        own = np.abs(initial)
        step = min(scheme.pos.base, scheme.neg.base)
        threshold = rcfg.deviation_fraction * np.where(own > 0, own, step)
    ii, jj = np.nonzero(deviation > threshold)
    return [
        (int(i), int(j), int(tile.target_m_pos[i, j]), int(tile.target_m_neg[i, j]))
        for i, j in zip(ii, jj)
    ]


def correct(tile: AnalogTile, candidates, scheme: QuantizationScheme,
            cfg: DeviceConfig, rng, t_now) -> RepairEvent:
    """Reprogram each candidate pair back to its stored target multiples.

    Pulse amplitude follows the conductance gap |current - target|, so small
    nudges use small (noisier) pulses. A candidate whose drifted value is now
    nearest to a different representable value counts as irreversible, but is
    still restored to the stored target.
    """
    pre = _layer_probe_error(tile, t_now, cfg, rng)
    irreversible = 0
    if candidates:
        idx = np.array([(c[0], c[1]) for c in candidates], dtype=np.int64)
        ii, jj = idx[:, 0], idx[:, 1]
        # A cell is irreversibly degraded when either line's drifted
        # conductance now rounds to a different multiple of its base step.
        drifted_off = np.zeros(len(ii), dtype=bool)
        for line, bin_set in (("pos", scheme.pos), ("neg", scheme.neg)):
            g = getattr(tile, f"g_{line}")
            nu = getattr(tile, f"nu_{line}")
            target_m = getattr(tile, f"target_m_{line}")[ii, jj]
            cur = device.drift(g[ii, jj], tile.t_prog[ii, jj], t_now, nu[ii, jj], cfg.t_ref)
            drifted_off |= np.round(cur / bin_set.base).astype(np.int64) != target_m
        irreversible = int(drifted_off.sum())
        for line in ("pos", "neg"):
            g = getattr(tile, f"g_{line}")
            nu = getattr(tile, f"nu_{line}")
            target = getattr(tile, f"target_g_{line}")[ii, jj]
            cur_g = device.drift(g[ii, jj], tile.t_prog[ii, jj], t_now, nu[ii, jj], cfg.t_ref)
            # Pulse amplitude follows the physical conductance gap.
            amp = cfg.pulse_amp_low + (
                np.abs(cur_g - target) * tile.scale / cfg.g_max
            ) * (cfg.pulse_amp_high - cfg.pulse_amp_low)
            std = device.pulse_error(np.maximum(amp, cfg.pulse_amp_low), cfg)
            eta = rng.normal(0.0, 1.0, size=target.shape) * std if np.any(std) else 0.0
            g[ii, jj] = np.clip(target * (1.0 + eta), 0.0, cfg.g_max / tile.scale)
        tile.t_prog[ii, jj] = t_now
    post = _layer_probe_error(tile, t_now, cfg, rng)
    return RepairEvent(
        t=float(t_now),
        layers_repaired=[],
        weights_touched=len(candidates),
        irreversible_count=irreversible,
        pre_probe_error=pre,
        post_probe_error=post,
    )


def repair_network(anet: AnalogNetwork, t_now, cfg: DeviceConfig,
                   rcfg: RepairConfig, rng) -> RepairEvent | None:
    """Full trigger -> identify -> correct pass; None when not triggered."""
    err = global_error(anet, t_now, cfg, rng)
    if err <= rcfg.global_threshold:
        return None
    layers = identify_layers(anet, t_now, cfg, rcfg, rng)
    event = RepairEvent(
        t=float(t_now),
        layers_repaired=layers,
        weights_touched=0,
        irreversible_count=0,
        pre_probe_error=err,
        post_probe_error=err,
    )
    if not layers:
        log.info("repair triggered at t=%s but no layer above dt", t_now)
        return event
    for k in layers:
        tile = anet.tiles[k]
        cands = candidate_weights(tile, anet.scheme, rcfg, t_now, cfg)
        sub = correct(tile, cands, anet.scheme, cfg, rng, t_now)
        event.weights_touched += sub.weights_touched
        event.irreversible_count += sub.irreversible_count
    event.post_probe_error = global_error(anet, t_now, cfg, rng)
    return event


def global_drift_compensation(anet: AnalogNetwork, t_now, cfg: DeviceConfig, rng=None):
    """Per-layer output scale: baseline probe magnitude over current probe
    magnitude, the reprogramming-free alternative to repair."""
    scales = []
    for tile in anet.tiles:
        denom = float(np.abs(identity_probe(tile, t_now, cfg, rng)).sum())
        num = float(np.abs(tile.baseline_probe).sum())
        if denom == 0.0:
            log.warning("probe magnitude is zero; compensation scale forced to 1")
            scales.append(1.0)
        else:
            scales.append(num / denom)
    return scales


@dataclass
class TimelineVariant:
    name: str
    anet: AnalogNetwork
    policy: str = "none"  # "repair" | "compensate" | "none"


def run_timeline(variants, dataset: Dataset, dev_cfg: DeviceConfig,
                 repair_cfg: RepairConfig, steps: int = 20,
                 step_seconds: float = 300.0, rng_seed: int = 0) -> TimelineLog:
    """Advance a shared clock in drift steps and log each variant's accuracy,
    probe error and repair activity.

    Order within a step: advance, evaluate (so the logged accuracy is the
    drifted, pre-repair one), then probe/repair the self-repairing variant. Repair events additionally record pre/post accuracy.
    """
    repair_cfg.validate()
    logrec = TimelineLog()
    rngs = {v.name: np.random.default_rng([rng_seed, k]) for k, v in enumerate(variants)}

    def record(t, v, rng):
        scales = None
        if v.policy == "compensate":
            scales = global_drift_compensation(v.anet, t, dev_cfg, rng)
        acc, f1 = _eval_analog(v.anet, dataset, t, dev_cfg, rng, scales)
        probe_err = global_error(v.anet, t, dev_cfg, rng)
        row = {
            "t": float(t), "variant": v.name, "accuracy": acc, "f1": f1,
            "probe_error": probe_err, "repaired": 0, "pulses": 0, "irreversible": 0,
        }
        logrec.rows.append(row)
        return row, acc

    for v in variants:
        record(v.anet.t_prog, v, rngs[v.name])
    for step in range(1, steps + 1):
        t = variants[0].anet.t_prog + step * step_seconds
        for v in variants:
            rng = rngs[v.name]
            row, acc = record(t, v, rng)
            if v.policy == "repair":
                event = repair_network(v.anet, t, dev_cfg, repair_cfg, rng)
                if event is not None:
                    row["repaired"] = 1
                    row["pulses"] = event.weights_touched
                    row["irreversible"] = event.irreversible_count
                    event.pre_accuracy = acc
                    event.post_accuracy, _ = _eval_analog(v.anet, dataset, t, dev_cfg, rng, None)
                    logrec.events.append({"variant": v.name, **event.__dict__})
    return logrec


def _eval_analog(anet, dataset, t, cfg, rng, scales):
    weights = [effective_weights(tile, t, cfg, rng) for tile in anet.tiles]
    return evaluate(anet.net, dataset, weights=weights, out_scales=scales)
