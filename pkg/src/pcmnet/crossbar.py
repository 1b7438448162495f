"""Crossbar tiles of differential PCM pairs: programming, analog MVM, and
identity probes at a given simulation time.

Tile conductances are stored in weight-normalized units: the physical
conductance of a cell is value * scale, with scale = g_max / w_range.
Programming noise is relative and drift is multiplicative, so both are
identical in either unit system; the normalized form keeps the noise-free
analog path bit-exact against the digital reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import device
from .device import Calibration, DeviceConfig
from .network import Network, ShapeError
from .quantize import DecomposedLayer, QuantizationScheme


@dataclass
class AnalogTile:
    """One layer's weight matrix as rows x cols differential pairs."""

    g_pos: np.ndarray  # weight-normalized conductances (physical / scale)
    g_neg: np.ndarray
    nu_pos: np.ndarray
    nu_neg: np.ndarray
    t_prog: np.ndarray  # per-pair programming time (repair reprograms cells)
    scale: float  # physical conductance per weight unit
    w_range: float  # weight magnitude that maps to g_max
    target_g_pos: np.ndarray
    target_g_neg: np.ndarray
    target_m_pos: np.ndarray | None = None
    target_m_neg: np.ndarray | None = None
    baseline_probe: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.g_pos.shape[0]

    @property
    def cols(self) -> int:
        return self.g_pos.shape[1]

    def target_weights(self) -> np.ndarray:
        return self.target_g_pos - self.target_g_neg


@dataclass
class AnalogNetwork:
    """Digital network skeleton plus one tile per layer; activations and
    biases stay digital, only the weight matrices live on tiles."""

    net: Network
    tiles: list
    scheme: QuantizationScheme | None
    t_prog: float


def effective_weights(tile: AnalogTile, t_now, cfg: DeviceConfig, rng) -> np.ndarray:
    """Per-read noisy, drifted differential weight matrix at time t_now."""
    gp = device.drift(tile.g_pos, tile.t_prog, t_now, tile.nu_pos, cfg.t_ref)
    gn = device.drift(tile.g_neg, tile.t_prog, t_now, tile.nu_neg, cfg.t_ref)
    w = gp - gn
    if cfg.read_noise_std > 0 and rng is not None:
        w = w + rng.normal(0.0, cfg.read_noise_std * tile.w_range, size=w.shape)
    return w


def mvm(tile: AnalogTile, x, t_now, cfg: DeviceConfig, rng) -> np.ndarray:
    """Differential analog matrix-vector product with fresh per-weight noise."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != tile.cols:
        raise ShapeError(f"input length {x.shape[-1]} != tile cols {tile.cols}")
    return effective_weights(tile, t_now, cfg, rng) @ x


def identity_probe(tile: AnalogTile, t_now, cfg: DeviceConfig, rng) -> np.ndarray:
    """Estimate of the effective weight matrix obtained by driving unit basis
    vectors: column j equals mvm(tile, e_j)."""
    return effective_weights(tile, t_now, cfg, rng)


def program_conductances(target, cfg: DeviceConfig, scale, rng):
    """Pulse-program normalized conductances: relative error drawn at the
    amplitude of the corresponding physical conductance."""
    std = device.pulse_error(device.pulse_amplitude(target * scale, cfg), cfg)
    if not np.any(np.asarray(std) > 0):
        return np.array(target, dtype=np.float64, copy=True)
    eta = rng.normal(0.0, 1.0, size=np.shape(target)) * std
    return np.clip(target * (1.0 + eta), 0.0, cfg.g_max / scale)


def _program_tile(tgp, tgn, cfg: DeviceConfig, cal: Calibration, t_prog, rng,
                  m_pos=None, m_neg=None) -> AnalogTile:
    if np.any(tgp * cal.scale > cfg.g_max * (1 + 1e-9)) or np.any(
            tgn * cal.scale > cfg.g_max * (1 + 1e-9)):
        raise ValueError("target conductance exceeds g_max: level beyond calibration")
    tile = AnalogTile(
        g_pos=program_conductances(tgp, cfg, cal.scale, rng),
        g_neg=program_conductances(tgn, cfg, cal.scale, rng),
        nu_pos=device.draw_nu(cfg, rng, tgp.shape),
        nu_neg=device.draw_nu(cfg, rng, tgn.shape),
        t_prog=np.full(tgp.shape, float(t_prog)),
        scale=cal.scale,
        w_range=cal.w_range,
        target_g_pos=tgp,
        target_g_neg=tgn,
        target_m_pos=m_pos,
        target_m_neg=m_neg,
    )
    tile.baseline_probe = identity_probe(tile, t_prog, cfg, rng)
    return tile


def program_layer(dec: DecomposedLayer, scheme: QuantizationScheme, cfg: DeviceConfig,
                  t_prog, rng, cal: Calibration | None = None) -> AnalogTile:
    """Program one decomposed layer onto a tile and capture its t=0 probe."""
    if cal is None:
        cal = device.weight_to_conductance(scheme, cfg)
    tgp = dec.m_pos * scheme.pos.base
    tgn = dec.m_neg * scheme.neg.base
    return _program_tile(tgp, tgn, cfg, cal, t_prog, rng,
                         m_pos=dec.m_pos, m_neg=dec.m_neg)


def program_network(net: Network, dec_layers, scheme: QuantizationScheme,
                    cfg: DeviceConfig, t_prog, rng) -> AnalogNetwork:
    """Map every layer of a quantized network onto crossbar tiles."""
    cal = device.weight_to_conductance(scheme, cfg)
    tiles = [program_layer(d, scheme, cfg, t_prog, rng, cal) for d in dec_layers]
    return AnalogNetwork(net=net, tiles=tiles, scheme=scheme, t_prog=float(t_prog))


def program_float_network(net: Network, cfg: DeviceConfig, t_prog, rng) -> AnalogNetwork:
    """Program a float-weight network directly (no quantization): positive
    parts on the positive line, negative parts on the negative line."""
    w_max = max(float(np.max(np.abs(lay.w))) for lay in net.layers)
    if w_max <= 0:
        raise ValueError("degenerate network: all weights zero")
    cal = Calibration(scale=cfg.g_max / w_max, w_range=w_max)
    tiles = []
    for lay in net.layers:
        tgp = np.maximum(lay.w, 0.0)
        tgn = np.maximum(-lay.w, 0.0)
        tiles.append(_program_tile(tgp, tgn, cfg, cal, t_prog, rng))
    return AnalogNetwork(net=net, tiles=tiles, scheme=None, t_prog=float(t_prog))


def analog_forward(anet: AnalogNetwork, batch, t_now, cfg: DeviceConfig, rng,
                   out_scales=None) -> np.ndarray:
    """Forward pass with analog MVMs: one fresh effective-weight draw per tile
    per call, digital biases and activations."""
    weights = [effective_weights(t, t_now, cfg, rng) for t in anet.tiles]
    return anet.net.forward(batch, weights=weights, out_scales=out_scales)
