"""Single differential PCM weight: pulse programming error, additive read
noise, and power-law conductance drift."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class DeviceConfig:
    g_max: float = 25.0
    read_noise_std: float = 0.02  # additive, relative to the weight range
    drift_nu_mean: float = 0.06
    drift_nu_std: float = 0.02
    t_ref: float = 1.0  # seconds
    pulse_amp_low: float = 100e-9  # amperes
    pulse_err_low: float = 0.06  # relative std at the low-amplitude anchor
    pulse_amp_high: float = 1.28e-3
    pulse_err_high: float = 0.002

    def validate(self):
        if self.g_max <= 0:
            raise ValueError("g_max must be positive")
        if self.read_noise_std < 0 or self.drift_nu_std < 0:
            raise ValueError("noise stds must be non-negative")
        if self.pulse_amp_low >= self.pulse_amp_high:
            raise ValueError("pulse anchor amplitudes must be increasing")

    def noiseless(self) -> "DeviceConfig":
        """Copy with every stochastic term (and drift) switched off."""
        return replace(
            self,
            read_noise_std=0.0,
            drift_nu_mean=0.0,
            drift_nu_std=0.0,
            pulse_err_low=0.0,
            pulse_err_high=0.0,
        )


@dataclass
class Calibration:
    """Linear weight <-> conductance map: the largest representable weight
    magnitude programs to g_max."""

    scale: float  # conductance per weight unit
    w_range: float  # weight magnitude that maps to g_max


@dataclass
class PcmPair:
    g_pos: float
    g_neg: float
    nu_pos: float
    nu_neg: float
    t_prog: float
    target_m_pos: int = 0
    target_m_neg: int = 0


def pulse_error(amplitude, cfg: DeviceConfig):
    """Relative programming error std at a pulse amplitude.

    Log-log linear interpolation between the two measured anchors, clamped at
    the endpoints; non-increasing in amplitude.
    """
    amp = np.asarray(amplitude, dtype=np.float64)
    if np.any(amp <= 0):
        raise ValueError("amplitude must be positive")
    if cfg.pulse_err_low == 0.0 and cfg.pulse_err_high == 0.0:
        return np.zeros_like(amp) if amp.ndim else 0.0
    a = np.clip(amp, cfg.pulse_amp_low, cfg.pulse_amp_high)
    frac = (np.log(a) - np.log(cfg.pulse_amp_low)) / (
        np.log(cfg.pulse_amp_high) - np.log(cfg.pulse_amp_low)
    )
    out = np.exp(
        np.log(cfg.pulse_err_low)
        + frac * (np.log(cfg.pulse_err_high) - np.log(cfg.pulse_err_low))
    )
    return out if amp.ndim else float(out)


def pulse_amplitude(target_g, cfg: DeviceConfig):
    """Programming amplitude for a target conductance: the conductance
    fraction maps linearly onto the anchor amplitude span."""
    frac = np.asarray(target_g, dtype=np.float64) / cfg.g_max
    return cfg.pulse_amp_low + frac * (cfg.pulse_amp_high - cfg.pulse_amp_low)


def program(target_g, cfg: DeviceConfig, rng):
    """Program conductance(s): target * (1 + eta), eta ~ N(0, pulse_error),
    clamped into [0, g_max]."""
    tg = np.asarray(target_g, dtype=np.float64)
    if np.any(tg < 0) or np.any(tg > cfg.g_max):
        raise ValueError("target conductance outside [0, g_max]")
    std = pulse_error(pulse_amplitude(tg, cfg), cfg)
    if np.all(np.asarray(std) == 0.0):
        return tg if tg.ndim else float(tg)
    eta = rng.normal(0.0, 1.0, size=tg.shape) * std
    out = np.clip(tg * (1.0 + eta), 0.0, cfg.g_max)
    return out if tg.ndim else float(out)


def drift(g0, t_prog, t_now, nu, t_ref=1.0):
    """Power-law conductance decay: g0 * ((t_now - t_prog + t_ref)/t_ref)^(-nu)."""
    if np.any(np.asarray(t_now) < np.asarray(t_prog)):
        raise ValueError("t_now must be >= t_prog")
    ratio = (np.asarray(t_now, dtype=np.float64) - t_prog + t_ref) / t_ref
    out = np.asarray(g0, dtype=np.float64) * ratio ** (-np.asarray(nu, dtype=np.float64))
    return out if out.ndim else float(out)


def read(pair: PcmPair, t_now, cfg: DeviceConfig, cal: Calibration, rng):
    """Differential readout in weight units, with additive read noise."""
    gp = drift(pair.g_pos, pair.t_prog, t_now, pair.nu_pos, cfg.t_ref)
    gn = drift(pair.g_neg, pair.t_prog, t_now, pair.nu_neg, cfg.t_ref)
    w = (gp - gn) / cal.scale
    if cfg.read_noise_std > 0:
        w += rng.normal(0.0, cfg.read_noise_std * cal.w_range)
    return float(w)


def draw_nu(cfg: DeviceConfig, rng, shape):
    """Per-cell drift exponents, Normal(mean, std) truncated at zero."""
    if cfg.drift_nu_mean == 0.0 and cfg.drift_nu_std == 0.0:
        return np.zeros(shape)
    return np.maximum(rng.normal(cfg.drift_nu_mean, cfg.drift_nu_std, size=shape), 0.0)


def weight_to_conductance(scheme, cfg: DeviceConfig) -> Calibration:
    """Calibrate so the largest representable weight magnitude uses g_max."""
    w_max = float(np.max(np.abs(scheme.sq_values)))
    if w_max <= 0:
        raise ValueError("degenerate scheme: all representable values are zero")
    return Calibration(scale=cfg.g_max / w_max, w_range=w_max)
