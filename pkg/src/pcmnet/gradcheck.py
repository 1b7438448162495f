"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

import numpy as np

from .network import Network, TrainConfig, backward, build_network, constrained_loss


def finite_difference_grads(net: Network, x, y, cfg: TrainConfig, h: float = 1e-5):
    """Central-difference gradient of constrained_loss for every parameter."""
    grads = []
    for lay in net.layers:
        dw = np.zeros_like(lay.w)
        db = np.zeros_like(lay.b)
        for arr, out in ((lay.w, dw), (lay.b, db)):
            flat = arr.ravel()
            oflat = out.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = constrained_loss(net, net.forward(x), y, cfg)
                flat[i] = orig - h
                down = constrained_loss(net, net.forward(x), y, cfg)
                flat[i] = orig
                oflat[i] = (up - down) / (2 * h)
        grads.append((dw, db))
    return grads


def max_relative_gradient_error(rng_seed: int = 0, h: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradients on a small
    random network and batch."""
    rng = np.random.default_rng(rng_seed)
    net = build_network(input_hw=(6, 6), conv_channels=2, hidden=5, num_classes=3,
                        rng_seed=rng_seed)
    x = rng.random((4, 6, 6))
    y = rng.integers(0, 3, size=4)
    cfg = TrainConfig(epsilon_small=0.05, theta_large=0.6, lambda_small=0.7, lambda_large=0.7)
    analytic = backward(net, x, y, cfg)
    numeric = finite_difference_grads(net, x, y, cfg, h=h)
    worst = 0.0
    for (adw, adb), (ndw, ndb) in zip(analytic, numeric):
        for a, n in ((adw, ndw), (adb, ndb)):
            denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
