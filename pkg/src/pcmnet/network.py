"""Small conv + dense feedforward network with manual backprop.

The training loss is cross-entropy plus a two-sided band penalty that pushes
weight magnitudes into [epsilon_small, theta_large]: small weights are costly
to place on analog hardware (noise dominates), and very large weights drift
the most.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .datasets import Dataset


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epsilon_small: float = 0.05
    theta_large: float = 1.0
    lambda_small: float = 0.5
    lambda_large: float = 0.5
    lr: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    noise_aware: bool = False
    nw_std_rel: float = 0.1
    pdrop: float = 0.03

    def validate(self):
        if not (0.0 < self.epsilon_small < self.theta_large):
            raise ValueError("need 0 < epsilon_small < theta_large")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.pdrop < 1.0):
            raise ValueError("pdrop must be in [0, 1)")


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Extract valid-convolution patches: (n, h, w) -> (n, oh*ow, kh*kw)."""
    n, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    s0, s1, s2 = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x, shape=(n, oh, ow, kh, kw), strides=(s0, s1, s2, s1, s2)
    )
    return patches.reshape(n, oh * ow, kh * kw).copy()


@dataclass
class ConvLayer:
    """3x3 valid convolution on a single-channel image, lowered to a matmul.

    w has shape (out_channels, kh*kw) so the whole layer is one weight matrix,
    which is also how it gets mapped onto a crossbar tile.
    """

    w: np.ndarray
    b: np.ndarray
    kh: int = 3
    kw: int = 3
    activation: str = "relu"
    kind: str = field(default="conv", init=False)


@dataclass
class DenseLayer:
    w: np.ndarray  # (out, in)
    b: np.ndarray
    activation: str = "none"
    kind: str = field(default="dense", init=False)


def _activate(z, tag):
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "none":
        return z
    raise ValueError(f"unknown activation {tag!r}")


class Network:
    """Ordered layer stack with forward, penalty loss and manual backprop."""

    def __init__(self, layers, rng_seed: int = 0):
        self.layers = list(layers)
        self.rng_seed = int(rng_seed)
        for lay in self.layers:
            if not np.all(np.isfinite(lay.w)) or not np.all(np.isfinite(lay.b)):
                raise ValueError("layer parameters must be finite")

    def weight_matrices(self):
        return [lay.w for lay in self.layers]

    def all_weights(self) -> np.ndarray:
        """All weight-matrix entries (biases excluded) as one flat vector."""
        return np.concatenate([lay.w.ravel() for lay in self.layers])

    def copy(self) -> "Network":
        return Network(
            [replace(lay, w=lay.w.copy(), b=lay.b.copy()) for lay in self.layers],
            self.rng_seed,
        )

    def _run(self, x, weights, out_scales, cache):
        if weights is None:
            weights = [lay.w for lay in self.layers]
        if out_scales is None:
            out_scales = [1.0] * len(self.layers)
        h = np.asarray(x, dtype=np.float64)
        for k, (lay, w, s) in enumerate(zip(self.layers, weights, out_scales)):
            if lay.kind == "conv":
                if h.ndim != 3:
                    raise ShapeError(f"conv layer {k} expects (n, h, w) input, got {h.shape}")
                cols = _im2col(h, lay.kh, lay.kw)  # (n, L, kk)
                z = s * (cols @ w.T) + lay.b  # (n, L, out_ch)
                a = _activate(z, lay.activation)
                if cache is not None:
                    cache.append({"cols": cols, "z": z})
                h = a.transpose(0, 2, 1).reshape(len(a), -1)  # (n, out_ch*L)
            else:
                if h.ndim != 2:
                    h = h.reshape(len(h), -1)
                if h.shape[1] != w.shape[1]:
                    raise ShapeError(
                        f"dense layer {k} expects {w.shape[1]} features, got {h.shape[1]}"
                    )
                z = s * (h @ w.T) + lay.b
                a = _activate(z, lay.activation)
                if cache is not None:
                    cache.append({"h_in": h, "z": z})
                h = a
        return h

    def forward(self, x, weights=None, out_scales=None) -> np.ndarray:
        """Logits for a batch. Optional per-layer weight overrides and output
        scale factors (used by the analog simulation)."""
        return self._run(x, weights, out_scales, cache=None)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels) -> float:
    if len(logits) != len(labels):
        raise ShapeError("logits/labels length mismatch")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def band_penalty(w: np.ndarray, cfg: TrainConfig) -> float:
    """Squared hinge pushing |w| into [epsilon_small, theta_large]."""
    a = np.abs(w)
    small = np.maximum(0.0, cfg.epsilon_small - a)
    large = np.maximum(0.0, a - cfg.theta_large)
    return float(cfg.lambda_small * np.sum(small**2) + cfg.lambda_large * np.sum(large**2))


def band_penalty_grad(w: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    a = np.abs(w)
    s = np.sign(w)
    g_small = -2.0 * cfg.lambda_small * np.maximum(0.0, cfg.epsilon_small - a) * s
    g_large = 2.0 * cfg.lambda_large * np.maximum(0.0, a - cfg.theta_large) * s
    return g_small + g_large


def constrained_loss(net: Network, logits, labels, cfg: TrainConfig) -> float:
    """Mean cross-entropy plus the band penalty summed over all weights."""
    loss = cross_entropy(logits, labels)
    for lay in net.layers:
        loss += band_penalty(lay.w, cfg)
    return loss


def backward(net: Network, x, labels, cfg: TrainConfig, weights=None):
    """Gradients of constrained_loss w.r.t. every (w, b), one pair per layer.

    When `weights` overrides are given (noise-aware training), data gradients
    are taken at the noisy weights while penalty gradients stay on the layer's
    own (clean) parameters, matching how the update is applied.
    """
    cache = []
    logits = net._run(x, weights, None, cache)
    n = len(logits)
    p = softmax(logits)
    delta = p.copy()
    delta[np.arange(n), np.asarray(labels)] -= 1.0
    delta /= n  # (n, classes)

    used = weights if weights is not None else [lay.w for lay in net.layers]
    grads = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        lay, w, c = net.layers[k], used[k], cache[k]
        if lay.kind == "dense":
            if lay.activation == "relu":
                delta = delta * (c["z"] > 0)
            dw = delta.T @ c["h_in"]
            db = delta.sum(axis=0)
            delta = delta @ w
            if k > 0 and net.layers[k - 1].kind == "conv":
                prev = net.layers[k - 1]
                out_ch = prev.w.shape[0]
                delta = delta.reshape(len(delta), out_ch, -1).transpose(0, 2, 1)
        else:  # conv; delta is (n, L, out_ch)
            if lay.activation == "relu":
                delta = delta * (c["z"] > 0)
            dw = np.einsum("nlc,nlk->ck", delta, c["cols"])
            db = delta.sum(axis=(0, 1))
            # input gradient unused: conv is always the first layer here
        grads[k] = (dw + band_penalty_grad(lay.w, cfg), db)
    return grads


def _noisy_weights(net: Network, cfg: TrainConfig, rng):
    noisy = []
    for lay in net.layers:
        w = lay.w
        wmax = np.max(np.abs(w)) if w.size else 0.0
        w = w + rng.normal(0.0, cfg.nw_std_rel * wmax, size=w.shape)
        if cfg.pdrop > 0.0:
            w = w * (rng.random(w.shape) >= cfg.pdrop)
        noisy.append(w)
    return noisy


def train(net: Network, dataset: Dataset, cfg: TrainConfig, progress=None) -> Network:
    """SGD-train a copy of `net`; the input network is left untouched.

    In noise-aware mode each minibatch sees weights perturbed by additive
    Gaussian noise (std nw_std_rel * per-layer max|w|) plus drop-connect, and
    the resulting gradients update the clean weights.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    net = net.copy()
    rng = np.random.default_rng(net.rng_seed)
    n = len(dataset)
    x_all = dataset.images
    y_all = dataset.labels
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            w_used = _noisy_weights(net, cfg, rng) if cfg.noise_aware else None
            grads = backward(net, xb, yb, cfg, weights=w_used)
            for lay, (dw, db) in zip(net.layers, grads):
                lay.w -= cfg.lr * dw
                lay.b -= cfg.lr * db
        logits = net.forward(x_all)
        loss = constrained_loss(net, logits, y_all, cfg)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}")
        if progress is not None:
            acc = float((logits.argmax(axis=1) == y_all).mean())
            progress(epoch, loss, acc)
    return net


def macro_f1(labels, preds, num_classes: int) -> float:
    """Macro-averaged F1 from the confusion matrix; empty classes score 0."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    f1s = []
    for c in range(num_classes):
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def evaluate(net: Network, dataset: Dataset, weights=None, out_scales=None):
    """(accuracy, macro F1) of argmax predictions on a labeled dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = net.forward(dataset.images, weights=weights, out_scales=out_scales)
    preds = logits.argmax(axis=1)
    acc = float((preds == dataset.labels).mean())
    return acc, macro_f1(dataset.labels, preds, dataset.num_classes)


def build_network(
    input_hw=(8, 8),
    conv_channels: int = 8,
    hidden: int = 64,
    num_classes: int = 10,
    rng_seed: int = 0,
) -> Network:
    """He-initialized conv(3x3) + relu + dense(hidden) + relu + dense(classes)."""
    rng = np.random.default_rng(rng_seed)
    h, w = input_hw
    oh, ow = h - 2, w - 2
    feat = conv_channels * oh * ow
    conv = ConvLayer(
        w=rng.normal(0.0, np.sqrt(2.0 / 9.0), size=(conv_channels, 9)),
        b=np.zeros(conv_channels),
    )
    d1 = DenseLayer(
        w=rng.normal(0.0, np.sqrt(2.0 / feat), size=(hidden, feat)),
        b=np.zeros(hidden),
        activation="relu",
    )
    d2 = DenseLayer(
        w=rng.normal(0.0, np.sqrt(2.0 / hidden), size=(num_classes, hidden)),
        b=np.zeros(num_classes),
    )
    return Network([conv, d1, d2], rng_seed=rng_seed)


class ConstrainedNetClassifier(BaseEstimator, ClassifierMixin):
    """sklearn-style front end for the constrained-loss network.

    X may be (n, 8, 8) images or flat (n, 64) rows; y are integer labels.
    """

    def __init__(
        self,
        conv_channels=8,
        hidden=64,
        epsilon_small=0.05,
        theta_large=1.0,
        lambda_small=0.5,
        lambda_large=0.5,
        lr=0.1,
        epochs=20,
        batch_size=32,
        noise_aware=False,
        nw_std_rel=0.1,
        pdrop=0.03,
        random_state=0,
    ):
        self.conv_channels = conv_channels
        self.hidden = hidden
        self.epsilon_small = epsilon_small
        self.theta_large = theta_large
        self.lambda_small = lambda_small
        self.lambda_large = lambda_large
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.noise_aware = noise_aware
        self.nw_std_rel = nw_std_rel
        self.pdrop = pdrop
        self.random_state = random_state

    def _as_images(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            side = int(round(np.sqrt(X.shape[1])))
            if side * side != X.shape[1]:
                raise ShapeError(f"cannot reshape {X.shape[1]} features to a square image")
            X = X.reshape(len(X), side, side)
        if X.ndim != 3:
            raise ShapeError(f"X must be (n, h, w) or (n, h*w), got {X.shape}")
        return X

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epsilon_small=self.epsilon_small,
            theta_large=self.theta_large,
            lambda_small=self.lambda_small,
            lambda_large=self.lambda_large,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            noise_aware=self.noise_aware,
            nw_std_rel=self.nw_std_rel,
            pdrop=self.pdrop,
        )

    def fit(self, X, y):
        X = self._as_images(X)
        y = np.asarray(y, dtype=np.int64)
        self.classes_ = np.unique(y)
        net = build_network(
            input_hw=X.shape[1:],
            conv_channels=self.conv_channels,
            hidden=self.hidden,
            num_classes=int(y.max()) + 1,
            rng_seed=self.random_state,
        )
        self.network_ = train(net, Dataset(X, y), self.train_config())
        return self

    def decision_function(self, X):
        return self.network_.forward(self._as_images(X))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)
