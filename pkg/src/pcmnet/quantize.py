"""Dual-set weight quantization: bin construction, simulated annealing over
the two base steps, and decomposition of float weights into integer multiples.

A signed weight is realized as m_pos * pos.base - m_neg * neg.base, so the
representable values are the positive levels, the negated negative levels,
and all pairwise differences between them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin


class SchemeInfeasible(RuntimeError):
    """The write-noise floor cannot be satisfied for the given weights."""


@dataclass(frozen=True)
class BinSet:
    """One polarity line's quantization levels: base * multiple for each
    of N strictly increasing positive integer multiples."""

    base: float
    multiples: tuple

    def __post_init__(self):
        if self.base <= 0:
            raise ValueError("base must be positive")
        m = tuple(int(v) for v in self.multiples)
        if len(m) == 0 or any(v <= 0 for v in m):
            raise ValueError("multiples must be positive integers")
        if any(b <= a for a, b in zip(m, m[1:])):
            raise ValueError("multiples must be strictly increasing")
        object.__setattr__(self, "multiples", m)

    @property
    def levels(self) -> np.ndarray:
        return self.base * np.array(self.multiples, dtype=np.float64)


@dataclass
class QuantizationScheme:
    pos: BinSet
    neg: BinSet
    sq_values: np.ndarray  # sorted representable weights
    sq_m_pos: np.ndarray  # matching positive multiples
    sq_m_neg: np.ndarray
    delta_write: float
    epsilon_read: float
    achieved_error: float = float("nan")

    def digest(self) -> str:
        """Stable hex digest of the scheme's defining fields."""
        payload = json.dumps(
            {
                "pos": [self.pos.base.hex(), list(self.pos.multiples)],
                "neg": [self.neg.base.hex(), list(self.neg.multiples)],
                "delta_write": float(self.delta_write).hex(),
                "epsilon_read": float(self.epsilon_read).hex(),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class AnnealConfig:
    iterations: int = 2500
    t0: float = 1e-3
    cooling: float = 0.997
    perturb_scale: float = 0.35
    linear_mode: bool = False
    rng_seed: int = 0
    n_levels: int = 8
    max_multiple: int = 0  # 0 -> 4 * n_levels
    multiple_move_prob: float = 0.3

    def validate(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not (0.0 < self.cooling < 1.0):
            raise ValueError("cooling must be in (0, 1)")
        if self.n_levels <= 0:
            raise ValueError("n_levels must be positive")

    @property
    def effective_max_multiple(self) -> int:
        return self.max_multiple if self.max_multiple > 0 else 4 * self.n_levels


@dataclass
class DecomposedLayer:
    """Integer multiple matrices replacing one float weight matrix."""

    m_pos: np.ndarray
    m_neg: np.ndarray
    achieved_error: float = float("nan")

    def __post_init__(self):
        self.m_pos = np.asarray(self.m_pos, dtype=np.int64)
        self.m_neg = np.asarray(self.m_neg, dtype=np.int64)
        if self.m_pos.shape != self.m_neg.shape:
            raise ValueError("m_pos/m_neg shape mismatch")
        if (self.m_pos < 0).any() or (self.m_neg < 0).any():
            raise ValueError("multiples must be non-negative")


def build_sq(pos: BinSet, neg: BinSet, delta_write=0.0, epsilon_read=0.0) -> QuantizationScheme:
    """Enumerate every representable weight of a (pos, neg) set pair.

    Exact duplicates keep the representation with the smallest m_pos + m_neg.
    """
    entries = []
    for mp, lv in zip(pos.multiples, pos.levels):
        entries.append((float(lv), mp, 0))
    for mn, lv in zip(neg.multiples, neg.levels):
        entries.append((float(-lv), 0, mn))
    for mp, lp in zip(pos.multiples, pos.levels):
        for mn, ln in zip(neg.multiples, neg.levels):
            entries.append((float(lp - ln), mp, mn))
    best = {}
    for v, mp, mn in entries:
        cur = best.get(v)
        if cur is None or mp + mn < cur[0] + cur[1]:
            best[v] = (mp, mn)
    values = np.array(sorted(best), dtype=np.float64)
    m_pos = np.array([best[v][0] for v in values], dtype=np.int64)
    m_neg = np.array([best[v][1] for v in values], dtype=np.int64)
    return QuantizationScheme(pos, neg, values, m_pos, m_neg, delta_write, epsilon_read)


def nearest_sq_indices(weights: np.ndarray, sq_values: np.ndarray) -> np.ndarray:
    """Index of the nearest representable value for each weight.

    Tie rule: when two values are equidistant the smaller value wins.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    k = np.searchsorted(sq_values, w)
    k = np.clip(k, 1, len(sq_values) - 1)
    left = sq_values[k - 1]
    right = sq_values[k]
    take_left = (w - left) <= (right - w)
    idx = np.where(take_left, k - 1, k)
    idx[w <= sq_values[0]] = 0
    idx[w >= sq_values[-1]] = len(sq_values) - 1
    return idx


def quantization_error(weights, sq_values) -> float:
    """Mean squared distance from each weight to its nearest representable value."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("weights must be nonempty")
    sq_values = np.asarray(sq_values, dtype=np.float64)
    if sq_values.size == 0:
        raise ValueError("sq is empty")
    nearest = sq_values[nearest_sq_indices(w, sq_values)]
    return float(np.mean((w - nearest) ** 2))


def validate_constraints(scheme: QuantizationScheme, delta_write=None, epsilon_read=None):
    """Check the five scheme constraints; returns a list of violation strings."""
    delta = scheme.delta_write if delta_write is None else delta_write
    eps = scheme.epsilon_read if epsilon_read is None else epsilon_read
    out = []
    for name, bs in (("pos", scheme.pos), ("neg", scheme.neg)):
        if len(set(bs.multiples)) != len(bs.multiples):
            out.append(f"levels: {name} set has duplicate multiples")
        lv = bs.levels
        mult = lv / bs.base
        if not np.allclose(mult, np.round(mult)):
            out.append(f"divisibility: {name} levels not integer multiples of the base")
    n = len(scheme.pos.multiples)
    if len(scheme.neg.multiples) != n:
        out.append("levels: positive and negative sets differ in level count")
    expected = build_sq(scheme.pos, scheme.neg, delta, eps)
    if len(expected.sq_values) != len(scheme.sq_values) or not np.array_equal(
        expected.sq_values, scheme.sq_values
    ):
        out.append("sq: combined set does not enumerate all levels and differences")
    else:
        recon = scheme.pos.base * scheme.sq_m_pos - scheme.neg.base * scheme.sq_m_neg
        if not np.allclose(recon, scheme.sq_values, rtol=0, atol=1e-12):
            out.append("sq: entries do not reconstruct from their multiples")
    if scheme.pos.base <= delta:
        out.append(f"snr: pos base {scheme.pos.base:.6g} not above write noise {delta:.6g}")
    if scheme.neg.base <= delta:
        out.append(f"snr: neg base {scheme.neg.base:.6g} not above write noise {delta:.6g}")
    if abs(scheme.pos.base - scheme.neg.base) <= eps:
        out.append(
            f"bin-difference: |{scheme.pos.base:.6g} - {scheme.neg.base:.6g}| "
            f"not above read threshold {eps:.6g}"
        )
    return out


def _project_bases(pb, nb, delta, eps):
    """Repair a proposal so both bases clear delta and differ by more than eps."""
    pb = max(abs(pb), delta * (1.0 + 1e-9))
    nb = max(abs(nb), delta * (1.0 + 1e-9))
    if abs(pb - nb) <= eps:
        shift = eps * (1.0 + 1e-6)
        if nb - shift > delta:
            nb = pb - shift if pb - shift > delta else pb + shift
        else:
            nb = pb + shift
    return pb, nb


def _perturb_multiples(multiples, max_mult, rng):
    m = list(multiples)
    k = int(rng.integers(0, len(m)))
    pool = [v for v in range(1, max_mult + 1) if v not in m]
    if not pool:
        return tuple(m)
    m[k] = pool[int(rng.integers(0, len(pool)))]
    return tuple(sorted(m))


def initial_scheme(weights, cfg: AnnealConfig, delta_write, epsilon_read) -> QuantizationScheme:
    w = np.abs(np.asarray(weights, dtype=np.float64).ravel())
    w = w[w > 0]
    if w.size == 0 or w.max() <= delta_write:
        raise SchemeInfeasible(
            f"write noise floor {delta_write:.6g} exceeds the weight range "
            f"({w.max() if w.size else 0.0:.6g})"
        )
    base = max(delta_write * 1.5, float(np.percentile(w, 1)))
    mult = tuple(range(1, cfg.n_levels + 1))
    pb, nb = _project_bases(base, base * 1.05, delta_write, epsilon_read)
    return build_sq(BinSet(pb, mult), BinSet(nb, mult), delta_write, epsilon_read)


def anneal(weights, cfg: AnnealConfig, delta_write: float, epsilon_read: float,
           init: QuantizationScheme | None = None) -> QuantizationScheme:
    """Simulated annealing over (pos base, neg base) and, unless linear_mode,
    the integer multiples of each set.

    Proposals that violate the noise constraints are projected back into the
    feasible region instead of rejected. Acceptance follows the usual
    Metropolis rule with geometric cooling; the best feasible scheme seen is
    returned. An explicit feasible `init` scheme replaces the default start.
    """
    cfg.validate()
    w = np.asarray(weights, dtype=np.float64).ravel()
    rng = np.random.default_rng(cfg.rng_seed)
    if init is None:
        init = initial_scheme(w, cfg, delta_write, epsilon_read)
    cur = (init.pos.base, init.neg.base, init.pos.multiples, init.neg.multiples)
    cur_err = quantization_error(w, init.sq_values)
    best, best_err = cur, cur_err
    max_mult = cfg.effective_max_multiple
    for i in range(cfg.iterations):
        temp = cfg.t0 * cfg.cooling**i
        rel = cfg.perturb_scale * temp / cfg.t0
        pb = cur[0] * (1.0 + rng.normal(0.0, rel))
        nb = cur[1] * (1.0 + rng.normal(0.0, rel))
        pm, nm = cur[2], cur[3]
        if not cfg.linear_mode and rng.random() < cfg.multiple_move_prob:
            if rng.random() < 0.5:
                pm = _perturb_multiples(pm, max_mult, rng)
            else:
                nm = _perturb_multiples(nm, max_mult, rng)
        pb, nb = _project_bases(pb, nb, delta_write, epsilon_read)
        prop = build_sq(BinSet(pb, pm), BinSet(nb, nm), delta_write, epsilon_read)
        err = quantization_error(w, prop.sq_values)
        accept = err < cur_err
        if not accept and temp > 0:
            accept = rng.random() < math.exp(-(err - cur_err) / temp)
        if accept:
            cur, cur_err = (pb, nb, pm, nm), err
            if err < best_err:
                best, best_err = cur, err
    scheme = build_sq(
        BinSet(best[0], best[2]), BinSet(best[1], best[3]), delta_write, epsilon_read
    )
    scheme.achieved_error = best_err
    violations = validate_constraints(scheme)
    if violations:
        raise SchemeInfeasible("; ".join(violations))
    return scheme


def uniform_grid_scheme(weights, n_levels, delta_write, epsilon_read) -> QuantizationScheme:
    """Linearly spaced baseline with the same level count and noise floor,
    used as the reference the annealer must beat."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    wpos = w[w > 0]
    wneg = -w[w < 0]
    pmax = wpos.max() if wpos.size else w.std() or 1.0
    nmax = wneg.max() if wneg.size else pmax
    pb = max(delta_write * 1.5, pmax / n_levels)
    nb = max(delta_write * 1.5, nmax / n_levels)
    pb, nb = _project_bases(pb, nb, delta_write, epsilon_read)
    mult = tuple(range(1, n_levels + 1))
    return build_sq(BinSet(pb, mult), BinSet(nb, mult), delta_write, epsilon_read)


def decompose(weight_matrix, scheme: QuantizationScheme) -> DecomposedLayer:
    """Map each weight to its nearest representable value's integer multiples."""
    w = np.asarray(weight_matrix, dtype=np.float64)
    idx = nearest_sq_indices(w, scheme.sq_values).reshape(w.shape)
    err = float(np.mean((w - scheme.sq_values[idx]) ** 2)) if w.size else 0.0
    return DecomposedLayer(scheme.sq_m_pos[idx], scheme.sq_m_neg[idx], err)


def reconstruct(dec: DecomposedLayer, scheme: QuantizationScheme) -> np.ndarray:
    """w = pos.base * m_pos - neg.base * m_neg, elementwise."""
    pos_ok = np.isin(dec.m_pos, (0,) + scheme.pos.multiples)
    neg_ok = np.isin(dec.m_neg, (0,) + scheme.neg.multiples)
    if not pos_ok.all() or not neg_ok.all():
        raise ValueError("multiples outside the scheme's level sets")
    return scheme.pos.base * dec.m_pos - scheme.neg.base * dec.m_neg


class DualBinQuantizer(BaseEstimator, TransformerMixin):
    """sklearn-style wrapper: fit() anneals a scheme on a weight pool,
    transform() snaps weight matrices onto the fitted bins."""

    def __init__(
        self,
        n_levels=8,
        iterations=2500,
        t0=1e-3,
        cooling=0.997,
        perturb_scale=0.35,
        linear_mode=False,
        delta_write=0.01,
        epsilon_read=0.002,
        random_state=0,
    ):
        self.n_levels = n_levels
        self.iterations = iterations
        self.t0 = t0
        self.cooling = cooling
        self.perturb_scale = perturb_scale
        self.linear_mode = linear_mode
        self.delta_write = delta_write
        self.epsilon_read = epsilon_read
        self.random_state = random_state

    def anneal_config(self) -> AnnealConfig:
        return AnnealConfig(
            iterations=self.iterations,
            t0=self.t0,
            cooling=self.cooling,
            perturb_scale=self.perturb_scale,
            linear_mode=self.linear_mode,
            rng_seed=self.random_state,
            n_levels=self.n_levels,
        )

    def fit(self, X, y=None):
        if isinstance(X, (list, tuple)):
            w = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in X])
        else:
            w = np.asarray(X, dtype=np.float64).ravel()
        self.scheme_ = anneal(w, self.anneal_config(), self.delta_write, self.epsilon_read)
        return self

    def transform(self, X):
        if isinstance(X, (list, tuple)):
            return [reconstruct(decompose(m, self.scheme_), self.scheme_) for m in X]
        return reconstruct(decompose(X, self.scheme_), self.scheme_)
