"""Lewis weights: fixed-point iteration, certification and rescaled sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadParam
from .linalg import leverage_scores, lp_norm_pow, qr_decompose


@dataclass
class LewisState:
    weights: np.ndarray
    p: float
    iterations_run: int
    certificate: float
    history: list = field(default_factory=list)


@dataclass
class SamplingMap:
    """Retained row indices (ascending) with their ``q_i^(-1/p)`` scales."""

    indices: np.ndarray
    scales: np.ndarray
    probabilities: np.ndarray

    def __len__(self):
        return len(self.indices)

    def apply(self, m):
        m = np.asarray(m, dtype=float)
        if m.ndim == 1:
            return m[self.indices] * self.scales
        return m[self.indices] * self.scales[:, None]


def default_lewis_iters(n):
    return math.ceil(math.log2(math.log2(max(n, 4)))) + 2


def reweight(a, w, p):
    """Rows of ``a`` scaled by ``w_i^(1/2 - 1/p)``; zero weights give zero rows."""
    w = np.asarray(w, dtype=float)
    scale = np.zeros_like(w)
    pos = w > 0
    scale[pos] = w[pos] ** (0.5 - 1.0 / p)
    return np.asarray(a, dtype=float) * scale[:, None]


def exact_leverage_oracle(m):
    return leverage_scores(m)


def sketched_leverage_oracle(sketch_rows, probe_cols, seed):
    """Leverage estimates from ``||(m R) G||^2`` rows, R from a Gaussian sketch of m.

    Centralized counterpart of the distributed estimator in the lp protocol.
    """
    rng = np.random.default_rng(seed)

    def oracle(m):
        m = np.asarray(m, dtype=float)
        s = rng.standard_normal((sketch_rows, m.shape[0])) / math.sqrt(sketch_rows)
        r = qr_decompose(s @ m).r
        g = rng.standard_normal((m.shape[1], probe_cols)) / math.sqrt(probe_cols)
        return np.sum((m @ r @ g) ** 2, axis=1)

    return oracle


def lewis_update(w, tau, p):
    """``w_i <- (w_i^(2/p - 1) tau_i)^(p/2)``."""
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    pos = w > 0
    out[pos] = (w[pos] ** (2.0 / p - 1.0) * np.maximum(tau[pos], 0.0)) ** (p / 2.0)
    return out


def lewis_certificate(a, w, p):
    """``max_i max(w_i/tau_i, tau_i/w_i)`` with ``tau = lev(W^(1/2-1/p) a)``.

    Equals 1 exactly at the Lewis weights. Rows that are zero in ``a`` are
    skipped (their weight is 0 by convention).
    """
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    live = np.any(a != 0, axis=1)
    if np.any(w[live] <= 0):
        return math.inf
    tau = leverage_scores(reweight(a, w, p))
    ratio = w[live] / tau[live]
    return float(max(ratio.max(), (1.0 / ratio).max()))


def lewis_iterate(a, p, iters=None, leverage_oracle=None, floor=0.0):
    """Iterate the Lewis update from the all-ones vector.

    ``leverage_oracle(m)`` returns (approximate) leverage scores of m; the
    exact oracle is used when omitted. Weights below ``floor`` are clamped to
    ``floor`` for nonzero rows and to 0 for zero rows. The certificate is
    always computed with exact leverage scores.
    """
    if not 0 < p < 4:
        raise BadParam(f"Lewis iteration needs 0 < p < 4, got {p}")
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if iters is None:
        iters = default_lewis_iters(n)
    oracle = leverage_oracle or exact_leverage_oracle
    live = np.any(a != 0, axis=1)
    w = np.where(live, 1.0, 0.0)
    history = []
    for _ in range(iters):
        tau = oracle(reweight(a, w, p))
        w = lewis_update(w, tau, p)
        if floor > 0:
            w = np.where(live, np.maximum(w, floor), 0.0)
        history.append(lewis_certificate(a, w, p))
    cert = history[-1] if history else lewis_certificate(a, w, p)
    return LewisState(w, p, iters, cert, history)


def rescaled_sampling(probabilities, p, seed):
    """Keep row i independently with probability q_i, scaled by ``q_i^(-1/p)``."""
    q = np.asarray(probabilities, dtype=float)
    if np.any(q < 0) or np.any(q > 1):
        raise BadParam("sampling probabilities must lie in [0, 1]")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 7])
    keep = rng.random(q.shape[0]) < q
    idx = np.flatnonzero(keep)
    return SamplingMap(idx, q[idx] ** (-1.0 / p), q)


def regression_beta(n, d, eps, delta, c_beta=4.0):
    """Oversampling ``c * ln^2(d+2) * ln(n) * ln(1/delta) / eps``."""
    return c_beta * math.log(d + 2) ** 2 * math.log(max(n, 2)) * math.log(1.0 / delta) / eps


def lewis_sample_for_regression(a, b, p, eps, delta=0.1, seed=0, c_beta=4.0,
                                leverage_oracle=None, iters=None):
    """Sample rows by the Lewis weights of ``[a b]``; returns ``(a', b', map)``."""
    if not 0 < eps < 1:
        raise BadParam("eps must lie in (0, 1)")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    stacked = np.column_stack([a, b])
    state = lewis_iterate(stacked, p, iters=iters, leverage_oracle=leverage_oracle)
    beta = regression_beta(a.shape[0], a.shape[1], eps, delta, c_beta)
    q = np.minimum(beta * state.weights, 1.0)
    smap = rescaled_sampling(q, p, seed)
    return smap.apply(a), smap.apply(b), smap


def empirical_sensitivities(a, p, probes=500, seed=0):
    """Max over random directions of ``|<a_i, x>|^p / ||Ax||_p^p``.

    A lower estimate of the true sensitivities (a supremum over all x).
    """
    a = np.asarray(a, dtype=float)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((a.shape[1], probes))
    y = np.abs(a @ x) ** p
    return np.max(y / y.sum(axis=0, keepdims=True), axis=1)


def subspace_distortion(a, sampled, p, xs):
    """``||S a x||_p / ||a x||_p`` for each column x of ``xs``."""
    num = np.array([lp_norm_pow(sampled @ x, p) for x in xs.T]) ** (1 / p)
    den = np.array([lp_norm_pow(a @ x, p) for x in xs.T]) ** (1 / p)
    return num / den
