"""Distributed lp regression for 1 < p < 2.

Pipeline: a shared p-stable sketch maps the lp problem into l_r (r < p),
a distributed Lewis iteration estimates the l_r Lewis weights of the
sketched ``[A b]`` with Gaussian-probed leverage scores, rows are sampled
by those weights, and the coordinator solves the small l_r problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadParam, DimensionMismatch, LeverageTooLarge, SamplerOverflow, SketchFailure
from .lewis import default_lewis_iters, rescaled_sampling
from .linalg import (default_precision, leverage_scores, lp_norm, preconditioner, round_to_grid,
                     solve_lp_irls)
from .netsim import COORDINATOR, ShardSet, Transcript, derive_seed, map_servers
from .protocol_l2 import objective_ratio, osnap_sparsity
from .sketch import SketchSpec, alpha_closed_form, alpha_for, gaussian_matrix, sketch_apply

C_Q = 4.0
PROBES = 10
OVERFLOW_FACTOR = 10.0


@dataclass(frozen=True)
class LpConfig:
    p: float = 1.5
    r: float | None = None
    eps: float = 0.25
    m_t: int | None = None
    m_s: int | None = None
    lewis_iters: int | None = None
    c_q: float = C_Q
    gaussian_cols: int | None = None
    eps_exponent: float = 3.0
    c_t: float = 20.0
    osnap_s: int | None = None
    grid_exponent: float = 3
    seed: int = 0
    presample: float | None = None
    verify_presample: bool = False
    identity_sketch: bool = False
    irls_tol: float | None = None
    alpha: str = "table"
    workers: int = 1

    def __post_init__(self):
        if not 1 < self.p < 2:
            raise BadParam(f"p must lie in (1, 2), got {self.p}")
        if not 0 < self.eps < 1:
            raise BadParam(f"eps must lie in (0, 1), got {self.eps}")
        if self.r is not None and not 1 < self.r < self.p:
            raise BadParam(f"need 1 < r < p, got r={self.r}")
        if self.presample is not None and not 0 < self.presample <= 1:
            raise BadParam("presample gamma must lie in (0, 1]")
        if self.alpha not in ("table", "exact"):
            raise BadParam(f"alpha source must be 'table' or 'exact', got {self.alpha!r}")
        for name in ("m_t", "m_s", "lewis_iters", "gaussian_cols"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise BadParam(f"{name} must be >= 1")

    @property
    def r_eff(self):
        if self.identity_sketch:
            return self.p
        return self.r if self.r is not None else (1 + self.p) / 2

    def sizes(self, n, d):
        """``(m_T, m_S, gaussian_cols, lewis_iters)`` for an n x d instance."""
        if self.identity_sketch:
            m_t = n
        else:
            m_t = self.m_t or math.ceil(self.c_t * d * math.log(d + 2) / self.eps ** self.eps_exponent)
        m_s = self.m_s or math.ceil(20 * (d + 1) * math.log(d + 2))
        k = self.gaussian_cols or math.ceil(8 * math.log(d * max(2.0, 1 / self.eps)))
        t = self.lewis_iters or default_lewis_iters(m_t)
        return m_t, m_s, k, t

    def tolerance(self):
        if self.irls_tol is not None:
            return self.irls_tol
        return 1e-12 if self.identity_sketch else self.eps / 10


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    transcript: Transcript
    ratio_vs_oracle: float
    oracle_objective: float
    sampled_rows: int
    expected_rows: float
    weights: np.ndarray
    embedded_residual: float
    bits_final: int = 0

    def stage_bits(self, stage):
        return self.transcript.stage_bits(stage)

    @property
    def bits_protocol(self):
        return self.transcript.total_bits - self.bits_final


def sampling_probabilities(w, d, eps, c_q=C_Q):
    """``q_i = min(1, c_q * w_i * ln^3((d+2)/eps) / eps)``."""
    return np.minimum(1.0, c_q * np.asarray(w) * math.log((d + 2) / eps) ** 3 / eps)


def presample_threshold(d, p, eps):
    return eps ** 2 / d ** (4.0 / p)


def uniform_presample(shards, p, eps, gamma, seed, verify=False):
    """Keep each row with probability gamma on every shard via a shared seed.

    Retained rows are scaled by ``gamma^(-1/p)``; no messages are exchanged.
    With ``verify`` the aggregate's max leverage score of ``[A b]`` is
    checked against ``eps^2 / d^(4/p)`` (test-mode god view).
    """
    if not 0 < gamma <= 1:
        raise BadParam("gamma must lie in (0, 1]")
    n, d = shards.a_shards[0].shape
    if verify:
        a, b = shards.aggregate()
        top = float(leverage_scores(np.column_stack([a, b])).max())
        bound = presample_threshold(d, p, eps)
        if top > bound:
            raise LeverageTooLarge(f"max leverage {top:.3g} exceeds {bound:.3g}")
    if gamma == 1:
        return shards
    keep = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 13]).random(n) < gamma
    scale = gamma ** (-1.0 / p)
    return ShardSet([a_i[keep] * scale for a_i in shards.a_shards],
                    [b_i[keep] * scale for b_i in shards.b_shards], shards.bound)


def _weight_power(w, r, precision):
    out = np.zeros_like(w)
    pos = w > 0
    out[pos] = w[pos] ** (0.5 - 1.0 / r)
    return np.rint(out * precision) / precision


def distributed_lewis_round(blocks, w, r, s_spec, g, transcript, rnd, workers=1):
    """One Lewis update over server-held blocks ``B^i`` (m x (d+1) each).

    Servers send ``S W~^(1/2-1/r) B^i``; the coordinator QRs the sum and
    broadcasts R~; servers send ``B^i R~ G``; the coordinator sets
    ``w_i = ||(B R~ G)_i||^r`` (the update ``(w^(2/r-1) tau_i)^(r/2)`` with
    ``tau_i = w_i^(1-2/r) ||(B R~ G)_i||^2``), rounds to the grid and
    broadcasts. Returns ``(w, tau, next_round)``.
    """
    precision = transcript.precision
    wp = _weight_power(w, r, precision)
    sk = map_servers(lambda _, blk: sketch_apply(s_spec, blk * wp[:, None]), blocks, workers)
    total = sum(transcript.send(i, COORDINATOR, v, rnd, "lewis_sketch") for i, v in enumerate(sk, 1))
    rnd += 1
    r_tilde = transcript.broadcast(round_to_grid(preconditioner(total), precision), rnd, "lewis_qr")
    rnd += 1
    probes = map_servers(lambda _, blk: blk @ r_tilde @ g, blocks, workers)
    brg = sum(transcript.send(i, COORDINATOR, v, rnd, "lewis_probe") for i, v in enumerate(probes, 1))
    rowsq = np.einsum("ij,ij->i", brg, brg)
    tau = np.zeros_like(rowsq)
    pos = w > 0
    tau[pos] = w[pos] ** (1.0 - 2.0 / r) * rowsq[pos]
    new_w = np.where(pos, rowsq ** (r / 2.0), 0.0)
    new_w = np.rint(new_w * precision) / precision
    new_w[new_w < 1.0 / precision] = 0.0
    rnd += 1
    new_w = transcript.broadcast(new_w, rnd, "lewis_weights")
    return new_w, tau, rnd + 1


def _alpha(cfg, r):
    if cfg.alpha == "exact":
        return alpha_closed_form(cfg.p, r)
    return alpha_for(cfg.p, r).value


def run_lp(shards, cfg):
    """Run the lp protocol; objective and oracle are measured on the full aggregate.

    Transcript stages: ``lewis_sketch`` ``lewis_qr`` ``lewis_probe``
    ``lewis_weights`` for the Lewis rounds, ``sample`` for the sampled rows
    and ``final`` for the answer broadcast.
    """
    a_full, b_full = shards.aggregate()
    if b_full.shape != (a_full.shape[0],):
        raise DimensionMismatch("b shards must be length-n vectors")
    work = shards
    if cfg.presample is not None:
        work = uniform_presample(shards, cfg.p, cfg.eps, cfg.presample,
                                 derive_seed(cfg.seed, 9), verify=cfg.verify_presample)
    s = work.s
    n, d = work.a_shards[0].shape
    if n == 0:
        raise BadParam("no rows left after presampling")
    p, r = cfg.p, cfg.r_eff
    m_t, m_s, k, iters = cfg.sizes(n, d)
    precision = default_precision(n, d, cfg.grid_exponent)
    tr = Transcript(s, precision)
    workers = cfg.workers

    # steps 1-2: shared sketches, local B^i = T [A^i b^i]
    stacked = np.hstack([np.column_stack([a_i, b_i])
                         for a_i, b_i in zip(work.a_shards, work.b_shards)])
    if cfg.identity_sketch:
        sketched = stacked
    else:
        t_spec = SketchSpec("p_stable", m_t, n, derive_seed(cfg.seed, 1), p=p, r=r,
                            alpha=_alpha(cfg, r), precision=precision)
        sketched = sketch_apply(t_spec, stacked)
    blocks = np.split(sketched, s, axis=1)
    g = gaussian_matrix(SketchSpec("gaussian", k, d + 1, derive_seed(cfg.seed, 3),
                                   precision=precision))

    # step 3: distributed Lewis iteration
    w = np.ones(m_t)
    rnd = 0
    for j in range(iters):
        if cfg.identity_sketch and m_s >= m_t:
            s_spec = SketchSpec("identity", m_t, m_t, 0)
        else:
            s_spec = SketchSpec("osnap", m_s, m_t, derive_seed(cfg.seed, 2, j),
                                s_col=min(cfg.osnap_s or osnap_sparsity(d, cfg.eps), m_s))
        w, _, rnd = distributed_lewis_round(blocks, w, r, s_spec, g, tr, rnd, workers)

    # uncharged contraction probe on the embedded problem
    big_b = sum(blocks)
    a_hat, b_hat = big_b[:, :d], big_b[:, d]
    if not cfg.identity_sketch:
        prng = np.random.default_rng(derive_seed(cfg.seed, 4))
        scale = np.linalg.lstsq(a_full, b_full, rcond=None)[0]
        for _ in range(PROBES):
            x = scale + prng.standard_normal(d) * max(np.linalg.norm(scale), 1.0)
            lhs = lp_norm(a_hat @ x - b_hat, r)
            rhs = lp_norm(a_full @ x - b_full, p)
            if lhs < (1 - cfg.eps) * rhs:
                raise SketchFailure(f"embedding contracted a probe: {lhs:.4g} < (1-eps)*{rhs:.4g}")

    # step 4: shared-seed sampling; servers send only the sampled rows
    q = np.ones(m_t) if cfg.identity_sketch else sampling_probabilities(w, d, cfg.eps, cfg.c_q)
    q[w <= 0] = 0.0
    smap = rescaled_sampling(q, r, derive_seed(cfg.seed, 5))
    expected = float(q.sum())
    if len(smap) > OVERFLOW_FACTOR * max(expected, 1.0):
        raise SamplerOverflow(f"sampled {len(smap)} rows, expected {expected:.1f}")
    rnd += 1
    rows = map_servers(lambda _, blk: blk[smap.indices], blocks, workers)
    sampled = sum(tr.send(i, COORDINATOR, v, rnd, "sample") for i, v in enumerate(rows, 1))
    sampled = sampled * smap.scales[:, None]

    # step 5: coordinator-side l_r solve
    x = solve_lp_irls(sampled[:, :d], sampled[:, d], r, tol=cfg.tolerance())
    rnd += 1
    before = tr.total_bits
    x = tr.broadcast(x, rnd, "final")
    bits_final = tr.total_bits - before

    objective = lp_norm(a_full @ x - b_full, p)
    oracle = lp_norm(a_full @ solve_lp_irls(a_full, b_full, p) - b_full, p)
    ratio = objective_ratio(objective, oracle, lp_norm(b_full, p))
    return LpResult(x, objective, tr, ratio, oracle, len(smap), expected, w,
                    lp_norm(a_hat @ x - b_hat, r), bits_final)
