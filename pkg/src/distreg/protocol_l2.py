"""Distributed l2 regression: sketch, precondition, then distributed gradient descent."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadParam, DimensionMismatch, SketchFailure
from .linalg import default_precision, qr_decompose, round_to_grid, solve_l2_exact
from .netsim import COORDINATOR, Transcript, derive_seed, map_servers
from .sketch import SketchSpec, sketch_apply



@dataclass(frozen=True)
class L2Config:
    eps: float = 0.1
    m1: int | None = None
    m2: int | None = None
    m3: int | None = None
    gd_iters: int | None = None
    grid_exponent: float = 3
    seed: int = 0
    osnap_s: int | None = None
    kappa_max: float = 10.0
    identity_sketches: bool = False
    workers: int = 1
    instrument: bool = False

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise BadParam(f"eps must lie in (0, 1), got {self.eps}")
        if self.gd_iters is not None and self.gd_iters < 1:
            raise BadParam("gd_iters must be >= 1")
        for name in ("m1", "m2", "m3"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise BadParam(f"{name} must be >= 1")

    def sizes(self, d):
        m1 = self.m1 or math.ceil(4 * d * d / self.eps)
        m2 = self.m2 or math.ceil(20 * d * math.log(d + 2) / self.eps)
        m3 = self.m3 or math.ceil(20 * d * math.log(d + 2))
        return m1, m2, m3

    def column_sparsity(self, d):
        """OSNAP nonzeros per column, default ``ceil(2 ln(d+2) / eps)``."""
        return self.osnap_s or osnap_sparsity(d, self.eps)

    def iterations(self):
        return self.gd_iters or math.ceil(4 * math.log(1 / self.eps))


def osnap_sparsity(d, eps):
    return math.ceil(2 * math.log(d + 2) / eps)


@dataclass
class L2Result:
    x: np.ndarray
    objective: float
    transcript: Transcript
    ratio_vs_oracle: float
    oracle_objective: float
    kappa: float
    curve: list = field(default_factory=list)
    bits_final: int = 0

    def stage_bits(self, stage):
        return self.transcript.stage_bits(stage)

    @property
    def bits_protocol(self):
        return self.transcript.total_bits - self.bits_final


def objective_ratio(objective, oracle, b_norm):
    """``objective / oracle``, or ``1 + objective/||b||`` for zero-residual instances."""
    scale = max(b_norm, 1.0)
    if oracle <= 1e-12 * scale:
        return 1.0 + objective / scale
    return objective / oracle


def condition_estimate(m, iters=20, seed=0):
    """kappa(m) from power iterations on ``m^T m`` and its inverse."""
    gram = m.T @ m
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(gram.shape[0])
    u = v.copy()
    top = low = 0.0
    for _ in range(iters):
        v = gram @ v
        top = np.linalg.norm(v)
        v /= top
        u = np.linalg.solve(gram, u)
        low = np.linalg.norm(u)
        u /= low
    return math.sqrt(top * low)


def _sketch_specs(cfg, n, d):
    m1, m2, m3 = cfg.sizes(d)
    if cfg.identity_sketches:
        return (SketchSpec("identity", n, n, 0), SketchSpec("identity", n, n, 0),
                SketchSpec("identity", n, n, 0))
    pi1 = SketchSpec("count_sketch", m1, n, derive_seed(cfg.seed, 1))
    s_col = cfg.column_sparsity(d)
    pi2 = SketchSpec("osnap", m2, m1, derive_seed(cfg.seed, 2), s_col=min(s_col, m2))
    pi3 = SketchSpec("osnap", m3, m2, derive_seed(cfg.seed, 3), s_col=min(s_col, m3))
    return pi1, pi2, pi3


def run_l2(shards, cfg):
    """Run the l2 protocol on ``shards``; the oracle is solved on the aggregate.

    Transcript stages: ``sketch`` (servers send their Pi3-sketched blocks),
    ``qr`` (preconditioner broadcast), ``iter`` (gradient rounds) and
    ``final`` (answer broadcast, reported separately).
    """
    s = shards.s
    n, d = shards.a_shards[0].shape
    if shards.b_shards[0].shape != (n,):
        raise DimensionMismatch("b shards must be length-n vectors")
    precision = default_precision(n, d, cfg.grid_exponent)
    tr = Transcript(s, precision)
    pi1, pi2, pi3 = _sketch_specs(cfg, n, d)
    workers = cfg.workers

    # steps 1-3: local sketches, then Pi3 A^i to the coordinator
    def local(_, ab):
        a_i, b_i = ab
        blk = sketch_apply(pi2, sketch_apply(pi1, np.column_stack([a_i, b_i])))
        return blk[:, :d], blk[:, d], sketch_apply(pi3, blk[:, :d])

    local_out = map_servers(local, zip(shards.a_shards, shards.b_shards), workers)
    a_hat = [o[0] for o in local_out]
    b_hat = [o[1] for o in local_out]
    rnd = 0
    pre = sum(tr.send(i, COORDINATOR, o[2], rnd, "sketch") for i, o in enumerate(local_out, 1))

    # step 4: preconditioner
    rnd += 1
    r_exact = qr_decompose(pre).r
    r_tilde = tr.broadcast(round_to_grid(r_exact, precision), rnd, "qr")

    # uncharged diagnostic on the true preconditioned matrix
    m_pre = sum(a_hat) @ r_tilde
    kappa = condition_estimate(m_pre, seed=derive_seed(cfg.seed, 4))
    if not kappa <= cfg.kappa_max:
        raise SketchFailure(f"preconditioned condition estimate {kappa:.3g} exceeds {cfg.kappa_max}")

    # step 5: gradient descent with unit step
    ar = map_servers(lambda _, a: a @ r_tilde, a_hat, workers)
    x = np.zeros(d)
    curve = []
    iters = cfg.iterations()
    for t in range(iters):
        rnd += 1
        parts = map_servers(lambda i, z: z[0] @ x - z[1], zip(ar, b_hat), workers)
        y = sum(tr.send(i, COORDINATOR, v, rnd, "iter") for i, v in enumerate(parts, 1))
        curve.append(float(np.linalg.norm(y)))
        rnd += 1
        y = tr.broadcast(y, rnd, "iter")
        rnd += 1
        grads = map_servers(lambda _, m: m.T @ y, ar, workers)
        g = sum(tr.send(i, COORDINATOR, v, rnd, "iter") for i, v in enumerate(grads, 1))
        x = x - g
        if t < iters - 1:
            rnd += 1
            x = tr.broadcast(x, rnd, "iter")
    if cfg.instrument:
        curve.append(float(np.linalg.norm(m_pre @ x - sum(b_hat))))

    solution = r_tilde @ x
    rnd += 1
    before = tr.total_bits
    solution = tr.broadcast(solution, rnd, "final")
    bits_final = tr.total_bits - before

    a, b = shards.aggregate()
    objective = float(np.linalg.norm(a @ solution - b))
    oracle = float(np.linalg.norm(a @ solve_l2_exact(a, b) - b))
    ratio = objective_ratio(objective, oracle, float(np.linalg.norm(b)))
    return L2Result(solution, objective, tr, ratio, oracle, kappa, curve, bits_final)


def gd_residual_curve(result):
    """``||A_hat R x_t - b_hat||_2`` per iteration (plus the final iterate when instrumented)."""
    return list(result.curve)
