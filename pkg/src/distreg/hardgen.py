"""Hard instances behind the lower bounds.

Gap-Hamming pairs shared among players, the exact one-dimensional lp
solver, the sign distinguisher and block-diagonal padding to d columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .errors import BadParam, RejectionBudget
from .netsim import ShardSet

C1 = 2.0
C2 = 6.0
REJECTION_BUDGET = 100_000
GOLDEN_TOL = 1e-12


@dataclass
class GapInstance:
    n: int
    t: int
    a: np.ndarray
    b: np.ndarray
    a_shards: np.ndarray
    b_shards: np.ndarray
    delta: int
    c1: float
    c2: float
    seed: int

    @property
    def matches(self):
        """``r = #{i : a_i = b_i} = (n + delta) / 2``."""
        return (self.n + self.delta) // 2

    @property
    def positive(self):
        return self.delta > 0


@dataclass
class PaddedInstance:
    d: int
    blocks: list
    a: np.ndarray
    b: np.ndarray
    shards: ShardSet


class Decision(NamedTuple):
    label: str
    tie: bool


def _share(rng, v, t):
    """Per coordinate: t+1 players hold v_i and t hold -v_i, in random order."""
    players = 2 * t + 1
    n = v.size
    keys = rng.random((players, n))
    rank = keys.argsort(axis=0).argsort(axis=0)
    return np.where(rank < t + 1, v[None, :], -v[None, :]).astype(float)


def gen_gap(n, t, target="positive", c1=C1, c2=C2, seed=0, eps=None,
            budget=REJECTION_BUDGET):
    """Sample (a, b) uniform on signs conditioned on Delta in the target band.

    ``target="positive"`` asks for ``Delta in [c1 sqrt(n), c2 sqrt(n)]`` and
    ``"negative"`` for the negated band. Shares follow the distribution in
    which each coordinate of a (resp. b) is split into t+1 copies of itself
    and t copies of its negation among 2t+1 players.
    """
    if target not in ("positive", "negative"):
        raise BadParam(f"target must be 'positive' or 'negative', got {target!r}")
    if t < 0:
        raise BadParam("t must be >= 0")
    if not 0 < c1 <= c2:
        raise BadParam("need 0 < c1 <= c2")
    if n < 4 * c2 * c2:
        raise BadParam(f"n={n} is below 4*c2^2={4 * c2 * c2:g}")
    lo, hi = math.ceil(c1 * math.sqrt(n)), math.floor(c2 * math.sqrt(n))
    if (lo - n) % 2:
        lo += 1
    if lo > hi:
        raise BadParam("no parity-consistent Delta in the target band")
    eps = 1 / math.sqrt(n) if eps is None else eps
    # the p = 1 threshold arithmetic n >= (1+eps)(n - c sqrt n)
    if not n >= (1 + eps) * (n - c1 * math.sqrt(n)):
        raise BadParam("n too large for eps: the p=1 separation fails")

    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 21])
    sign = 1 if target == "positive" else -1
    tried = 0
    batch = 256
    while tried < budget:
        k = min(batch, budget - tried)
        a = rng.integers(0, 2, size=(k, n)) * 2 - 1
        b = rng.integers(0, 2, size=(k, n)) * 2 - 1
        deltas = sign * np.sum(a * b, axis=1)
        ok = np.flatnonzero((deltas >= lo) & (deltas <= hi))
        tried += k
        if ok.size:
            j = ok[0]
            a, b = a[j].astype(float), b[j].astype(float)
            return GapInstance(n, t, a, b, _share(rng, a, t), _share(rng, b, t),
                               int(a @ b), c1, c2, int(seed))
    raise RejectionBudget(f"no instance in {budget} attempts")


def scalar_objective(r_match, n, x, p):
    """``r |1 - x|^p + (n - r) |1 + x|^p``."""
    return r_match * abs(1 - x) ** p + (n - r_match) * abs(1 + x) ** p


def _counts(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    delta = int(round(float(a @ b)))
    return (n + delta) // 2, n, delta


def solve_scalar_lp(a, b, p):
    """Exact minimizer of ``||a x - b||_p^p`` over scalar x for sign vectors a, b."""
    if not 0 < p <= 2:
        raise BadParam(f"p must lie in (0, 2], got {p}")
    r, n, delta = _counts(a, b)
    if p == 2:
        return delta / n
    if p == 1:
        if 2 * r > n:
            return 1.0
        if 2 * r < n:
            return -1.0
        return 0.0
    if r == n:
        return 1.0
    if r == 0:
        return -1.0

    def f(x):
        return scalar_objective(r, n, x, p)

    if p > 1:
        # stationary point of the strictly convex objective
        k = (r / (n - r)) ** (1.0 / (p - 1.0))
        return float((k - 1.0) / (k + 1.0)) if math.isfinite(k) else 1.0
    # 0 < p < 1: non-convex, grid then local refinement
    grid = np.linspace(-1.0, 1.0, 2001)
    vals = np.array([f(x) for x in grid])
    j = int(vals.argmin())
    cands = [(vals[j], grid[j]), (f(-1.0), -1.0), (f(1.0), 1.0)]
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    if hi > lo:
        res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                              options={"xatol": GOLDEN_TOL})
        cands.append((float(res.fun), float(res.x)))
    return float(min(cands)[1])


def golden_scalar_lp(a, b, p):
    """Bounded golden-section/Brent search over [-1, 1]; a cross-check for p > 1."""
    r, n, _ = _counts(a, b)
    res = minimize_scalar(lambda x: scalar_objective(r, n, x, p), bounds=(-1.0, 1.0),
                          method="bounded", options={"xatol": GOLDEN_TOL})
    return float(res.x)


def distinguish(x_approx):
    """Positive iff ``x_approx > 0``; an exact zero is a flagged negative."""
    if x_approx > 0:
        return Decision("positive", False)
    return Decision("negative", x_approx == 0)


def suboptimality_eta(p, eps):
    return eps if p <= 1 else eps * eps


def worst_suboptimal(a, b, p, eta, tol=1e-13):
    """The (1+eta)-approximate minimizer closest to the wrong sign.

    For Delta > 0 this is the smallest x with ``f(x) <= (1+eta) f*`` (and
    the largest for Delta < 0). Convex p uses bisection on the sublevel
    boundary; p < 1 scans a fine grid.
    """
    r, n, delta = _counts(a, b)
    x_star = solve_scalar_lp(a, b, p)
    level = (1 + eta) * scalar_objective(r, n, x_star, p)
    direction = -1.0 if delta >= 0 else 1.0

    def f(x):
        return scalar_objective(r, n, x, p)

    if p < 1:
        grid = np.linspace(-2.0, 2.0, 40001)
        ok = grid[np.array([f(x) <= level for x in grid])]
        return float(ok.min() if direction < 0 else ok.max())
    far = x_star + direction
    while f(far) <= level:
        far += direction * 2 * abs(far - x_star)
    inside, outside = x_star, far
    while abs(outside - inside) > tol:
        mid = 0.5 * (inside + outside)
        if f(mid) <= level:
            inside = mid
        else:
            outside = mid
    return float(inside)


def pad(blocks):
    """Block-diagonal assembly of d gap instances.

    Server j in ``1..2t+1`` holds the block-diagonal matrix of the j-th
    a-shares (and a zero vector); server ``2t+1+j`` holds the j-th b-shares
    stacked (and a zero matrix), so ``s = 4t + 2`` and the shares sum to
    ``(A, b)`` exactly.
    """
    if not blocks:
        raise BadParam("need at least one block")
    n, t = blocks[0].n, blocks[0].t
    if any(g.n != n or g.t != t for g in blocks):
        raise BadParam("all blocks must share n and t")
    d = len(blocks)
    a = sla.block_diag(*[g.a[:, None] for g in blocks])
    b = np.concatenate([g.b for g in blocks])
    players = 2 * t + 1
    a_sh = [sla.block_diag(*[g.a_shards[j][:, None] for g in blocks]) for j in range(players)]
    b_sh = [np.concatenate([g.b_shards[j] for g in blocks]) for j in range(players)]
    zeros_a = np.zeros_like(a)
    zeros_b = np.zeros_like(b)
    shards = ShardSet(a_sh + [zeros_a] * players, [zeros_b] * players + b_sh, 1.0)
    return PaddedInstance(d, list(blocks), a, b, shards)


def padded_scalar_solution(inst, p):
    """Concatenated per-block scalar minimizers."""
    return np.array([solve_scalar_lp(g.a, g.b, p) for g in inst.blocks])
