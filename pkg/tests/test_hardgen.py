import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distreg.errors import BadParam
from distreg.hardgen import (distinguish, gen_gap, golden_scalar_lp, pad, padded_scalar_solution,
                            scalar_objective, solve_scalar_lp, suboptimality_eta,
                            worst_suboptimal)
from distreg.linalg import solve_lp_irls
from distreg.netsim import run_with_retries, shard
from distreg.protocol_lp import LpConfig, run_lp


def test_t0_single_player():
    g = gen_gap(144, 0, seed=1)
    assert g.a_shards.shape == (1, 144)
    assert np.array_equal(g.a_shards[0], g.a)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.integers(0, 10_000), st.sampled_from(["positive", "negative"]))
def test_shares_reconstruct_with_mu_multiset(t, seed, target):
    g = gen_gap(144, t, target, seed=seed)
    assert np.array_equal(g.a_shards.sum(axis=0), g.a)
    assert np.array_equal(g.b_shards.sum(axis=0), g.b)
    for shares, v in ((g.a_shards, g.a), (g.b_shards, g.b)):
        assert np.all((shares == v).sum(axis=0) == t + 1)
        assert np.all((shares == -v).sum(axis=0) == t)
    assert (g.delta - g.n) % 2 == 0
    lo, hi = 2 * math.sqrt(144), 6 * math.sqrt(144)
    assert lo <= abs(g.delta) <= hi
    assert (g.delta > 0) == (target == "positive")


def test_gen_rejects_small_n():
    with pytest.raises(BadParam):
        gen_gap(100, 1)
    with pytest.raises(BadParam):
        gen_gap(400, 1, target="maybe")


def test_scalar_objective_examples():
    assert scalar_objective(30, 100, 0.0, 1.5) == 100
    assert scalar_objective(30, 100, 1.0, 1.5) == pytest.approx(70 * 2 ** 1.5)
    assert scalar_objective(100, 100, 1.0, 2) == 0


def test_objective_identity():
    g = gen_gap(400, 1, seed=3)
    rng = np.random.default_rng(3)
    for x in rng.uniform(-2, 2, 20):
        for p in (0.5, 1.0, 1.5, 2.0):
            direct = np.sum(np.abs(g.a * x - g.b) ** p)
            assert abs(direct - scalar_objective(g.matches, g.n, x, p)) <= 1e-12 * max(direct, 1)


def test_solver_examples():
    a = np.array([1.0, -1.0, 1.0, 1.0])
    for p in (1.25, 1.5, 2.0):
        assert solve_scalar_lp(a, a, p) == 1.0
    sym = (np.array([1.0, 1.0, 1.0, 1.0]), np.array([1.0, 1.0, -1.0, -1.0]))
    for p in (1.0, 1.5, 2.0):
        x = solve_scalar_lp(*sym, p)
        assert x == pytest.approx(0, abs=1e-9)
        assert scalar_objective(2, 4, x, p) == pytest.approx(4)
    # below p = 1 the symmetric objective is concave between the kinks
    x = solve_scalar_lp(*sym, 0.5)
    assert abs(x) == 1.0
    assert scalar_objective(2, 4, x, 0.5) == pytest.approx(2 * 2 ** 0.5)


def test_p2_closed_form():
    g = gen_gap(400, 1, "negative", seed=4)
    x = solve_scalar_lp(g.a, g.b, 2)
    assert abs(x - g.delta / g.n) < 1e-12
    assert abs(scalar_objective(g.matches, g.n, x, 2) - (g.n - g.delta ** 2 / g.n)) < 1e-9


@pytest.mark.parametrize("p", [1.25, 1.5, 1.75])
def test_closed_form_matches_golden(p):
    for seed in range(10):
        g = gen_gap(400, 0, "positive" if seed % 2 else "negative", seed=seed)
        assert abs(solve_scalar_lp(g.a, g.b, p) - golden_scalar_lp(g.a, g.b, p)) < 1e-7


def test_distinguish():
    pos = gen_gap(400, 1, "positive", seed=5)
    neg = gen_gap(400, 1, "negative", seed=6)
    assert distinguish(solve_scalar_lp(pos.a, pos.b, 1.5)).label == "positive"
    assert distinguish(-solve_scalar_lp(pos.a, pos.b, 1.5)).label == "negative"
    assert distinguish(solve_scalar_lp(neg.a, neg.b, 1.5)).label == "negative"
    assert distinguish(0.0) == ("negative", True)


def test_worst_suboptimal_success_rate():
    ok = 0
    eta = suboptimality_eta(1.5, 0.05)
    for seed in range(500):
        g = gen_gap(400, 1, "positive" if seed % 2 else "negative", seed=seed)
        x = worst_suboptimal(g.a, g.b, 1.5, eta)
        ok += distinguish(x).label == ("positive" if g.positive else "negative")
    assert ok >= 475


def test_worst_suboptimal_on_level_set():
    g = gen_gap(400, 1, seed=7)
    for p in (1.0, 1.5, 2.0):
        eta = suboptimality_eta(p, 0.05)
        x = worst_suboptimal(g.a, g.b, p, eta)
        fstar = scalar_objective(g.matches, g.n, solve_scalar_lp(g.a, g.b, p), p)
        assert scalar_objective(g.matches, g.n, x, p) <= (1 + eta) * fstar * (1 + 1e-12)


def test_pad_d1_and_shards():
    g = gen_gap(144, 1, seed=8)
    inst = pad([g])
    assert np.array_equal(inst.a[:, 0], g.a)
    blocks = [gen_gap(144, 1, seed=10 + j) for j in range(3)]
    inst = pad(blocks)
    assert inst.shards.s == 4 * 1 + 2
    a, b = inst.shards.aggregate()
    assert np.array_equal(a, inst.a) and np.array_equal(b, inst.b)


@pytest.mark.parametrize("p", [1.25, 1.5, 2.0])
def test_pad_separable(p):
    inst = pad([gen_gap(144, 1, "positive" if j % 2 else "negative", seed=20 + j)
                for j in range(4)])
    full = solve_lp_irls(inst.a, inst.b, p)
    assert np.abs(full - padded_scalar_solution(inst, p)).max() < 1e-9


def test_protocol_recovers_block_signs():
    # small r keeps the embedded tail light enough for sign recovery
    good = 0
    seeds = range(10)
    for seed in seeds:
        blocks = [gen_gap(400, 1, "positive" if (seed + j) % 2 else "negative",
                          seed=100 * seed + j) for j in range(4)]
        inst = pad(blocks)
        cfg = LpConfig(p=1.5, r=1.05, eps=0.25, m_t=15_000, seed=seed)
        res, _ = run_with_retries(run_lp, shard(inst.a, inst.b, 4, seed), cfg)
        hits = sum(distinguish(x).label == ("positive" if g.positive else "negative")
                   for x, g in zip(res.x, blocks))
        good += hits >= 3
    assert good >= 8
