"""Random regression instances and the on-disk instance directory layout.

A directory holds ``A.txt`` and ``b.txt`` (the aggregate), one
``shard_<i>_A.txt`` / ``shard_<i>_b.txt`` pair per server, and ``meta.txt``
with ``key = value`` lines. Gap instances add ``gap.txt`` with one
``n t delta c1 c2 seed`` line per block.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import BadParam
from .linalg import read_matrix, read_vector, write_matrix
from .netsim import ShardSet, shard

MAGNITUDE = 10
NOISE = 20.0


def random_instance(n, d, seed, magnitude=MAGNITUDE, noise=NOISE, consistent=False):
    """Integer ``A`` uniform on ``{-M..M}`` and ``b = round(A x + noise)``.

    With ``consistent`` the planted x is integer and b lies exactly in the
    column space. Returns ``(a, b, x_planted)``.
    """
    if n < d or d < 1:
        raise BadParam(f"need n >= d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 31])
    a = rng.integers(-magnitude, magnitude + 1, size=(n, d)).astype(float)
    if consistent:
        x = rng.integers(-3, 4, size=d).astype(float)
        return a, a @ x, x
    x = rng.standard_normal(d)
    b = np.rint(a @ x + noise * rng.standard_normal(n))
    return a, b, x


def random_shards(n, d, s, seed, **kw):
    a, b, _ = random_instance(n, d, seed, **kw)
    return shard(a, b, s, seed)


def write_meta(path, meta):
    lines = [f"{k} = {v}" for k, v in meta.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path):
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def write_instance(out_dir, shards, meta=None, gap_blocks=None):
    """Write an integer instance with precision 1 (numerators are the values)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a, b = shards.aggregate()
    write_matrix(out / "A.txt", a, 1)
    write_matrix(out / "b.txt", b, 1)
    for i, (a_i, b_i) in enumerate(zip(shards.a_shards, shards.b_shards), start=1):
        write_matrix(out / f"shard_{i}_A.txt", a_i, 1, magnitude=shards.bound)
        write_matrix(out / f"shard_{i}_b.txt", b_i, 1, magnitude=shards.bound)
    meta = dict(meta or {})
    meta.update(n=a.shape[0], d=a.shape[1], s=shards.s, bound=shards.bound)
    write_meta(out / "meta.txt", meta)
    if gap_blocks:
        lines = [f"{g.n} {g.t} {g.delta} {g.c1!r} {g.c2!r} {g.seed}" for g in gap_blocks]
        (out / "gap.txt").write_text("\n".join(lines) + "\n")


def read_instance(in_dir):
    """Returns ``(shards, meta)``; the aggregate files must match the shard sum."""
    src = Path(in_dir)
    meta = read_meta(src / "meta.txt")
    s = int(meta["s"])
    a_sh, b_sh = [], []
    for i in range(1, s + 1):
        a_sh.append(read_matrix(src / f"shard_{i}_A.txt")[0])
        b_sh.append(read_vector(src / f"shard_{i}_b.txt")[0])
    shards = ShardSet(a_sh, b_sh, float(meta.get("bound", 0)))
    a, b = shards.aggregate()
    a_file = read_matrix(src / "A.txt")[0]
    b_file = read_vector(src / "b.txt")[0]
    if a.shape != a_file.shape or not (np.array_equal(a, a_file) and np.array_equal(b, b_file)):
        raise ValueError(f"{src}: shards do not sum to the aggregate")
    return shards, meta


def read_gap_meta(path):
    """Parse ``gap.txt`` into ``(n, t, delta, c1, c2, seed)`` tuples."""
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            n, t, delta, c1, c2, seed = line.split()
            out.append((int(n), int(t), int(delta), float(c1), float(c2), int(seed)))
    return out
