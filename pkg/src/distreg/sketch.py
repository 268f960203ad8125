"""Seeded sketch families shared by all parties.

Every realized sketch matrix is a pure function of its :class:`SketchSpec`,
so two parties holding the same spec apply bit-identical maps.

p-stable variates follow the standard symmetric convention with
characteristic function ``exp(-|t|^p)``; at ``p = 2`` that is N(0, 2).
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import BadParam, DimensionMismatch

FAMILIES = ("count_sketch", "osnap", "p_stable", "gaussian", "identity")
ALPHA_CONVENTION = 1
ALPHA_SAMPLES = 10_000_000
_BLOCK_ROWS = 256


@dataclass(frozen=True)
class SketchSpec:
    """Description of one sketch matrix.

    For ``gaussian`` the matrix right-multiplies its input: ``in_rows`` is the
    input's column count and ``out_rows`` the number of output columns.
    """

    family: str
    out_rows: int
    in_rows: int
    seed: int
    s_col: int | None = None
    p: float | None = None
    r: float | None = None
    alpha: float | None = None
    precision: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BadParam(f"unknown sketch family {self.family!r}")
        if self.out_rows < 1:
            raise BadParam("out_rows must be >= 1")
        if self.family == "p_stable":
            if self.p is None or self.r is None:
                raise BadParam("p_stable sketch needs p and r")
            if not 0 < self.r < self.p <= 2:
                raise BadParam(f"need 0 < r < p <= 2, got p={self.p}, r={self.r}")
        if self.family == "osnap":
            if self.s_col is None or self.s_col < 1:
                raise BadParam("osnap needs s_col >= 1")
            if self.s_col > self.out_rows:
                raise BadParam(f"s_col={self.s_col} exceeds out_rows={self.out_rows}")
        if self.family == "identity" and self.out_rows != self.in_rows:
            raise BadParam("identity sketch must be square")


def _rng(seed, *tag):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *tag])


def _check_rows(spec, m):
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.shape[0] != spec.in_rows:
        raise DimensionMismatch(f"sketch expects {spec.in_rows} rows, got {m.shape[0]}")
    return m


def count_sketch_matrix(spec):
    rng = _rng(spec.seed, 1)
    n = spec.in_rows
    rows = rng.integers(0, spec.out_rows, size=n)
    signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
    return sp.csc_matrix((signs, (rows, np.arange(n))), shape=(spec.out_rows, n))


def count_sketch_apply(spec, m):
    """``S @ m`` for a Count-Sketch S with one +-1 per column."""
    if spec.family != "count_sketch":
        raise BadParam("spec is not a count_sketch")
    m = _check_rows(spec, m)
    return np.asarray(count_sketch_matrix(spec) @ m)


def osnap_matrix(spec):
    rng = _rng(spec.seed, 2)
    n, m, s = spec.in_rows, spec.out_rows, spec.s_col
    if s == m:
        rows = np.tile(np.arange(m), n)
    else:
        # s distinct rows per column: keys = first s of a random permutation
        keys = rng.random((n, m))
        rows = np.argpartition(keys, s - 1, axis=1)[:, :s].ravel()
    cols = np.repeat(np.arange(n), s)
    vals = (rng.integers(0, 2, size=n * s) * 2.0 - 1.0) / math.sqrt(s)
    return sp.csc_matrix((vals, (rows, cols)), shape=(m, n))


def osnap_apply(spec, m):
    """``S @ m`` for an OSNAP matrix with exactly ``s_col`` nonzeros per column."""
    if spec.family != "osnap":
        raise BadParam("spec is not an osnap sketch")
    m = _check_rows(spec, m)
    return np.asarray(osnap_matrix(spec) @ m)


def _cms(rng, p, count):
    """Chambers-Mallows-Stuck draw of symmetric p-stable variates."""
    v = rng.uniform(-math.pi / 2, math.pi / 2, size=count)
    w = rng.exponential(1.0, size=count)
    if p == 1.0:
        return np.tan(v)
    return (np.sin(p * v) / np.cos(v) ** (1.0 / p)
            * (np.cos(v - p * v) / w) ** ((1.0 - p) / p))


def sample_p_stable(seed, p, count):
    """``count`` i.i.d. standard symmetric p-stable variates."""
    if not 0 < p <= 2:
        raise BadParam(f"p must lie in (0, 2], got {p}")
    return _cms(_rng(seed, 3), p, int(count))


@dataclass(frozen=True)
class AlphaConstant:
    p: float
    r: float
    value: float
    estimation_error: float
    samples: int = 0


def alpha_closed_form(p, r):
    """Exact ``(E|Z|^r)^(1/r)`` for the exp(-|t|^p) convention.

    Uses ``E|Z|^r = 2^r Gamma((1+r)/2) Gamma(1-r/p) / (sqrt(pi) Gamma(1-r/2))``.
    """
    if not 0 < r < p <= 2:
        raise BadParam(f"need 0 < r < p <= 2, got p={p}, r={r}")
    if p == 2:
        log_m = r * math.log(2) + gammaln((1 + r) / 2) - 0.5 * math.log(math.pi)
    else:
        log_m = (r * math.log(2) + gammaln((1 + r) / 2) + gammaln(1 - r / p)
                 - 0.5 * math.log(math.pi) - gammaln(1 - r / 2))
    return math.exp(log_m / r)


def _conditional_moment_draws(rng, p, r, count):
    """Unbiased draws whose mean is ``E|Z|^r / Gamma(1+k)``.

    The exponential factor of the CMS transform is integrated out exactly
    (``E[W^k] = Gamma(1+k)``, ``k = r(p-1)/p``); the remaining angle integral
    has an integrable ``u^(-r/p)`` spike at ``u = pi/2 - |V| -> 0``, which is
    importance-sampled away so the draws have finite variance.
    """
    a = r / p
    k = r * (p - 1.0) / p
    half_pi = math.pi / 2
    u = half_pi * rng.random(count) ** (1.0 / (1.0 - a))
    v = half_pi - u
    # cos(v) == sin(u) without cancellation for tiny u
    h = (np.abs(np.sin(p * v)) ** r * np.sin(u) ** (-a)
         * np.cos((p - 1.0) * v) ** (-k))
    return h * u ** a * half_pi ** (1.0 - a) / (1.0 - a) * (2.0 / math.pi)


def estimate_alpha(p, r, samples=ALPHA_SAMPLES, seed=0, method="conditional"):
    """Monte Carlo estimate of alpha_{p,r} = (E|Z|^r)^(1/r), Z standard p-stable.

    ``method="naive"`` averages ``|Z|^r`` over CMS draws directly; its
    variance is infinite once ``2r >= p``, so the default ``"conditional"``
    estimator (see :func:`_conditional_moment_draws`) is used instead.
    ``estimation_error`` is three standard errors pushed through the 1/r power.
    """
    if not 0 < r < p <= 2:
        raise BadParam(f"need 0 < r < p <= 2, got p={p}, r={r}")
    if method not in ("conditional", "naive"):
        raise BadParam(f"unknown method {method!r}")
    rng = _rng(seed, 4)
    scale = math.exp(gammaln(1.0 + r * (p - 1.0) / p)) if method == "conditional" else 1.0
    total, total_sq, done = 0.0, 0.0, 0
    chunk = 1_000_000
    while done < samples:
        k = min(chunk, samples - done)
        if method == "conditional":
            z = _conditional_moment_draws(rng, p, r, k) * scale
        else:
            z = np.abs(_cms(rng, p, k)) ** r
        total += float(z.sum())
        total_sq += float((z * z).sum())
        done += k
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    se = math.sqrt(var / samples)
    value = mean ** (1.0 / r)
    err = 3.0 * se * (1.0 / r) * mean ** (1.0 / r - 1.0)
    return AlphaConstant(p, r, value, err, samples)


def alpha_table_path():
    root = os.environ.get("DISTREG_CACHE_DIR")
    base = Path(root) if root else Path.home() / ".cache" / "distreg"
    return base / "alpha_table.txt"


def read_alpha_table(path=None):
    path = Path(path) if path else alpha_table_path()
    table = {}
    if not path.exists():
        return table
    for line in path.read_text().splitlines():
        parts = line.split()
        if len(parts) != 6 or line.startswith("#"):
            continue
        p, r, value, err, n, version = parts
        if int(version) != ALPHA_CONVENTION:
            continue
        table[(float(p), float(r))] = AlphaConstant(float(p), float(r), float(value),
                                                   float(err), int(n))
    return table


def write_alpha_entry(const, path=None):
    path = Path(path) if path else alpha_table_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    line = (f"{const.p!r} {const.r!r} {const.value!r} {const.estimation_error!r} "
            f"{const.samples} {ALPHA_CONVENTION}\n")
    with open(path, "a") as fh:
        fh.write(line)


def alpha_for(p, r, samples=ALPHA_SAMPLES, path=None):
    """Cached alpha_{p,r}; estimated and appended to the table on a miss."""
    table = read_alpha_table(path)
    hit = table.get((float(p), float(r)))
    if hit is not None and hit.samples >= samples:
        return hit
    const = estimate_alpha(p, r, samples)
    try:
        write_alpha_entry(const, path)
    except OSError:
        pass
    return const


def p_stable_block(spec, k):
    """Rows ``[k*B, (k+1)*B)`` of the scaled, grid-rounded p-stable matrix."""
    lo = k * _BLOCK_ROWS
    hi = min(lo + _BLOCK_ROWS, spec.out_rows)
    rng = _rng(spec.seed, 5, k)
    z = _cms(rng, spec.p, (hi - lo) * spec.in_rows).reshape(hi - lo, spec.in_rows)
    z *= 1.0 / (spec.out_rows ** (1.0 / spec.r) * spec.alpha)
    if spec.precision:
        z = np.rint(z * spec.precision) / spec.precision
    return z


def p_stable_matrix(spec):
    nblocks = -(-spec.out_rows // _BLOCK_ROWS)
    return np.vstack([p_stable_block(spec, k) for k in range(nblocks)])


def p_stable_sketch_apply(spec, m):
    """``T @ m`` with T generated block by block to bound memory."""
    if spec.family != "p_stable":
        raise BadParam("spec is not a p_stable sketch")
    if spec.alpha is None:
        raise BadParam("p_stable sketch needs alpha")
    m = _check_rows(spec, m)
    out = np.empty((spec.out_rows, m.shape[1]))
    nblocks = -(-spec.out_rows // _BLOCK_ROWS)
    for k in range(nblocks):
        lo = k * _BLOCK_ROWS
        blk = p_stable_block(spec, k)
        out[lo:lo + blk.shape[0]] = blk @ m
    return out


def gaussian_matrix(spec):
    g = _rng(spec.seed, 6).standard_normal((spec.in_rows, spec.out_rows))
    g /= math.sqrt(spec.out_rows)
    if spec.precision:
        g = np.rint(g * spec.precision) / spec.precision
    return g


def gaussian_sketch_apply(spec, m):
    """``m @ G`` with G of shape ``(in_rows, out_rows)``, entries N(0, 1/out_rows)."""
    if spec.family != "gaussian":
        raise BadParam("spec is not a gaussian sketch")
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[1] != spec.in_rows:
        raise DimensionMismatch(f"gaussian sketch expects {spec.in_rows} columns")
    return m @ gaussian_matrix(spec)


def sketch_apply(spec, m):
    """Dispatch on ``spec.family``."""
    if spec.family == "identity":
        return _check_rows(spec, m).copy()
    return {
        "count_sketch": count_sketch_apply,
        "osnap": osnap_apply,
        "p_stable": p_stable_sketch_apply,
        "gaussian": gaussian_sketch_apply,
    }[spec.family](spec, m)
