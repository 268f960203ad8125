"""Dense kernels, grid quantization and the exact solvers used as oracles.

Matrices and vectors are plain ``numpy`` arrays. Grid metadata (magnitude
bound M and precision P) only travels with the on-disk format handled by
:func:`write_matrix` / :func:`read_matrix`.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NoConvergence, RankDeficient

RANK_RTOL = 1e-12
PINV_RTOL = 1e-12


class QrFactors(NamedTuple):
    """``m = q @ inv(r)``; ``triangular`` is ``inv(r)``."""

    q: np.ndarray
    r: np.ndarray
    triangular: np.ndarray


def default_precision(n, d, exponent=3):
    """Grid precision P = (n*d)**exponent."""
    return float(max(n * d, 2)) ** exponent


def qr_decompose(m):
    """Householder QR returned in the preconditioner form ``m = Q R^{-1}``.

    The triangular factor is sign-normalized to a positive diagonal, which
    makes the factorization unique for full-rank input.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch("qr_decompose expects a 2-D array")
    rows, cols = m.shape
    if rows < cols:
        raise RankDeficient(f"{rows} rows < {cols} columns")
    q, u = np.linalg.qr(m, mode="reduced")
    signs = np.where(np.diag(u) < 0, -1.0, 1.0)
    q = q * signs
    u = u * signs[:, None]
    diag = np.abs(np.diag(u))
    if cols and (diag.max() == 0 or diag.min() < RANK_RTOL * diag.max()):
        raise RankDeficient("numerical rank below column count")
    r = sla.solve_triangular(u, np.eye(cols), lower=False)
    return QrFactors(q, r, u)


def preconditioner(m, rtol=PINV_RTOL):
    """Square R with ``m @ R`` having orthonormal (or zero) columns.

    ``inv(triangular)`` from QR when m has full column rank, otherwise
    ``V diag(1/sigma) V^T`` over the numerical range, so the row norms of
    ``m @ R`` are the leverage scores in both cases.
    """
    try:
        return qr_decompose(m).r
    except RankDeficient:
        _, sv, vt = np.linalg.svd(np.asarray(m, dtype=float), full_matrices=False)
        keep = sv > rtol * sv[0] if sv.size and sv[0] > 0 else np.zeros(sv.size, bool)
        inv = np.where(keep, 1.0 / np.where(keep, sv, 1.0), 0.0)
        return (vt.T * inv) @ vt


def orthonormal_basis(m, rtol=PINV_RTOL):
    """Left singular vectors spanning the numerical column space."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return np.zeros((m.shape[0], 0))
    u, sv, _ = np.linalg.svd(m, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return u[:, :0]
    rank = int(np.sum(sv > rtol * sv[0]))
    return u[:, :rank]


def leverage_scores(m):
    """Row leverage scores ``tau_i = m_i (m^T m)^+ m_i^T``.

    Rank-deficient input is handled with pseudoinverse semantics, so the
    scores always sum to the numerical rank.
    """
    basis = orthonormal_basis(m)
    return np.einsum("ij,ij->i", basis, basis)


def lp_norm_pow(v, p):
    """``sum |v_i|^p``."""
    return float(np.sum(np.abs(np.asarray(v, dtype=float)) ** p))


def lp_norm(v, p):
    if p <= 0:
        raise ValueError("p must be positive")
    return lp_norm_pow(v, p) ** (1.0 / p)


def solve_l2_exact(a, b):
    """Least-squares minimizer via QR; raises RankDeficient."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"a has {a.shape[0]} rows, b has {b.shape[0]}")
    f = qr_decompose(a)
    return sla.solve_triangular(f.triangular, f.q.T @ b, lower=False)


def lp_dual_bound(a_basis, b, residual, p):
    """Hoelder lower bound on ``min_x ||Ax - b||_p`` from a residual.

    Projects the normalized gradient of ``||r||_p`` onto the orthogonal
    complement of col(A); any v there with ``||v||_q <= 1`` certifies
    ``||Ax - b||_p >= |<v, b>|`` for every x.
    """
    u = np.sign(residual) * np.abs(residual) ** (p - 1.0)
    v = u - a_basis @ (a_basis.T @ u)
    q = p / (p - 1.0)
    vq = lp_norm(v, q)
    if vq == 0.0:
        return 0.0
    return abs(float(v @ b)) / vq


def solve_lp_irls(a, b, p, tol=1e-10, max_iter=500, floor_rel=1e-10, history=None):
    """Minimize ``||Ax - b||_p`` for 1 < p <= 2 by IRLS with a weight floor.

    Weights are ``max(|r_i|, theta)^(p-2)`` with ``theta = floor_rel*||b||_2``.
    Each reweighted solve gives a descent direction; the step along it tries
    the Newton-equivalent length ``1/(p-1)`` first and falls back to the plain
    IRLS step and then halving, so the objective never increases.
    Stops once the duality gap from :func:`lp_dual_bound` is below
    ``tol * objective``. If ``history`` is a list, objectives are appended.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not 1.0 < p <= 2.0:
        raise ValueError(f"p must lie in (1, 2], got {p}")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"a has {a.shape[0]} rows, b has {b.shape[0]}")
    x = solve_l2_exact(a, b)
    if p == 2.0:
        if history is not None:
            history.append(lp_norm(a @ x - b, 2.0))
        return x

    basis = qr_decompose(a).q
    bnorm = float(np.linalg.norm(b))
    theta = floor_rel * bnorm if bnorm > 0 else floor_rel
    zero_level = 1e-14 * max(lp_norm(b, p), 1e-300)

    def objective(z):
        return lp_norm_pow(a @ z - b, p)

    fx = objective(x)
    if history is not None:
        history.append(fx ** (1 / p))
    for _ in range(max_iter):
        res = a @ x - b
        f_norm = fx ** (1 / p)
        if f_norm <= zero_level:
            return x
        if f_norm - lp_dual_bound(basis, b, res, p) <= tol * f_norm:
            return _newton_polish(a, b, x, p, theta)
        w = np.maximum(np.abs(res), theta) ** (p - 2.0)
        sw = np.sqrt(w)
        x_irls = np.linalg.lstsq(a * sw[:, None], b * sw, rcond=None)[0]
        step = x_irls - x
        accepted = False
        for t in (1.0 / (p - 1.0), 1.0):
            cand = x + t * step
            fc = objective(cand)
            if fc <= fx:
                accepted = True
                break
        if not accepted:
            t = 0.5
            while t > 1e-12:
                cand = x + t * step
                fc = objective(cand)
                if fc <= fx:
                    accepted = True
                    break
                t *= 0.5
        if not accepted:
            # no descent left at working precision
            gap = f_norm - lp_dual_bound(basis, b, res, p)
            if gap <= max(tol, 1e-12) * f_norm * 10:
                return _newton_polish(a, b, x, p, theta)
            raise NoConvergence("IRLS stalled before reaching the duality-gap tolerance")
        x, fx = cand, fc
        if history is not None:
            history.append(fx ** (1 / p))
    raise NoConvergence(f"IRLS did not converge in {max_iter} iterations")


def _lp_gradient(a, res, p):
    return a.T @ (np.sign(res) * np.abs(res) ** (p - 1.0))


def _newton_polish(a, b, x, p, theta, steps=5):
    """A few Newton steps on the gradient of ``||Ax - b||_p^p``.

    Objective values stall at ~sqrt(machine eps) accuracy in x; the gradient
    keeps resolving x to near machine precision. Steps are kept only while
    the gradient norm shrinks and the objective does not grow.
    """
    res = a @ x - b
    fx = lp_norm_pow(res, p)
    gx = np.linalg.norm(_lp_gradient(a, res, p))
    for _ in range(steps):
        if gx == 0.0:
            break
        h = (p - 1.0) * np.maximum(np.abs(res), theta) ** (p - 2.0)
        try:
            step = np.linalg.solve(a.T @ (a * h[:, None]), _lp_gradient(a, res, p))
        except np.linalg.LinAlgError:
            break
        cand = x - step
        cres = a @ cand - b
        fc = lp_norm_pow(cres, p)
        gc = np.linalg.norm(_lp_gradient(a, cres, p))
        if not (gc < gx and fc <= fx * (1 + 4e-16)):
            break
        x, res, fx, gx = cand, cres, fc, gc
    return x


def round_to_grid(m, precision):
    """Round entries to the nearest multiple of ``1/precision`` (ties to even).

    For a square input that rounding makes singular, ``k/precision`` is added
    to the diagonal for the smallest k >= 1 restoring full rank.
    """
    if precision < 1:
        raise ValueError("precision must be >= 1")
    m = np.asarray(m, dtype=float)
    out = np.rint(m * precision) / precision
    if out.ndim == 2 and out.shape[0] == out.shape[1] and out.shape[0] > 0:
        if np.linalg.matrix_rank(out) < out.shape[0]:
            n = out.shape[0]
            for k in range(1, 1 << 20):
                cand = out + np.eye(n) * (k / precision)
                if np.linalg.matrix_rank(cand) == n:
                    return cand
    return out


def on_grid(m, precision, tol=1e-6):
    """True if every entry times ``precision`` is an integer up to float round-off."""
    m = np.asarray(m, dtype=float)
    scaled = m * precision
    return bool(np.all(np.abs(scaled - np.rint(scaled)) <= tol))


def bits_per_entry(magnitude, precision):
    """``ceil(log2(2*M*P + 1))`` bits for a grid value bounded by M."""
    levels = 2 * int(math.ceil(magnitude * precision)) + 1
    return max(0, (levels - 1).bit_length()) if levels > 1 else 0


def write_matrix(path, m, precision, magnitude=None):
    """Write ``n d M P`` then ``n*d`` integer numerators over P.

    Vectors are written as ``n x 1`` matrices.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    n, d = m.shape
    if magnitude is None:
        magnitude = float(np.max(np.abs(m))) if m.size else 0.0
    nums = np.rint(m * precision).astype(np.int64)
    lines = [f"{n} {d} {magnitude!r} {int(precision)}"]
    lines.extend(" ".join(str(v) for v in row) for row in nums)
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path):
    """Inverse of :func:`write_matrix`; returns ``(matrix, M, P)``."""
    tokens = Path(path).read_text().split()
    if len(tokens) < 4:
        raise ValueError(f"{path}: truncated header")
    n, d = int(tokens[0]), int(tokens[1])
    magnitude, precision = float(tokens[2]), int(tokens[3])
    body = tokens[4:]
    if len(body) != n * d:
        raise ValueError(f"{path}: expected {n * d} entries, found {len(body)}")
    nums = np.array([int(t) for t in body], dtype=np.int64).reshape(n, d)
    return nums / precision, magnitude, precision


def read_vector(path):
    m, magnitude, precision = read_matrix(path)
    if m.shape[1] != 1:
        raise ValueError(f"{path}: not a vector file")
    return m[:, 0], magnitude, precision
