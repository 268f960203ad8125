"""Coordinator-model simulator with bit-exact message accounting.

Party 0 is the coordinator; servers are numbered ``1..s``. Every payload is
quantized to the grid ``1/P`` before delivery and charged
``entries * ceil(log2(2*M*P + 1))`` bits, where M bounds the payload's
magnitude.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadParam, SketchFailure, TopologyViolation
from .linalg import bits_per_entry

COORDINATOR = 0


@dataclass
class Party:
    id: int
    state: dict = field(default_factory=dict)

    @property
    def is_coordinator(self):
        return self.id == COORDINATOR


@dataclass(frozen=True)
class Message:
    round: int
    src: int
    dst: int
    entries: int
    magnitude: float
    precision: float
    bits: int
    stage: str = ""
    digest: str = ""


def quantize(payload, precision):
    arr = np.atleast_1d(np.asarray(payload, dtype=float))
    return np.rint(arr * precision) / precision


def message_bits(entries, magnitude, precision):
    if entries == 0:
        return 0
    return entries * bits_per_entry(magnitude, precision)


class Transcript:
    """Append-only message log with running per-round/party/stage totals."""

    def __init__(self, s, precision):
        if s < 1:
            raise BadParam("need at least one server")
        self.s = s
        self.precision = float(precision)
        self.messages = []
        self.by_round = {}
        self.by_party = {}
        self.by_stage = {}
        self.total_bits = 0

    def _append(self, msg):
        self.messages.append(msg)
        self.total_bits += msg.bits
        self.by_round[msg.round] = self.by_round.get(msg.round, 0) + msg.bits
        self.by_stage[msg.stage] = self.by_stage.get(msg.stage, 0) + msg.bits
        for pid in (msg.src, msg.dst):
            self.by_party[pid] = self.by_party.get(pid, 0) + msg.bits

    def send(self, src, dst, payload, round, stage="", magnitude=None):
        """Quantize, charge and log one message; returns the delivered payload.

        ``magnitude`` is the stage's declared bound; it is asserted against
        the quantized payload. Without it the bound is ``max(1, max|x|)``.
        """
        if src == dst:
            raise TopologyViolation("party cannot message itself")
        if src != COORDINATOR and dst != COORDINATOR:
            raise TopologyViolation(f"server {src} -> server {dst} is not allowed")
        for pid in (src, dst):
            if not 0 <= pid <= self.s:
                raise TopologyViolation(f"unknown party {pid}")
        shape = np.shape(payload)
        q = quantize(payload, self.precision)
        actual = float(np.max(np.abs(q))) if q.size else 0.0
        if magnitude is None:
            magnitude = max(1.0, actual)
        elif actual > magnitude:
            raise ValueError(f"payload magnitude {actual} exceeds declared bound {magnitude}")
        bits = message_bits(q.size, magnitude, self.precision)
        digest = hashlib.sha256(q.tobytes()).hexdigest()[:16]
        self._append(Message(round, src, dst, q.size, magnitude, self.precision,
                             bits, stage, digest))
        return q.reshape(shape) if shape else q[0]

    def broadcast(self, payload, round, stage="", magnitude=None):
        """Coordinator to every server; returns the (single) delivered payload."""
        out = None
        for dst in range(1, self.s + 1):
            out = self.send(COORDINATOR, dst, payload, round, stage, magnitude)
        return out

    def stage_bits(self, stage):
        return self.by_stage.get(stage, 0)

    def recompute_total(self):
        return sum(message_bits(m.entries, m.magnitude, m.precision) for m in self.messages)

    def serialize(self):
        """``round from to entries bits`` per message, then a summary block."""
        lines = [f"{m.round} {m.src} {m.dst} {m.entries} {m.bits}" for m in self.messages]
        lines.append(f"# total {self.total_bits}")
        for stage in sorted(self.by_stage):
            lines.append(f"# stage {stage or '-'} {self.by_stage[stage]}")
        for rnd in sorted(self.by_round):
            lines.append(f"# round {rnd} {self.by_round[rnd]}")
        for pid in sorted(self.by_party):
            lines.append(f"# party {pid} {self.by_party[pid]}")
        return "\n".join(lines) + "\n"

    def digest(self):
        """Hash over the serialization and every payload digest."""
        h = hashlib.sha256(self.serialize().encode())
        for m in self.messages:
            h.update(f"{m.stage}:{m.digest}".encode())
        return h.hexdigest()


def parse_transcript(text):
    """Records ``(round, src, dst, entries, bits)`` from :meth:`Transcript.serialize`."""
    out = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        rnd, src, dst, entries, bits = (int(t) for t in line.split())
        out.append((rnd, src, dst, entries, bits))
    return out


def map_servers(fn, items, workers=1):
    """``[fn(i, item) for ...]`` with servers optionally run in parallel.

    Results come back in server order, so the caller's message log stays
    canonical regardless of ``workers``.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(i, it) for i, it in enumerate(items, start=1)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i, it) for i, it in enumerate(items, start=1)]
        return [f.result() for f in futures]


def run_rounds(parties, step, rounds, transcript, seed=0, workers=1):
    """Barrier-synchronous execution of a message-passing protocol.

    ``step(party, inbox, round, seed)`` returns a list of ``(dst, payload)``
    or ``(dst, payload, stage)`` tuples. Messages sent in round k are
    delivered at the start of round k+1. Within a round, outgoing messages
    are logged in party-id order.
    """
    parties = sorted(parties, key=lambda p: p.id)
    if sum(p.is_coordinator for p in parties) != 1:
        raise TopologyViolation("exactly one coordinator is required")
    inboxes = {p.id: [] for p in parties}

    def run_one(_, party):
        return step(party, inboxes[party.id], rnd, seed)

    for rnd in range(rounds):
        outgoing = map_servers(run_one, parties, workers)
        nxt = {p.id: [] for p in parties}
        for party, sends in zip(parties, outgoing):
            for item in sends or ():
                dst, payload = item[0], item[1]
                stage = item[2] if len(item) > 2 else ""
                delivered = transcript.send(party.id, dst, payload, rnd, stage)
                nxt[dst].append((party.id, delivered))
        inboxes = nxt
    return transcript


@dataclass
class ShardSet:
    """Additive integer shares of ``(A, b)`` held by ``s`` servers."""

    a_shards: list
    b_shards: list
    bound: float

    @property
    def s(self):
        return len(self.a_shards)

    def aggregate(self):
        a = np.sum(self.a_shards, axis=0)
        b = np.sum(self.b_shards, axis=0)
        return a, b


def shard(a, b, s, seed, bound=None, strict=False):
    """Split integer ``(a, b)`` into ``s`` additive shares.

    The first s-1 shares are uniform on ``{-M..M}``; the last makes the sum
    exact. With ``strict=True`` every share is rejection-sampled into
    ``{-M..M}`` entrywise.
    """
    if s < 1:
        raise BadParam("s must be >= 1")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(a == np.rint(a)) and np.all(b == np.rint(b))):
        raise BadParam("shard() expects integer-valued input")
    if bound is None:
        bound = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    m = int(math.floor(bound))
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 11])
    total = np.concatenate([a.ravel(), b.ravel()])
    shares = rng.integers(-m, m + 1, size=(s - 1, total.size)).astype(float)
    last = total - shares.sum(axis=0)
    if strict and s > 1:
        bad = np.abs(last) > m
        while np.any(bad):
            idx = np.flatnonzero(bad)
            shares[:, idx] = rng.integers(-m, m + 1, size=(s - 1, idx.size))
            last[idx] = total[idx] - shares[:, idx].sum(axis=0)
            bad = np.abs(last) > m
    rows = np.vstack([shares, last[None, :]])
    na = a.size
    a_shards = [row[:na].reshape(a.shape) for row in rows]
    b_shards = [row[na:].reshape(b.shape) for row in rows]
    return ShardSet(a_shards, b_shards, float(bound))


def derive_seed(seed, *tags):
    """Independent 63-bit seed for a named sub-stream of ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *tags])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def run_with_retries(run, shards, cfg, retries=3):
    """Call ``run(shards, cfg)``, reseeding on SketchFailure.

    Retry k uses ``derive_seed(cfg.seed, 1000 + k)``. Returns
    ``(result, retries_used)``; re-raises after the last attempt.
    """
    for k in range(retries + 1):
        attempt = cfg if k == 0 else replace(cfg, seed=derive_seed(cfg.seed, 1000 + k))
        try:
            return run(shards, attempt), k
        except SketchFailure:
            if k == retries:
                raise
