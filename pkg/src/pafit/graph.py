"""Preferential attachment with fitness: the growth simulator.

A new vertex arrives at every step, draws a fitness from Q and attaches to
an existing vertex chosen with probability proportional to
``fitness * degree``.  Time 0 is a single vertex with a self-loop (degree
2), so after ``n`` steps there are ``n + 1`` vertices and the degrees sum to
``2n + 2``.

Selection uses a sum tree over ``f_v * d_v``; the step loop is compiled with
numba.  Random numbers are drawn in fixed-size blocks so that a run is a
pure function of (model, seed, n), independent of the checkpoint schedule.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .fitness import FitnessModel
from .sumtree import REBUILD_EVERY, capacity_for, tree_add, tree_find, tree_rebuild, tree_set

BLOCK = 1 << 16
EDGE_LOG_LIMIT = 100_000


@njit(cache=True)
def _advance(tree, cap, fitness, degree, atom, nv, new_f, new_atom, u, targets,
             since_rebuild, rebuild_every):
    """Run ``len(u)`` steps; returns (nv, zero_weight_events, since_rebuild)."""
    zero_events = 0
    for s in range(u.shape[0]):
        total = tree[1]
        if total <= 0.0:
            target = int(u[s] * nv)
            if target >= nv:
                target = nv - 1
            zero_events += 1
        else:
            target = tree_find(tree, cap, u[s] * total)
        targets[s] = target
        degree[target] += 1
        if fitness[target] != 0.0:
            tree_add(tree, cap, target, fitness[target])
        v = nv
        fitness[v] = new_f[s]
        atom[v] = new_atom[s]
        degree[v] = 1
        tree_set(tree, cap, v, new_f[s])
        nv += 1
        since_rebuild += 2
        if since_rebuild >= rebuild_every:
            tree_rebuild(tree, cap)
            since_rebuild = 0
    return nv, zero_events, since_rebuild


@dataclass
class AttachmentRecord:
    step: int
    target: int
    target_degree_before: int
    target_atom: int
    target_fitness: float
    new_vertex: int
    new_fitness: float
    new_atom: int
    zero_weight: bool


@dataclass
class Snapshot:
    """Collector values at one checkpoint.

    ``M`` maps a bucket (atom index for discrete models, grid cell for
    continuous ones) to the number of edge endpoints at vertices in that
    bucket; ``N`` maps ``(bucket, degree)`` to a vertex count.
    """

    n: int
    M: dict
    N: dict
    vertices: dict
    max_fitness: float
    zero_weight_events: int

    def T(self, bucket, k):
        """Degree-weighted tail ``sum_{k' >= k} k' N[bucket, k']``."""
        return sum(kk * c for (b, kk), c in self.N.items() if b == bucket and kk >= k)

    def L(self, k):
        """Number of vertices of degree ``k`` over all buckets."""
        return sum(c for (_, kk), c in self.N.items() if kk == k)

    def degree_counts(self, bucket):
        out = {kk: c for (b, kk), c in self.N.items() if b == bucket}
        return dict(sorted(out.items()))


@dataclass
class EmpiricalSummary:
    model: dict
    seed: int
    discrete: bool
    edges: list | None
    snapshots: list
    trajectories: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    def at(self, n) -> Snapshot:
        for s in self.snapshots:
            if s.n == n:
                return s
        raise KeyError(f"no checkpoint at n={n}")

    def bucket_label(self, b):
        if self.discrete:
            return str(b)
        lo, hi = self.edges[b], self.edges[b + 1]
        return f"[{lo:g},{hi:g}]" if b == len(self.edges) - 2 else f"[{lo:g},{hi:g})"

    def M_interval(self, a, b, snapshot=None):
        """Endpoint count over grid cells contained in ``[a, b]``.

        ``a`` and ``b`` must be grid edges (discrete models: atom indices).
        """
        snap = snapshot or self.final
        if self.discrete:
            return sum(c for k, c in snap.M.items() if a <= k <= b)
        e = np.asarray(self.edges)
        ia = int(np.argmin(np.abs(e - a)))
        ib = int(np.argmin(np.abs(e - b)))
        if not (math.isclose(e[ia], a, abs_tol=1e-12) and math.isclose(e[ib], b, abs_tol=1e-12)):
            raise ValueError(f"[{a}, {b}] is not aligned with the summary grid")
        return sum(snap.M.get(c, 0) for c in range(ia, ib))

    # -- serialisation ----------------------------------------------------

    def m_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["checkpoint", "bucket", "M", "n", "M_over_n"])
        for s in self.snapshots:
            for b in sorted(s.M):
                w.writerow([s.n, self.bucket_label(b), s.M[b], s.n, repr(s.M[b] / s.n if s.n else 0.0)])
        return buf.getvalue()

    def n_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["checkpoint", "bucket", "degree", "N"])
        for s in self.snapshots:
            for (b, k) in sorted(s.N):
                w.writerow([s.n, self.bucket_label(b), k, s.N[(b, k)]])
        return buf.getvalue()

    def trajectory_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["vertex", "t", "degree"])
        for v in sorted(self.trajectories):
            for t, d in self.trajectories[v]:
                w.writerow([v, t, d])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "model": self.model,
            "seed": self.seed,
            "discrete": self.discrete,
            "edges": self.edges,
            "flags": self.flags,
            "snapshots": [{
                "n": s.n,
                "M": {str(k): v for k, v in sorted(s.M.items())},
                "N": [[b, k, c] for (b, k), c in sorted(s.N.items())],
                "vertices": {str(k): v for k, v in sorted(s.vertices.items())},
                "max_fitness": s.max_fitness,
                "zero_weight_events": s.zero_weight_events,
            } for s in self.snapshots],
            "trajectories": {str(v): [[t, d] for t, d in tr] for v, tr in sorted(self.trajectories.items())},
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        snaps = [Snapshot(
            n=int(s["n"]),
            M={int(k): int(v) for k, v in s["M"].items()},
            N={(int(b), int(k)): int(c) for b, k, c in s["N"]},
            vertices={int(k): int(v) for k, v in s["vertices"].items()},
            max_fitness=float(s["max_fitness"]),
            zero_weight_events=int(s["zero_weight_events"]),
        ) for s in d["snapshots"]]
        if not snaps:
            raise ValueError("summary has no snapshots")
        return cls(model=d["model"], seed=int(d["seed"]), discrete=bool(d["discrete"]),
                   edges=d["edges"], snapshots=snaps,
                   trajectories={int(v): [(int(t), int(k)) for t, k in tr]
                                 for v, tr in d["trajectories"].items()},
                   flags=d.get("flags", {}))


def default_grid(model, cells=100):
    if model.is_bounded:
        return np.linspace(0.0, model.h, cells + 1)
    qs = np.linspace(0.0, 1.0, cells + 1)[:-1]
    return np.append(model.ppf(qs), np.inf)


class GrowthState:
    """Mutable state of one growth process."""

    def __init__(self, model: FitnessModel, seed, *, grid=None, capacity=1024, edge_log=False):
        self.model = model
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.discrete = model.is_discrete
        self.grid = None if self.discrete else np.asarray(
            grid if grid is not None else default_grid(model), dtype=float)
        cap = capacity_for(max(capacity, 2))
        self.cap = cap
        self.tree = np.zeros(2 * cap)
        self.fitness = np.zeros(cap)
        self.degree = np.zeros(cap, dtype=np.int64)
        self.atom = np.zeros(cap, dtype=np.int64)
        self.n = 0
        self.nv = 0
        self.zero_weight_events = 0
        self._since_rebuild = 0
        self._buf_u = np.zeros(0)
        self._buf_f = np.zeros(0)
        self._buf_a = np.zeros(0, dtype=np.int64)
        self._buf_pos = 0
        self.edge_log = [] if edge_log else None
        self.tracked = {}
        self._window_rule = None
        # root vertex with a self-loop
        f0, a0 = model.sample(self.rng)
        self.fitness[0] = f0
        self.atom[0] = a0 or 0
        self.degree[0] = 2
        tree_set(self.tree, self.cap, 0, 2.0 * f0)
        self.nv = 1
        if self.edge_log is not None:
            self.edge_log.append((0, 0))

    # -- storage ------------------------------------------------------------

    def _ensure(self, extra):
        need = self.nv + extra
        if need <= self.cap:
            return
        cap = capacity_for(need)
        for name in ("fitness", "degree", "atom"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=old.dtype)
            new[:self.nv] = old[:self.nv]
            setattr(self, name, new)
        tree = np.zeros(2 * cap)
        tree[cap:cap + self.nv] = self.fitness[:self.nv] * self.degree[:self.nv]
        tree_rebuild(tree, cap)
        self.tree, self.cap = tree, cap
        self._since_rebuild = 0

    def _draw(self, m):
        """Next ``m`` (uniform, fitness, atom) triples from the block stream."""
        out_u, out_f, out_a = [], [], []
        while m > 0:
            if self._buf_pos >= self._buf_u.size:
                self._buf_u = self.rng.random(BLOCK)
                self._buf_f, self._buf_a = self.model.sample_many(self.rng, BLOCK)
                self._buf_a = np.asarray(self._buf_a, dtype=np.int64)
                self._buf_pos = 0
            take = min(m, self._buf_u.size - self._buf_pos)
            sl = slice(self._buf_pos, self._buf_pos + take)
            out_u.append(self._buf_u[sl])
            out_f.append(self._buf_f[sl])
            out_a.append(self._buf_a[sl])
            self._buf_pos += take
            m -= take
        return np.concatenate(out_u), np.concatenate(out_f), np.concatenate(out_a)

    # -- dynamics -----------------------------------------------------------

    @property
    def total_weight(self):
        return float(self.tree[1])

    def advance(self, m):
        """Run ``m`` steps through the compiled loop."""
        if m <= 0:
            return np.zeros(0, dtype=np.int64)
        self._ensure(m)
        u, f, a = self._draw(m)
        if self._window_rule is not None:
            self._register_window(f, self.nv)
        targets = np.empty(m, dtype=np.int64)
        nv, zeros, self._since_rebuild = _advance(
            self.tree, self.cap, self.fitness, self.degree, self.atom, self.nv,
            f, a, u, targets, self._since_rebuild, REBUILD_EVERY)
        self.nv = nv
        self.n += m
        self.zero_weight_events += zeros
        if self.edge_log is not None:
            if self.n > EDGE_LOG_LIMIT:
                raise ValueError(f"edge logging is limited to n <= {EDGE_LOG_LIMIT}")
            first = self.nv - m
            self.edge_log.extend(zip(range(first, self.nv), targets.tolist()))
        return targets

    def step(self) -> AttachmentRecord:
        """One step; returns what happened."""
        self._ensure(1)
        # peek the target before the kernel mutates degrees
        zeros_before = self.zero_weight_events
        degree_snapshot = None
        u, f, a = self._draw(1)
        if self._window_rule is not None:
            self._register_window(f, self.nv)
        targets = np.empty(1, dtype=np.int64)
        total = self.tree[1]
        if total <= 0.0:
            target = min(int(u[0] * self.nv), self.nv - 1)
        else:
            target = int(tree_find(self.tree, self.cap, u[0] * total))
        degree_snapshot = int(self.degree[target])
        nv, zeros, self._since_rebuild = _advance(
            self.tree, self.cap, self.fitness, self.degree, self.atom, self.nv,
            f, a, u, targets, self._since_rebuild, REBUILD_EVERY)
        assert targets[0] == target
        self.nv = nv
        self.n += 1
        self.zero_weight_events += zeros
        if self.edge_log is not None:
            self.edge_log.append((self.nv - 1, target))
        return AttachmentRecord(
            step=self.n, target=target, target_degree_before=degree_snapshot,
            target_atom=int(self.atom[target]), target_fitness=float(self.fitness[target]),
            new_vertex=self.nv - 1, new_fitness=float(f[0]), new_atom=int(a[0]),
            zero_weight=self.zero_weight_events > zeros_before)

    # -- tracking -----------------------------------------------------------

    def track_first(self, K):
        for v in range(K):
            self.tracked.setdefault(v, [])

    def track_window(self, lo, hi, K):
        """Track the first ``K`` vertices (by birth) with fitness in ``[lo, hi]``."""
        have = [v for v in range(self.nv) if lo <= self.fitness[v] <= hi][:K]
        for v in have:
            self.tracked.setdefault(v, [])
        if len(have) < K:
            self._window_rule = [lo, hi, K - len(have)]

    def _register_window(self, f, first_id):
        lo, hi, left = self._window_rule
        hits = np.nonzero((f >= lo) & (f <= hi))[0][:left]
        for i in hits:
            self.tracked.setdefault(int(first_id + i), [])
        self._window_rule[2] -= hits.size
        if self._window_rule[2] <= 0:
            self._window_rule = None

    def _log_tracked(self):
        for v, tr in self.tracked.items():
            if v < self.nv:
                tr.append((self.n, int(self.degree[v])))

    # -- statistics -----------------------------------------------------------

    def buckets(self):
        if self.discrete:
            return self.atom[:self.nv]
        b = np.searchsorted(self.grid, self.fitness[:self.nv], side="right") - 1
        return np.clip(b, 0, self.grid.size - 2)

    def snapshot(self) -> Snapshot:
        nv = self.nv
        b = self.buckets()
        d = self.degree[:nv]
        nb = int(b.max()) + 1
        M = np.bincount(b, weights=d, minlength=nb)
        V = np.bincount(b, minlength=nb)
        dmax = int(d.max()) + 1
        keys, counts = np.unique(b * dmax + d, return_counts=True)
        N = {(int(k // dmax), int(k % dmax)): int(c) for k, c in zip(keys, counts)}
        return Snapshot(
            n=self.n,
            M={int(i): int(round(M[i])) for i in np.nonzero(V)[0]},
            N=N,
            vertices={int(i): int(V[i]) for i in np.nonzero(V)[0]},
            max_fitness=float(self.fitness[:nv].max()),
            zero_weight_events=self.zero_weight_events,
        )

    def mass_in(self, a, b):
        """Current endpoint count at vertices with fitness in ``[a, b]``."""
        f = self.fitness[:self.nv]
        return int(self.degree[:self.nv][(f >= a) & (f <= b)].sum())

    def degree_sum(self):
        return int(self.degree[:self.nv].sum())

    def audit(self):
        w = self.fitness[:self.nv] * self.degree[:self.nv]
        exact = float(w.sum())
        stored = float(self.tree[1])
        tree_rebuild(self.tree, self.cap)
        self._since_rebuild = 0
        return abs(stored - exact) / exact if exact else abs(stored)


def new_growth(model: FitnessModel, seed, **kw) -> GrowthState:
    return GrowthState(model, seed, **kw)


def geometric_schedule(n, base=2.0, start=1):
    """Integer times ``start, start*base, ...`` capped at and including ``n``."""
    out, t = [], float(start)
    while t < n:
        k = int(round(t))
        if not out or k > out[-1]:
            out.append(k)
        t *= base
    out.append(int(n))
    return out


def run(state: GrowthState, n: int, checkpoints=None, track_base=2 ** 0.25) -> EmpiricalSummary:
    """Advance ``n`` steps, snapshotting at ``checkpoints`` (absolute step counts).

    Defaults to powers of two up to the final step.  Tracked vertices log
    their degree on a finer geometric grid.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    end = state.n + n
    cps = sorted(set(checkpoints)) if checkpoints is not None else geometric_schedule(end)
    cps = [c for c in cps if state.n < c <= end]
    if not cps or cps[-1] != end:
        cps.append(end)
    track = set(geometric_schedule(end, track_base)) if state.tracked or state._window_rule else set()
    events = sorted(set(cps) | {t for t in track if t > state.n})
    cpset = set(cps)
    snaps = []
    for t in events:
        state.advance(t - state.n)
        if t in track:
            state._log_tracked()
        if t in cpset:
            snaps.append(state.snapshot())
    return EmpiricalSummary(
        model=state.model.describe(), seed=state.seed, discrete=state.discrete,
        edges=None if state.discrete else [float(x) for x in state.grid],
        snapshots=snaps,
        trajectories={v: list(tr) for v, tr in state.tracked.items()},
        flags={"zero_weight_events": state.zero_weight_events},
    )


def simulate(model, n, seed, *, checkpoints=None, grid=None, track_first=0, track_window=None):
    """Convenience wrapper: fresh state, optional tracking, one run."""
    st = GrowthState(model, seed, grid=grid, capacity=n + 2)
    if track_first:
        st.track_first(track_first)
    if track_window is not None:
        st.track_window(*track_window)
    return run(st, n, checkpoints)
