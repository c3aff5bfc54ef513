"""Truncations, discretisations and monotone couplings.

A countable discrete model with nondecreasing fitnesses is sandwiched
between two finite ones: the *upper* truncation maps every atom beyond
``I`` to fitness 0, the *lower* truncation maps them to the supremum ``h``.
Running the three processes on shared randomness keeps, at every step,

1. the fitness picked in the upper chain <= the original <= the lower one;
2. endpoint counts per class ``i <= I`` ordered lower <= original <= upper;
4. degree-weighted tails ``T_(i,k)`` ordered the same way.

The coupled runners below check these orderings step by step and log any
violation.  For continuous densities, :func:`discretize` builds the
lower-side cell chain and :func:`solve_discretization_lambda` its root.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidVariantError, SolverError
from .fitness import ContinuousDensity, CountableDiscrete, FiniteDiscrete, FitnessModel
from .graph import EmpiricalSummary, Snapshot, geometric_schedule
from .theory import solve_lambda0
from .urn import UrnSpec, discretization_cells, discretization_urn

UPPER, ORIG, LOWER = 0, 1, 2
CHAINS = ("upper", "original", "lower")


# ---------------------------------------------------------------------------
# truncation


@dataclass
class TruncationSpec:
    base: FitnessModel
    I: int
    side: str
    model: FiniteDiscrete
    mapped_mass: float
    class_atom: dict  # class 1..I+1 -> atom index in ``model``

    def to_dict(self):
        return {"base": self.base.describe(), "I": self.I, "side": self.side,
                "fitnesses": self.model.fitnesses.tolist(), "probs": self.model.probs.tolist(),
                "mapped_mass": self.mapped_mass}


def _first_atoms(model, I):
    if isinstance(model, FiniteDiscrete):
        m = min(I, model.J)
        return model.fitnesses[:m].copy(), model.probs[:m].copy()
    if isinstance(model, CountableDiscrete):
        f, q = model.atoms(I)
        return np.asarray(f, dtype=float), np.asarray(q, dtype=float)
    raise InvalidVariantError("truncation needs a discrete model; use discretize for densities")


def truncate_spec(model: FitnessModel, I: int, side: str) -> TruncationSpec:
    """Map atoms beyond ``I`` to 0 (``side='upper'``) or to ``h`` (``side='lower'``)."""
    if side not in ("upper", "lower"):
        raise DomainError(f"side must be 'upper' or 'lower', got {side!r}")
    if I < 1:
        raise DomainError("I must be >= 1")
    if not model.is_discrete:
        raise InvalidVariantError("truncation needs a discrete model; use discretize for densities")
    f, q = _first_atoms(model, I)
    tail = float(model.mass_beyond(I))
    target = 0.0 if side == "upper" else model.h
    pairs = {}
    for x, p in zip(f, q):
        pairs[float(x)] = pairs.get(float(x), 0.0) + float(p)
    if tail > 0:
        pairs[target] = pairs.get(target, 0.0) + tail
    xs = sorted(pairs)
    ps = np.array([pairs[x] for x in xs])
    ps = ps / ps.sum()
    out = FiniteDiscrete(xs, ps, name=f"{model.name}-{side}{I}",
                         params={"I": I, "side": side, **model.params}, internal=True)
    index = {x: k + 1 for k, x in enumerate(xs)}
    cls = {c: index[float(f[c - 1])] for c in range(1, len(f) + 1)}
    if tail > 0:
        cls[len(f) + 1] = index[target]
    return TruncationSpec(model, I, side, out, tail, cls)


def truncate(model: FitnessModel, I: int, side: str) -> FiniteDiscrete:
    return truncate_spec(model, I, side).model


# ---------------------------------------------------------------------------
# coupled runs


def _check_monotone(model, I):
    if not model.is_discrete or not model.is_bounded:
        raise InvalidVariantError("coupled runs need a bounded discrete model")
    f, _ = _first_atoms(model, I + 1)
    if np.any(np.diff(f) < 0):
        raise InvalidVariantError("coupled runs need nondecreasing fitnesses f_1 <= f_2 <= ...")


@dataclass
class CoupledRun:
    mode: str
    I: int
    n: int
    seed: int
    summaries: dict
    violations: list
    zero_weight_events: int
    steps_checked: int

    @property
    def ok(self):
        return not self.violations

    def violations_jsonl(self):
        return "".join(json.dumps(v, sort_keys=True) + "\n" for v in self.violations)

    def to_dict(self):
        return {"mode": self.mode, "I": self.I, "n": self.n, "seed": self.seed,
                "violations": len(self.violations), "zero_weight_events": self.zero_weight_events,
                "steps_checked": self.steps_checked}


class _Coupled:
    """Three attachment chains on one vertex set.

    Vertices carry the original atom; class ``c = min(atom, I + 1)``.  Each
    chain keeps its own degrees, per-class endpoint counts and, per class, a
    list with one entry per endpoint so that degree-proportional picks are
    O(1).
    """

    def __init__(self, model, I, seed, capacity):
        self.model, self.I, self.h = model, I, float(model.h)
        self.rng = np.random.default_rng(seed)
        f, _ = _first_atoms(model, I)
        self.fc = np.zeros(I + 2)
        self.fc[1:I + 1] = f
        self.cap = capacity
        self.atom = np.zeros(capacity, dtype=np.int64)
        self.fit = np.zeros(capacity)
        self.cls = np.zeros(capacity, dtype=np.int64)
        self.deg = np.zeros((3, capacity), dtype=np.int64)
        self.M = np.zeros((3, I + 2), dtype=np.int64)
        self.ep = [[[] for _ in range(I + 2)] for _ in range(3)]
        self.Nd = np.zeros((3, I + 2, 64), dtype=np.int64)  # [chain, class, degree]
        self.T = np.zeros((3, I + 2, 64), dtype=np.int64)  # running degree-weighted tails
        self.tail_w = 0.0  # sum of f_v d_v over tail vertices in the original chain
        self.nv = 0
        self.n = 0
        self.zero_events = 0
        self._buf = np.zeros(0)
        self._bpos = 0
        self._fbuf = (np.zeros(0), np.zeros(0, np.int64))
        self._fpos = 0
        f0, a0 = self._newcomer()
        self._add_vertex(f0, a0, 2)

    # randomness in blocks, order independent of branch taken
    def _u(self):
        if self._bpos >= self._buf.size:
            self._buf = self.rng.random(4096)
            self._bpos = 0
        self._bpos += 1
        return float(self._buf[self._bpos - 1])

    def _newcomer(self):
        if self._fpos >= self._fbuf[0].size:
            self._fbuf = self.model.sample_many(self.rng, 4096)
            self._fpos = 0
        self._fpos += 1
        return float(self._fbuf[0][self._fpos - 1]), int(self._fbuf[1][self._fpos - 1])

    def chain_fitness(self, x, v):
        c = self.cls[v]
        if c <= self.I:
            return self.fc[c]
        return (0.0, self.fit[v], self.h)[x]

    def _add_vertex(self, f, a, d):
        v = self.nv
        self.atom[v], self.fit[v] = a, f
        c = min(a, self.I + 1)
        self.cls[v] = c
        for x in range(3):
            self.deg[x, v] = d
            self.M[x, c] += d
            self.ep[x][c].extend([v] * d)
            self._grow(d)
            self.Nd[x, c, d] += 1
            self.T[x, c, 1:d + 1] += d
        if c > self.I:
            self.tail_w += f * d
        self.nv += 1
        return v

    def bump(self, x, v):
        c = self.cls[v]
        d = self.deg[x, v]
        self.deg[x, v] = d + 1
        self.M[x, c] += 1
        self.ep[x][c].append(v)
        self._grow(d + 1)
        self.Nd[x, c, d] -= 1
        self.Nd[x, c, d + 1] += 1
        self.T[x, c, 1:d + 1] += 1
        self.T[x, c, d + 1] += d + 1
        if x == ORIG and c > self.I:
            self.tail_w += self.fit[v]

    # -- weights and class laws --------------------------------------------

    def weights(self):
        inner = self.M[:, 1:self.I + 1] @ self.fc[1:self.I + 1]
        return np.array([inner[0], inner[1] + self.tail_w, inner[2] + self.h * self.M[2, self.I + 1]])

    def class_probs(self, W):
        """rho[x, c] for classes c <= I."""
        rho = np.zeros((3, self.I + 1))
        for x in range(3):
            if W[x] > 0:
                rho[x, 1:] = self.fc[1:self.I + 1] * self.M[x, 1:self.I + 1] / W[x]
        return rho

    # -- vertex picks --------------------------------------------------------

    def pick_in_class(self, x, c, u=None):
        lst = self.ep[x][c]
        return lst[int((self._u() if u is None else u) * len(lst))]

    def pick_tail_original(self):
        lst = self.ep[ORIG][self.I + 1]
        while True:
            v = lst[int(self._u() * len(lst))]
            if self._u() * self.h <= self.fit[v]:
                return v

    def pick_own(self, x, u, W):
        """Sample chain ``x``'s marginal; uniform vertex when its weight is zero."""
        if W[x] <= 0:
            return min(int(u * self.nv), self.nv - 1)
        rho = self.class_probs(W)[x]
        c = int(np.searchsorted(np.cumsum(rho[1:]), u, side="right")) + 1
        if c <= self.I and self.M[x, c] > 0 and rho[c] > 0:
            return self.pick_in_class(x, c)
        if x == ORIG:
            return self.pick_tail_original()
        return self.pick_in_class(x, self.I + 1)

    def _grow(self, d):
        if d >= self.Nd.shape[2]:
            for name in ("Nd", "T"):
                old = getattr(self, name)
                new = np.zeros(old.shape[:2] + (2 * d,), dtype=np.int64)
                new[:, :, :old.shape[2]] = old
                setattr(self, name, new)

    def tails(self):
        """T[x, c, k] = sum over degrees d >= k of d N[x, c, d], recomputed."""
        w = self.Nd * np.arange(self.Nd.shape[2])
        return np.cumsum(w[:, :, ::-1], axis=2)[:, :, ::-1]

    def N(self, x):
        cs, ds = np.nonzero(self.Nd[x])
        return {(int(c), int(d)): int(self.Nd[x, c, d]) for c, d in zip(cs, ds)}


def _class_branch(st, W, rho, u):
    """The three-branch split over classes; returns per-chain class choices."""
    lo, mid, hi = rho[LOWER, 1:], rho[ORIG, 1:], rho[UPPER, 1:]
    s1, s2 = lo.sum(), mid.sum()
    tail = st.I + 1
    if u < s1:
        c = int(np.searchsorted(np.cumsum(lo), u, side="right")) + 1
        return c, c, c, 1
    if u < s2:
        c = int(np.searchsorted(np.cumsum(np.maximum(mid - lo, 0)), u - s1, side="right")) + 1
        return c, c, tail, 2
    c = int(np.searchsorted(np.cumsum(np.maximum(hi - mid, 0)), u - s2, side="right")) + 1
    return min(c, st.I), tail, tail, 3


def _vertex_for_class(st, x, c, u=None):
    if c <= st.I:
        return st.pick_in_class(x, c, u)
    if x == ORIG:
        return st.pick_tail_original()
    return st.pick_in_class(x, c, u)


def _invert_degree(st, x, c, U):
    """Degree D with P(D >= k | class c) = T_(c,k) / M_c, from a shared uniform."""
    row = st.Nd[x, c]
    degs = np.nonzero(row)[0]
    T = np.cumsum((row * np.arange(row.size))[::-1])[::-1]
    M = st.M[x, c]
    D = int(degs[T[degs] > U * M].max(initial=degs[0]))
    idx = np.nonzero((st.cls[:st.nv] == c) & (st.deg[x, :st.nv] == D))[0]
    return int(idx[int(st._u() * idx.size)])


def _step(st, mode):
    W = st.weights()
    u = st._u()
    picks = [None, None, None]
    if W[UPPER] <= 0 or W[ORIG] <= 0 or W[LOWER] <= 0:
        # a chain with zero total weight attaches uniformly; the others follow
        # their own law (all mass then sits outside classes <= I)
        st.zero_events += 1
        for x in range(3):
            picks[x] = st.pick_own(x, u, W)
        branch = 0
    elif mode == "vertex":
        vu = st.pick_own(UPPER, u, W)
        picks[UPPER] = vu
        cu = st.cls[vu]
        if cu <= st.I and st._u() * st.deg[UPPER, vu] * W[ORIG] < st.deg[ORIG, vu] * W[UPPER]:
            picks[ORIG] = vu
            if st._u() * st.deg[ORIG, vu] * W[LOWER] < st.deg[LOWER, vu] * W[ORIG]:
                picks[LOWER] = vu
            else:
                picks[LOWER] = st.pick_in_class(LOWER, st.I + 1)
        else:
            picks[ORIG] = st.pick_tail_original()
            picks[LOWER] = st.pick_in_class(LOWER, st.I + 1)
        branch = 0
    else:
        rho = st.class_probs(W)
        cU, cF, cL, branch = _class_branch(st, W, rho, u)
        classes = (cU, cF, cL)
        if mode == "inversion":
            U = st._u()
            for x in range(3):
                if classes[x] <= st.I:
                    picks[x] = _invert_degree(st, x, classes[x], U)
                else:
                    picks[x] = _vertex_for_class(st, x, classes[x])
        else:
            # one uniform for all three picks so identical chains stay identical
            uv = st._u()
            for x in range(3):
                picks[x] = _vertex_for_class(st, x, classes[x], uv)
    chosen_f = [st.chain_fitness(x, picks[x]) for x in range(3)]
    for x in range(3):
        st.bump(x, picks[x])
    f, a = st._newcomer()
    v = st._add_vertex(f, a, 1)
    st.n += 1
    new_f = [st.chain_fitness(x, v) for x in range(3)]
    return chosen_f, new_f, picks, branch


def _digest(st):
    h = hashlib.sha1()
    h.update(st.M.tobytes())
    h.update(st.deg[:, :st.nv].tobytes())
    return h.hexdigest()[:16]


def _check(st, chosen_f, new_f, check_tails, classes=None):
    bad = []
    tol = 1e-15
    if not (chosen_f[UPPER] <= chosen_f[ORIG] + tol and chosen_f[ORIG] <= chosen_f[LOWER] + tol):
        bad.append(("1", {"picked": chosen_f}))
    if not (new_f[UPPER] <= new_f[ORIG] + tol and new_f[ORIG] <= new_f[LOWER] + tol):
        bad.append(("1", {"newcomer": new_f}))
    M = st.M[:, 1:st.I + 1]
    if np.any(M[LOWER] > M[ORIG]) or np.any(M[ORIG] > M[UPPER]):
        bad.append(("2", {"M": M.tolist()}))
    if check_tails:
        # only classes touched this step can change; None means all of them
        cs = sorted(classes) if classes is not None else range(1, st.I + 1)
        for c in cs:
            T = st.T[:, c, 1:]
            broken = (T[LOWER] > T[ORIG]) | (T[ORIG] > T[UPPER])
            if broken.any():
                k = int(np.argmax(broken))
                bad.append(("4", {"class": int(c), "k": k + 1,
                                  "T": [int(T[x, k]) for x in range(3)]}))
    return bad


def _summaries(st, snaps, model):
    out = {}
    for x, name in enumerate(CHAINS):
        out[name] = EmpiricalSummary(model={"chain": name, **model.describe()}, seed=-1,
                                     discrete=True, edges=None, snapshots=snaps[x])
    return out


def _snap(st, x):
    c = np.arange(1, st.I + 2)
    V = np.bincount(st.cls[:st.nv], minlength=st.I + 2)
    return Snapshot(n=st.n, M={int(k): int(st.M[x, k]) for k in c if V[k]},
                    N=st.N(x),
                    vertices={int(k): int(V[k]) for k in c if V[k]},
                    max_fitness=float(max(st.chain_fitness(x, v) for v in range(st.nv))),
                    zero_weight_events=st.zero_events)


def _run(model, I, n, seed, mode, *, check_tails, check_every=1, checkpoints=None):
    _check_monotone(model, I)
    if n < 1:
        raise DomainError("n must be >= 1")
    st = _Coupled(model, I, seed, n + 2)
    cps = set(checkpoints if checkpoints is not None else geometric_schedule(n))
    cps.add(n)
    snaps = [[], [], []]
    violations = []
    checked = 0
    for t in range(1, n + 1):
        chosen_f, new_f, picks, branch = _step(st, mode)
        do_tails = check_tails and (t % check_every == 0 or t in cps)
        touched = {int(st.cls[p]) for p in picks} | {int(st.cls[st.nv - 1])}
        touched = {c for c in touched if c <= I}
        for cond, detail in _check(st, chosen_f, new_f, do_tails,
                                   None if t in cps else touched):
            violations.append({"step": t, "condition": cond, "branch": branch,
                               "picks": [int(p) for p in picks], "digest": _digest(st), **detail})
        checked += 1
        if t in cps:
            if check_tails and not np.array_equal(st.tails()[:, :, 1:], st.T[:, :, 1:]):
                raise AssertionError(f"running tail sums drifted at step {t}")
            for x in range(3):
                snaps[x].append(_snap(st, x))
    return CoupledRun(mode=mode, I=I, n=n, seed=seed, summaries=_summaries(st, snaps, model),
                      violations=violations, zero_weight_events=st.zero_events,
                      steps_checked=checked)


def coupled_triple_run(model, I, n, seed, *, checkpoints=None) -> CoupledRun:
    """Three-branch class coupling; checks fitness and endpoint-count orderings."""
    return _run(model, I, n, seed, "class", check_tails=False, checkpoints=checkpoints)


def coupled_degree_run(model, I, n, seed, *, mode="vertex", check_every=1,
                       checkpoints=None) -> CoupledRun:
    """Coupling that also orders the degree tails ``T_(i,k)``.

    ``mode='vertex'`` (default) proposes one vertex in the upper chain and
    thins it down to the original and lower chains, so every class-``<= I``
    vertex keeps ``deg_lower <= deg_orig <= deg_upper``.  ``mode='inversion'``
    picks classes by the three-branch split and degrees by inverting the
    three conditional degree tails with one shared uniform; that rule is
    kept for comparison and can break the tail ordering.
    """
    if mode not in ("vertex", "inversion"):
        raise DomainError(f"unknown mode {mode!r}")
    return _run(model, I, n, seed, mode, check_tails=True, check_every=check_every,
                checkpoints=checkpoints)


# ---------------------------------------------------------------------------
# discretisation


@dataclass
class DiscretizationSpec:
    base: ContinuousDensity
    I: int
    eps: float
    upper: np.ndarray
    lower: np.ndarray
    masses: np.ndarray
    G: float
    urn: UrnSpec = field(repr=False)

    def to_dict(self):
        return {"base": self.base.describe(), "I": self.I, "eps": self.eps, "G": self.G,
                "masses": self.masses.tolist()}


def discretize(model: FitnessModel, I: int) -> DiscretizationSpec:
    if not isinstance(model, ContinuousDensity):
        raise InvalidVariantError(f"discretize needs a bounded density, got {model.kind}")
    if I < 2:
        raise DomainError("I must be >= 2")
    upper, lower, masses = discretization_cells(model, I)
    return DiscretizationSpec(model, I, model.h / I, upper, lower, masses,
                              float(masses.sum()), discretization_urn(model, I))


@dataclass
class DiscretizationRoot:
    lam: float
    nu: np.ndarray
    residual: float
    nu_sum: float
    G: float
    iterations: int

    def to_dict(self):
        return {"lambda": self.lam, "nu": self.nu.tolist(), "residual": self.residual,
                "nu_sum": self.nu_sum, "G": self.G, "iterations": self.iterations}


def _discr_equation(spec, lam):
    h, eps, G = spec.base.h, spec.eps, spec.G
    s = math.fsum(spec.upper * spec.masses / (lam - spec.lower))
    return s + h * (1.0 + G) * eps / (lam * (lam - (h - eps))) - 1.0


def solve_discretization_lambda(spec: DiscretizationSpec, *, tol=1e-12,
                                max_iter=500) -> DiscretizationRoot:
    """Root of the cell-chain equation on ``(h - eps, inf)`` by bisection."""
    h, eps = spec.base.h, spec.eps
    lo = h - eps
    hi = max(2.0 * h, h + 1.0)
    it = 0
    while _discr_equation(spec, hi) > 0:
        hi *= 2.0
        it += 1
        if it > 200:
            raise SolverError("could not bracket the discretised root", state={"hi": hi})
    lo_val = lo * (1 + 1e-15) + 1e-300
    while hi - lo > tol * hi and it < max_iter:
        mid = 0.5 * (lo + hi)
        if mid <= lo_val or _discr_equation(spec, mid) > 0:
            lo = mid
        else:
            hi = mid
        it += 1
    lam = 0.5 * (lo + hi)
    res = abs(_discr_equation(spec, lam))
    if res > 1e-10:
        raise SolverError(f"discretised root residual {res:.3g} exceeds 1e-10",
                          state={"lambda": lam, "residual": res})
    nu = np.append(lam * spec.masses / (lam - spec.lower),
                   (1.0 + spec.G) * eps / (lam - h + eps))
    return DiscretizationRoot(lam, nu, res, float(math.fsum(nu)), spec.G, it)


# ---------------------------------------------------------------------------
# scans


@dataclass
class ScanTable:
    kind: str
    target: float
    rows: list  # dicts

    def to_csv(self):
        buf = io.StringIO()
        if not self.rows:
            return ""
        w = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def diagnostics(self):
        out = {"kind": self.kind, "target": self.target}
        if self.kind == "truncation":
            up, lo = self.column("upper"), self.column("lower")
            out["upper_nondecreasing"] = bool(np.all(np.diff(up) >= -1e-12))
            out["lower_nonincreasing"] = bool(np.all(np.diff(lo) <= 1e-12))
            out["brackets_target"] = bool(np.all(up <= self.target + 1e-9) and
                                          np.all(self.target <= lo + 1e-9))
            out["final_gap"] = float(abs(up[-1] - self.target))
        else:
            lam = self.column("lambda_tilde")
            out["final_gap"] = float(abs(lam[-1] - self.target))
            out["max_residual"] = float(self.column("residual").max())
            out["max_sum_error"] = float(np.max(np.abs(self.column("nu_sum") - self.column("one_plus_G"))))
        return out


def lambda0_convergence_scan(model: FitnessModel, Is) -> ScanTable:
    """Truncated (discrete) or discretised (continuous) roots over ``Is``.

    ``upper`` is the root of the upper truncation (tail mapped to 0) and
    ``lower`` that of the lower truncation (tail mapped to ``h``); the
    first increases and the second decreases toward the model's root.
    """
    if not model.is_bounded:
        raise InvalidVariantError("scans need a bounded model")
    target = solve_lambda0(model).lambda0
    rows = []
    if model.is_discrete:
        for I in Is:
            up = solve_lambda0(truncate(model, I, "upper"))
            lo = solve_lambda0(truncate(model, I, "lower"))
            rows.append({"I": int(I), "lower": lo.lambda0, "upper": up.lambda0,
                         "target": target, "upper_phase": up.phase.value})
        return ScanTable("truncation", target, rows)
    for I in Is:
        spec = discretize(model, I)
        root = solve_discretization_lambda(spec)
        rows.append({"I": int(I), "eps": spec.eps, "lambda_tilde": root.lam, "target": target,
                     "residual": root.residual, "nu_sum": root.nu_sum, "one_plus_G": 1.0 + spec.G})
    return ScanTable("discretization", target, rows)
