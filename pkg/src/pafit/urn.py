"""Generalized Pólya urns.

An urn has ``q`` bins with activities ``a_i``.  At each step bin ``i`` is
drawn with probability proportional to ``a_i X_i`` and a random integer
vector ``xi_i`` is added to the counts.  Each update law is stored as a list
of independent components; a component is a finite distribution over
sparse integer vectors, and the update is the sum of one draw per
component.  A deterministic part is just a one-outcome component.

Besides simulation this module computes the mean matrix
``A_ij = a_i E[xi_ij]`` and its Perron pair, and builds the urns that encode
the attachment process: by degree, by fitness, by (fitness, degree), and
the discretised chain used for continuous densities.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import sparse

from .errors import DomainError, ExtinctionError, InvalidVariantError, SolverError, TenabilityError
from .fitness import ContinuousDensity, FiniteDiscrete, FitnessModel
from .sumtree import REBUILD_EVERY, capacity_for, tree_find, tree_rebuild, tree_set

PROB_TOL = 1e-12
SPARSE_ABOVE = 256


@dataclass
class UrnSpec:
    """Bins, activities, update laws and the law of the initial load.

    ``laws[i]`` is a list of components; each component is a list of
    ``(probability, {bin: increment})`` pairs whose probabilities sum to 1.
    ``initial`` is a list of ``(probability, counts)`` pairs.
    """

    activities: np.ndarray
    laws: list
    initial: list
    labels: list | None = None
    name: str = "urn"
    _compiled: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.activities = np.asarray(self.activities, dtype=float)
        if np.any(self.activities < 0) or not np.all(np.isfinite(self.activities)):
            raise DomainError("activities must be finite and nonnegative")
        if len(self.laws) != self.q:
            raise DomainError(f"expected {self.q} update laws, got {len(self.laws)}")
        for i, law in enumerate(self.laws):
            for comp in law:
                s = sum(p for p, _ in comp)
                if abs(s - 1.0) > 1e-9 or any(p < 0 for p, _ in comp):
                    raise DomainError(f"bin {i}: component probabilities sum to {s!r}")
                for _, vec in comp:
                    if any(not (0 <= j < self.q) for j in vec):
                        raise DomainError(f"bin {i}: update touches a bin outside 0..{self.q - 1}")
        s = sum(p for p, _ in self.initial)
        if abs(s - 1.0) > 1e-9:
            raise DomainError(f"initial-load probabilities sum to {s!r}")
        for _, x0 in self.initial:
            if len(x0) != self.q or min(x0) < 0:
                raise DomainError("initial loads must be nonnegative vectors of length q")
        if self.labels is None:
            self.labels = [str(i + 1) for i in range(self.q)]

    @property
    def q(self):
        return int(self.activities.size)

    @property
    def bound(self):
        """Largest absolute increment any update can make to one bin."""
        b = 0
        for law in self.laws:
            b = max(b, sum(max((abs(v) for _, vec in comp for v in vec.values()), default=0)
                           for comp in law))
        return b

    def support(self, i):
        """All ``(probability, dense vector)`` outcomes of bin ``i``'s update."""
        out = [(1.0, np.zeros(self.q, dtype=np.int64))]
        for comp in self.laws[i]:
            nxt = []
            for p0, v0 in out:
                for p, vec in comp:
                    v = v0.copy()
                    for j, c in vec.items():
                        v[j] += c
                    nxt.append((p0 * p, v))
            out = nxt
        return out

    def expected_update(self, i):
        e = np.zeros(self.q)
        for comp in self.laws[i]:
            for p, vec in comp:
                for j, c in vec.items():
                    e[j] += p * c
        return e

    def compiled(self):
        """Flat arrays consumed by the simulation kernel."""
        if self._compiled is not None:
            return self._compiled
        bin_ptr, comp_ptr, cum, vec_ptr, idx, val = [0], [0], [], [0], [], []
        for law in self.laws:
            for comp in law:
                c = 0.0
                for p, vec in comp:
                    c += p
                    cum.append(c)
                    for j, v in sorted(vec.items()):
                        idx.append(j)
                        val.append(v)
                    vec_ptr.append(len(idx))
                cum[-1] = 1.0
                comp_ptr.append(len(cum))
            bin_ptr.append(len(comp_ptr) - 1)
        arr = lambda x, t=np.int64: np.asarray(x, dtype=t)
        self._compiled = (arr(bin_ptr), arr(comp_ptr), arr(cum, float), arr(vec_ptr),
                          arr(idx), arr(val))
        return self._compiled

    def max_components(self):
        return max((len(law) for law in self.laws), default=0)

    def to_config(self):
        return {
            "name": self.name,
            "activities": [float(a) for a in self.activities],
            "labels": list(self.labels),
            "laws": [[[[p, {str(j): int(v) for j, v in vec.items()}] for p, vec in comp]
                      for comp in law] for law in self.laws],
            "initial": [[p, [int(x) for x in x0]] for p, x0 in self.initial],
        }

    @classmethod
    def from_config(cls, d):
        laws = [[[(float(p), {int(j): int(v) for j, v in vec.items()}) for p, vec in comp]
                 for comp in law] for law in d["laws"]]
        return cls(activities=d["activities"], laws=laws,
                   initial=[(float(p), list(x)) for p, x in d["initial"]],
                   labels=d.get("labels"), name=d.get("name", "urn"))


# ---------------------------------------------------------------------------
# mean matrix and Perron pair


def mean_matrix(spec: UrnSpec, *, as_sparse=None):
    """``A_ij = a_i E[xi_ij]``; sparse (CSR) above 256 bins unless overridden."""
    use_sparse = spec.q > SPARSE_ABOVE if as_sparse is None else as_sparse
    rows, cols, vals = [], [], []
    for i, law in enumerate(spec.laws):
        acc = {}
        for comp in law:
            for p, vec in comp:
                for j, c in vec.items():
                    acc[j] = acc.get(j, 0.0) + p * c
        for j, e in acc.items():
            if e != 0.0:
                rows.append(i)
                cols.append(j)
                vals.append(spec.activities[i] * e)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(spec.q, spec.q))
    return A if use_sparse else A.toarray()


@dataclass
class PerronResult:
    lambda1: float
    v1: np.ndarray
    u1: np.ndarray
    iterations: int
    residual: float

    def to_dict(self):
        return {"lambda1": self.lambda1, "v1": self.v1.tolist(), "u1": self.u1.tolist(),
                "iterations": self.iterations, "residual": self.residual}


def _power(M, alpha, x, tol, max_iter):
    """Dominant eigenpair of ``M + alpha I`` started from positive ``x``."""
    x = x / np.linalg.norm(x)
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = M @ x
        lam = float(x @ y)
        res = np.linalg.norm(y - lam * x)
        if res <= tol * max(abs(lam), 1.0) and it > 1:
            return lam, x, it, res / max(abs(lam), 1.0)
        z = y + alpha * x
        x = z / np.linalg.norm(z)
    raise SolverError(
        f"power iteration did not converge in {max_iter} iterations (matrix may be reducible)",
        state={"lambda": lam, "residual": float(res)})


def perron(A, activities=None, *, tol=1e-12, max_iter=100_000) -> PerronResult:
    """Perron pair of the mean matrix.

    ``v1`` is the left eigenvector (``v A = lambda v``) normalised by
    ``a . v = 1``; ``u1`` is the right one, normalised by ``u . v = 1``.
    Bins with zero activity (zero rows) are counting bins: the iteration
    runs on the positive-activity block and ``v1`` is extended to the
    counting bins afterwards.
    """
    is_sparse = sparse.issparse(A)
    A = sparse.csr_matrix(A) if is_sparse else np.asarray(A, dtype=float)
    q = A.shape[0]
    if activities is None:
        live = np.asarray(abs(A).sum(axis=1)).ravel() > 0
        a = None
    else:
        a = np.asarray(activities, dtype=float)
        live = a > 0
    P = np.nonzero(live)[0]
    D = np.nonzero(~live)[0]
    App = A[P][:, P]
    diag = App.diagonal() if is_sparse else np.diag(App)
    alpha = 1.0 + max(0.0, -float(np.min(diag))) if diag.size else 1.0
    start = np.ones(P.size)
    lam, vP, it1, r1 = _power(App.T.tocsr() if is_sparse else App.T, alpha, start, tol, max_iter)
    lam2, uP, it2, r2 = _power(App, alpha, start, tol, max_iter)
    if lam <= 0:
        raise SolverError(f"dominant eigenvalue {lam} is not positive", state={"lambda": lam})
    if vP.sum() < 0:
        vP = -vP
    if uP.sum() < 0:
        uP = -uP
    v = np.zeros(q)
    u = np.zeros(q)
    v[P] = vP
    u[P] = uP
    if D.size:
        # v_D = v_P A_PD / lambda; u vanishes on counting bins
        ApD = A[P][:, D]
        v[D] = np.asarray(ApD.T @ vP).ravel() / lam
    weights = a if a is not None else live.astype(float)
    v = v / float(weights @ v)
    u = u / float(u @ v)
    Av = np.asarray(A.T @ v).ravel()
    residual = float(np.linalg.norm(Av - lam * v) / np.linalg.norm(v))
    return PerronResult(lambda1=lam, v1=v, u1=u, iterations=max(it1, it2),
                        residual=max(residual, r1, r2))


def perron_of(spec: UrnSpec, **kw) -> PerronResult:
    return perron(mean_matrix(spec), spec.activities, **kw)


# ---------------------------------------------------------------------------
# builders


def _e(j, c=1):
    return {j: c}


def degree_urn(k: int) -> UrnSpec:
    """Bins 1..k count endpoints at degree-l vertices; bin k+1 at degree > k."""
    if k < 1:
        raise DomainError("k must be >= 1")
    q = k + 1
    laws = [[[(1.0, {1: 2})]]]
    for i in range(2, k + 1):
        laws.append([[(1.0, {0: 1, i - 1: -i, i: i + 1})]])
    laws.append([[(1.0, {0: 1, k: 1})]])
    x0 = [0] * q
    x0[1] = 2
    labels = [str(l) for l in range(1, k + 1)] + [f">{k}"]
    return UrnSpec(np.ones(q), laws, [(1.0, x0)], labels=labels, name=f"degree(k={k})")


def _require_finite(model):
    if not isinstance(model, FiniteDiscrete):
        raise InvalidVariantError(f"this urn needs a finite discrete model, got {model.kind}")


def fitness_urn(model: FitnessModel) -> UrnSpec:
    """One bin per atom, activity ``f_i``; counts are edge endpoints."""
    _require_finite(model)
    J = model.J
    newcomer = [(float(p), _e(j)) for j, p in enumerate(model.probs)]
    laws = [[[(1.0, _e(i))], newcomer] for i in range(J)]
    initial = []
    for i, p in enumerate(model.probs):
        x0 = [0] * J
        x0[i] = 2
        initial.append((float(p), x0))
    return UrnSpec(model.fitnesses, laws, initial,
                   labels=[f"{f:g}" for f in model.fitnesses], name=f"fitness({model.name})")


def joint_index(i, l, r):
    """Flat index of bin (atom ``i``, degree class ``l``), both 1-based."""
    return (i - 1) * r + (l - 1)


def joint_urn(model: FitnessModel, k: int) -> UrnSpec:
    """Bins ``(i, l)`` for atoms ``i`` and degrees ``l = 1..k+1`` (last one is ``> k``)."""
    _require_finite(model)
    if k < 1:
        raise DomainError("k must be >= 1")
    J, r = model.J, k + 1
    newcomer = [(float(p), _e(joint_index(j, 1, r))) for j, p in enumerate(model.probs, start=1)]
    laws, acts, labels = [], [], []
    for i in range(1, J + 1):
        for l in range(1, r + 1):
            me = joint_index(i, l, r)
            if l < r:
                det = {me: -l, joint_index(i, l + 1, r): l + 1}
            else:
                det = {me: 1}
            laws.append([[(1.0, det)], newcomer])
            acts.append(model.fitnesses[i - 1])
            labels.append(f"({i},{l if l < r else '>' + str(k)})")
    initial = []
    for i, p in enumerate(model.probs, start=1):
        x0 = [0] * (J * r)
        x0[joint_index(i, min(2, r), r)] = 2
        initial.append((float(p), x0))
    return UrnSpec(acts, laws, initial, labels=labels, name=f"joint({model.name},k={k})")


def discretization_cells(model: ContinuousDensity, I: int):
    """Upper and lower cell fitnesses and cell masses on an ``I``-cell grid."""
    h = model.h
    upper = h * np.arange(1, I + 1) / I
    lower = h * np.arange(0, I) / I
    masses = np.array([model.mass(lo, hi) for lo, hi in zip(lower, upper)])
    return upper, lower, masses


def discretization_urn(model: FitnessModel, I: int) -> UrnSpec:
    """``I`` cells plus an overflow bin of activity ``h``.

    A ball drawn from cell ``i`` is returned with probability
    ``lower_i / upper_i`` and otherwise sent to the overflow bin; a newcomer
    lands in cell ``j`` with probability equal to that cell's mass, or
    nowhere with probability ``1 - G``.
    """
    if not isinstance(model, ContinuousDensity):
        raise InvalidVariantError(f"discretization needs a bounded density, got {model.kind}")
    if I < 2:
        raise DomainError("I must be >= 2")
    upper, lower, masses = discretization_cells(model, I)
    over = I
    newcomer = [(float(p), _e(j)) for j, p in enumerate(masses)]
    missing = 1.0 - float(masses.sum())
    if missing > PROB_TOL:
        newcomer.append((missing, {}))
    else:
        newcomer = [(p / float(masses.sum()), v) for p, v in newcomer]
    laws = []
    for i in range(I):
        keep = float(lower[i] / upper[i])
        gamma = [(keep, _e(i)), (1.0 - keep, _e(over))] if keep > 0 else [(1.0, _e(over))]
        laws.append([gamma, newcomer])
    laws.append([[(1.0, _e(over))], newcomer])
    acts = np.append(upper, model.h)
    w = masses / masses.sum()
    initial = []
    for i, p in enumerate(w):
        if p > 0:
            x0 = [0] * (I + 1)
            x0[i] = 2
            initial.append((float(p), x0))
    s = sum(p for p, _ in initial)
    initial = [(p / s, x) for p, x in initial]
    labels = [f"[{lo:g},{hi:g})" for lo, hi in zip(lower, upper)] + ["overflow"]
    return UrnSpec(acts, laws, initial, labels=labels, name=f"discretization({model.name},I={I})")


# ---------------------------------------------------------------------------
# simulation


@njit(cache=True)
def _urn_kernel(tree, cap, X, act, bin_ptr, comp_ptr, cum, vec_ptr, idx, val, U, since, every):
    """Run ``U.shape[0]`` steps.  Returns (status, step, bin, entry, since).

    status 0 = ok, 1 = a count went negative, 2 = zero total weight.
    """
    for s in range(U.shape[0]):
        total = tree[1]
        if total <= 0.0:
            return 2, s, -1, -1, since
        b = tree_find(tree, cap, U[s, 0] * total)
        c0 = bin_ptr[b]
        for c in range(c0, bin_ptr[b + 1]):
            u = U[s, 1 + c - c0]
            o = comp_ptr[c]
            while o < comp_ptr[c + 1] - 1 and u >= cum[o]:
                o += 1
            for e in range(vec_ptr[o], vec_ptr[o + 1]):
                j = idx[e]
                X[j] += val[e]
                if X[j] < 0:
                    return 1, s, b, o, since
                tree_set(tree, cap, j, act[j] * X[j])
                since += 1
        if since >= every:
            tree_rebuild(tree, cap)
            since = 0
    return 0, U.shape[0], -1, -1, since


@dataclass
class UrnTrajectory:
    spec_name: str
    labels: list
    steps: list
    counts: list  # one int array per checkpoint

    @property
    def final(self):
        return self.counts[-1]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "bin", "count"])
        for n, x in zip(self.steps, self.counts):
            for lab, c in zip(self.labels, x):
                w.writerow([n, lab, int(c)])
        return buf.getvalue()


class UrnState:
    """Counts plus the sum tree over ``a_i X_i``."""

    def __init__(self, spec: UrnSpec, rng, X0=None):
        self.spec = spec
        self.rng = rng
        if X0 is None:
            probs = np.array([p for p, _ in spec.initial])
            pick = int(rng.choice(len(probs), p=probs / probs.sum())) if len(probs) > 1 else 0
            X0 = spec.initial[pick][1]
        self.X = np.asarray(X0, dtype=np.int64).copy()
        self.cap = capacity_for(spec.q)
        self.tree = np.zeros(2 * self.cap)
        self.tree[self.cap:self.cap + spec.q] = spec.activities * self.X
        tree_rebuild(self.tree, self.cap)
        self.n = 0
        self._since = 0
        if self.tree[1] <= 0:
            raise ExtinctionError("initial activity-weighted load a . X0 is zero")

    def advance(self, m):
        spec = self.spec
        width = 1 + spec.max_components()
        U = self.rng.random((m, width))
        status, s, b, o, self._since = _urn_kernel(
            self.tree, self.cap, self.X, spec.activities, *spec.compiled(), U,
            self._since, REBUILD_EVERY)
        if status == 1:
            step = self.n + s + 1
            self.n = step
            raise TenabilityError(
                f"urn count went negative at step {step} after drawing bin {spec.labels[b]}",
                step=step, counts=self.X.copy(), bin=int(b), delta=_outcome_vector(spec, o))
        if status == 2:
            self.n += s
            raise ExtinctionError(f"total activity-weighted load hit zero at step {self.n}")
        self.n += m

    def apply(self, b, choices):
        """Apply bin ``b``'s update with explicit outcome ``choices`` per component."""
        apply_event(self.spec, self.X, b, choices)
        for j in range(self.spec.q):
            self.tree[self.cap + j] = self.spec.activities[j] * self.X[j]
        tree_rebuild(self.tree, self.cap)
        self.n += 1


def _outcome_vector(spec, o):
    _, _, _, vec_ptr, idx, val = spec.compiled()
    return {int(idx[e]): int(val[e]) for e in range(vec_ptr[o], vec_ptr[o + 1])}


def apply_event(spec: UrnSpec, X, b, choices):
    """Add the update of bin ``b`` whose component outcomes are ``choices``.

    Used to drive an urn from an externally generated event stream.
    Raises TenabilityError if a count would become negative.
    """
    law = spec.laws[b]
    if len(choices) != len(law):
        raise DomainError(f"bin {b} has {len(law)} components, got {len(choices)} choices")
    delta = {}
    for comp, c in zip(law, choices):
        for j, v in comp[c][1].items():
            delta[j] = delta.get(j, 0) + v
    for j, v in delta.items():
        X[j] += v
    if any(X[j] < 0 for j in delta):
        raise TenabilityError(f"urn count went negative applying bin {b}", step=None,
                              counts=np.array(X), bin=b, delta=delta)


def run_urn(spec: UrnSpec, n: int, rng, *, checkpoints=None, X0=None) -> UrnTrajectory:
    """Simulate ``n`` steps; records counts at checkpoints (powers of two by default)."""
    from .graph import geometric_schedule

    state = UrnState(spec, rng, X0)
    cps = sorted(set(checkpoints)) if checkpoints is not None else geometric_schedule(n)
    cps = [c for c in cps if 0 < c <= n]
    if not cps or cps[-1] != n:
        cps.append(n)
    steps, counts = [0], [state.X.copy()]
    for c in cps:
        state.advance(c - state.n)
        steps.append(c)
        counts.append(state.X.copy())
    return UrnTrajectory(spec.name, list(spec.labels), steps, counts)


# ---------------------------------------------------------------------------
# graph/urn correspondence


class JointTracker:
    """Drives the joint (fitness, degree) urn from graph attachment records.

    Keeps the urn counts and, independently, the vertex counts per (atom,
    degree) as read off the graph; :meth:`check` asserts the identities
    ``X_(i,l) = l N_(i,l)`` for ``l <= k`` and ``X_(i,k+1) = T_(i,k+1)``.
    """

    def __init__(self, model: FiniteDiscrete, k: int, state):
        self.spec = joint_urn(model, k)
        self.k = k
        self.r = k + 1
        self.J = model.J
        self.X = np.zeros(self.spec.q, dtype=np.int64)
        self.N = {}
        self.tail = np.zeros(self.J + 1, dtype=np.int64)
        for v in range(state.nv):
            self._add_vertex(int(state.atom[v]), int(state.degree[v]), +1)
        for v in range(state.nv):
            i, d = int(state.atom[v]), int(state.degree[v])
            l = min(d, self.r)
            self.X[joint_index(i, l, self.r)] += d

    def _add_vertex(self, i, d, sign):
        key = (i, d)
        self.N[key] = self.N.get(key, 0) + sign
        if self.N[key] == 0:
            del self.N[key]
        if d >= self.r:
            self.tail[i] += sign * d

    def update(self, rec):
        i, d = rec.target_atom, rec.target_degree_before
        b = joint_index(i, min(d, self.r), self.r)
        apply_event(self.spec, self.X, b, [0, rec.new_atom - 1])
        self._add_vertex(i, d, -1)
        self._add_vertex(i, d + 1, +1)
        self._add_vertex(rec.new_atom, 1, +1)

    def mismatches(self):
        bad = []
        for i in range(1, self.J + 1):
            for l in range(1, self.r):
                want = l * self.N.get((i, l), 0)
                got = int(self.X[joint_index(i, l, self.r)])
                if got != want:
                    bad.append(((i, l), got, want))
            got = int(self.X[joint_index(i, self.r, self.r)])
            if got != int(self.tail[i]):
                bad.append(((i, self.r), got, int(self.tail[i])))
        return bad


def limit_ratios(spec: UrnSpec):
    """``lambda1 v1``: the almost-sure limit of ``X_n / n``."""
    pr = perron_of(spec)
    return pr.lambda1 * pr.v1


def ball_sum_law(spec: UrnSpec):
    """Distinct coordinate sums of every update outcome, with total probability."""
    out = {}
    for i in range(spec.q):
        for p, v in spec.support(i):
            s = int(v.sum())
            out.setdefault(i, {})
            out[i][s] = out[i].get(s, 0.0) + p
    return out


__all__ = [
    "UrnSpec", "PerronResult", "UrnTrajectory", "UrnState", "JointTracker",
    "mean_matrix", "perron", "perron_of", "degree_urn", "fitness_urn", "joint_urn",
    "joint_index", "discretization_urn", "discretization_cells", "run_urn",
    "apply_event", "limit_ratios", "ball_sum_law",
]
