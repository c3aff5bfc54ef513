"""Fitness distributions for preferential attachment with fitness.

Four shapes are supported:

* ``FiniteDiscrete``      -- finitely many ascending atoms ``f_1 < ... < f_J``
* ``CountableDiscrete``   -- atoms given by a rule ``j -> (f_j, q_j)`` plus an
  analytic tail-mass function, never materialised in full
* ``ContinuousDensity``   -- a density ``g`` on ``[0, h]`` with total mass
  ``G`` (``G < 1`` only for internal, truncated models)
* ``ContinuousUnbounded`` -- a density on ``[0, inf)``

Atom indices are 1-based everywhere in the public API; 0 means "no atom".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special, stats

from .errors import DomainError, InvalidVariantError

MASS_TOL = 1e-9


@dataclass
class ValidationReport:
    ok: bool
    failures: list = field(default_factory=list)
    total_mass: float = float("nan")

    def __bool__(self):
        return self.ok


class FitnessModel:
    """Common surface of all fitness models.

    Subclasses set ``kind``, ``h`` (supremum of the support) and ``G`` (total
    mass) and implement the sampling primitives.
    """

    kind = "abstract"
    h: float
    G: float
    name: str
    params: dict

    @property
    def is_discrete(self):
        return self.kind in ("finite", "countable")

    @property
    def is_bounded(self):
        return math.isfinite(self.h)

    def sample(self, rng):
        """Draw one fitness; returns ``(value, atom_index or None)``."""
        values, atoms = self.sample_many(rng, 1)
        atom = int(atoms[0])
        return float(values[0]), (atom if atom > 0 else None)

    def sample_many(self, rng, size):
        raise NotImplementedError

    def mass_beyond(self, I):
        raise InvalidVariantError(f"mass_beyond is only defined for discrete models, not {self.kind}")

    def validate(self):
        raise NotImplementedError

    def describe(self):
        return {"name": self.name, "params": dict(self.params)}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}<{self.name}>({args})"


class FiniteDiscrete(FitnessModel):
    kind = "finite"

    def __init__(self, fitnesses, probs, *, name="finite", params=None, internal=False):
        self.fitnesses = np.asarray(fitnesses, dtype=float)
        self.probs = np.asarray(probs, dtype=float)
        self.internal = internal
        self.name = name
        self.params = params if params is not None else {
            "fitnesses": self.fitnesses.tolist(), "probs": self.probs.tolist()}
        self.h = float(self.fitnesses.max()) if self.fitnesses.size else float("nan")
        self.G = float(self.probs.sum())
        self._cdf = np.cumsum(self.probs)

    @property
    def J(self):
        return int(self.fitnesses.size)

    def atom(self, j):
        return float(self.fitnesses[j - 1]), float(self.probs[j - 1])

    def atoms(self, upto=None):
        """Return ``(f, q)`` arrays for atoms ``1..upto`` (all by default)."""
        m = self.J if upto is None else min(upto, self.J)
        return self.fitnesses[:m], self.probs[:m]

    def sample_many(self, rng, size):
        u = rng.random(size) * self._cdf[-1]
        idx = np.searchsorted(self._cdf, u, side="right")
        np.minimum(idx, self.J - 1, out=idx)
        return self.fitnesses[idx], idx.astype(np.int64) + 1

    def mass_beyond(self, I):
        if I < 0:
            raise DomainError("truncation index must be >= 0")
        return float(self.probs[I:].sum())

    def validate(self):
        fails = []
        f, q = self.fitnesses, self.probs
        if f.size == 0 or f.size != q.size:
            fails.append("fitnesses and probs must be non-empty and of equal length")
            return ValidationReport(False, fails)
        if np.any(np.diff(f) <= 0):
            fails.append("fitnesses are not strictly ascending")
        if np.any(f < 0) or (not self.internal and np.any(f == 0)):
            fails.append("fitnesses must be strictly positive")
        if np.any(q <= 0):
            fails.append("atom probabilities must be strictly positive")
        total = float(q.sum())
        if not self.internal and abs(total - 1.0) > MASS_TOL:
            fails.append(f"total mass {total!r} differs from 1")
        if self.internal and not (0 < total <= 1 + MASS_TOL):
            fails.append(f"total mass {total!r} outside (0, 1]")
        if np.all(f == 0):
            fails.append("all fitness mass sits at 0")
        return ValidationReport(not fails, fails, total)


class CountableDiscrete(FitnessModel):
    """Countably many atoms described by rules.

    ``atom_rule(j)`` maps a 1-based index (int or int array) to ``(f_j, q_j)``;
    ``tail_mass(I)`` returns ``sum_{j>I} q_j`` (analytic, or a certified
    upper bound).  ``occupation_at_h`` optionally gives the closed form of
    ``sum_j f_j q_j / (h - f_j)``; ``term_tail_bound(N, lam)`` optionally
    bounds ``sum_{j>N} f_j q_j / (lam - f_j)``.
    """

    kind = "countable"

    def __init__(self, atom_rule, tail_mass, h, *, name="countable", params=None,
                 occupation_at_h=None, term_tail_bound=None, allow_zero=False,
                 tail_is_exact=True):
        self.atom_rule = atom_rule
        self.tail_mass = tail_mass
        self.h = float(h)
        self.G = 1.0
        self.name = name
        self.params = params or {}
        self.occupation_at_h = occupation_at_h
        self.term_tail_bound = term_tail_bound
        self.allow_zero = allow_zero
        self.tail_is_exact = tail_is_exact
        self._cdf = np.zeros(0)

    def atom(self, j):
        f, q = self.atom_rule(j)
        return float(f), float(q)

    def atoms(self, upto):
        j = np.arange(1, upto + 1)
        f, q = self.atom_rule(j)
        return np.asarray(f, dtype=float), np.asarray(q, dtype=float)

    def mass_beyond(self, I):
        if I < 0:
            raise DomainError("truncation index must be >= 0")
        return float(self.tail_mass(I))

    def _extend_cdf(self, need):
        m = max(64, self._cdf.size)
        while m < need:
            m *= 2
        # cdf_j = 1 - tail(j) keeps precision near 1.
        j = np.arange(1, m + 1)
        self._cdf = 1.0 - np.asarray(self.tail_mass(j), dtype=float)

    def sample_many(self, rng, size):
        u = rng.random(size)
        if self._cdf.size == 0:
            self._extend_cdf(1024)
        while u.max(initial=0.0) >= self._cdf[-1] and self._cdf.size < 2**26:
            self._extend_cdf(2 * self._cdf.size)
        idx = np.searchsorted(self._cdf, u, side="right") + 1
        np.minimum(idx, self._cdf.size, out=idx)
        f, _ = self.atom_rule(idx)
        return np.asarray(f, dtype=float), idx.astype(np.int64)

    def validate(self, check_atoms=10_000):
        fails = []
        f, q = self.atoms(check_atoms)
        if np.any(q <= 0):
            fails.append("atom probabilities must be strictly positive")
        if np.any(f < 0) or (not self.allow_zero and np.any(f == 0)):
            fails.append("fitnesses must be strictly positive")
        if np.any(f > self.h):
            fails.append("an atom exceeds the declared supremum h")
        tails = np.asarray(self.tail_mass(np.arange(0, check_atoms + 1)), dtype=float)
        if np.any(np.diff(tails) > 0):
            fails.append("tail mass is not nonincreasing")
        total = float(q.sum() + tails[-1])
        if abs(total - 1.0) > MASS_TOL:
            fails.append(f"total mass {total!r} differs from 1")
        if abs(tails[0] - 1.0) > MASS_TOL:
            fails.append("tail_mass(0) differs from 1")
        if tails[-1] > 1e-3:
            fails.append("tail mass does not decay")
        return ValidationReport(not fails, fails, total)


class ContinuousDensity(FitnessModel):
    """Density ``g`` on ``[0, h]``.

    ``ppf`` (inverse cdf) gives exact sampling; otherwise ``envelope`` -- a
    constant upper bound on ``g`` -- is used for rejection sampling.
    ``density_positive_at_h`` declares analytically whether ``g(h) > 0``
    (None means unknown, decided numerically).
    """

    kind = "continuous"

    def __init__(self, g, h, *, cdf=None, ppf=None, G=1.0, name="density", params=None,
                 envelope=None, density_positive_at_h=None, internal=False,
                 rv=None):
        self.g = g
        self.h = float(h)
        self.cdf = cdf
        self.ppf = ppf
        self.G = float(G)
        self.name = name
        self.params = params or {}
        self.envelope = envelope
        self.density_positive_at_h = density_positive_at_h
        self.internal = internal
        self.rv = rv

    def mass(self, a, b):
        """Q-mass of ``[a, b]``."""
        if self.cdf is not None:
            return float(self.cdf(b) - self.cdf(a))
        val, _ = integrate.quad(self.g, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        return float(val)

    def sample_many(self, rng, size):
        if abs(self.G - 1.0) > MASS_TOL:
            raise DomainError("cannot sample a defective (G < 1) density")
        if self.rv is not None:
            return np.asarray(self.rv.ppf(rng.random(size)), dtype=float), np.zeros(size, np.int64)
        if self.ppf is not None:
            return np.asarray(self.ppf(rng.random(size)), dtype=float), np.zeros(size, np.int64)
        if self.envelope is None:
            raise DomainError("density has neither ppf nor a rejection envelope")
        out = np.empty(size)
        filled = 0
        while filled < size:
            m = max(16, 2 * (size - filled))
            x = rng.random(m) * self.h
            keep = x[rng.random(m) * self.envelope <= self.g(x)]
            take = min(keep.size, size - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out, np.zeros(size, np.int64)

    def validate(self):
        fails = []
        total, _ = integrate.quad(self.g, 0.0, self.h, epsabs=1e-13, epsrel=1e-12, limit=400)
        if abs(total - self.G) > MASS_TOL:
            fails.append(f"integral of g is {total!r}, declared G={self.G!r}")
        if not self.internal and abs(self.G - 1.0) > MASS_TOL:
            fails.append("user-facing densities must have total mass 1")
        if not (0 < self.G <= 1 + MASS_TOL):
            fails.append("total mass outside (0, 1]")
        if not self.internal:
            xs = np.linspace(0, self.h, 1001)[1:-1]
            gx = np.asarray(self.g(xs), dtype=float)
            if np.any(~np.isfinite(gx)) or np.any(gx <= 0):
                fails.append("density is not strictly positive on (0, h)")
        return ValidationReport(not fails, fails, float(total))


class ContinuousUnbounded(FitnessModel):
    kind = "unbounded"

    def __init__(self, g, *, cdf, ppf, name="unbounded", params=None):
        self.g = g
        self.cdf = cdf
        self.ppf = ppf
        self.h = math.inf
        self.G = 1.0
        self.name = name
        self.params = params or {}

    def mass(self, a, b):
        return float(self.cdf(b) - self.cdf(a))

    def sample_many(self, rng, size):
        return np.asarray(self.ppf(rng.random(size)), dtype=float), np.zeros(size, np.int64)

    def validate(self):
        fails = []
        total, _ = integrate.quad(self.g, 0.0, math.inf, epsabs=1e-13, epsrel=1e-12)
        if abs(total - 1.0) > MASS_TOL:
            fails.append(f"integral of g is {total!r}, expected 1")
        xs = np.linspace(0, 50, 1001)[1:]
        if np.any(np.asarray(self.g(xs)) <= 0):
            fails.append("density is not strictly positive on (0, inf)")
        return ValidationReport(not fails, fails, float(total))


# ---------------------------------------------------------------------------
# built-in families


def dirac(f=1.0):
    return FiniteDiscrete([f], [1.0], name="dirac", params={"f": float(f)})


def two_point(f1=1.0, f2=2.0, q1=0.5):
    return FiniteDiscrete([f1, f2], [q1, 1.0 - q1], name="twopoint",
                          params={"f1": float(f1), "f2": float(f2), "q1": float(q1)})


def finite(fitnesses, probs):
    return FiniteDiscrete(fitnesses, probs, name="finite",
                          params={"fitnesses": [float(x) for x in fitnesses],
                                  "probs": [float(p) for p in probs]})


def uniform(h=1.0):
    rv = stats.uniform(0.0, h)
    return ContinuousDensity(lambda x: np.full_like(np.asarray(x, dtype=float), 1.0 / h),
                             h, cdf=rv.cdf, rv=rv, name="uniform", params={"h": float(h)},
                             density_positive_at_h=True)


def beta(alpha, beta):
    rv = stats.beta(alpha, beta)
    return ContinuousDensity(rv.pdf, 1.0, cdf=rv.cdf, rv=rv, name="beta",
                             params={"alpha": float(alpha), "beta": float(beta)},
                             density_positive_at_h=(beta <= 1.0))


def exponential(rate=1.0):
    rv = stats.expon(scale=1.0 / rate)
    return ContinuousUnbounded(rv.pdf, cdf=rv.cdf, ppf=rv.ppf, name="exponential",
                               params={"rate": float(rate)})


def zeta_family(theta):
    """Atoms ``f_j = 1 - 1/j`` with ``q_j = j^-(2+theta) / zeta(2+theta)``.

    ``f_1 = 0`` is part of the family; such vertices are never selected.
    The supremum ``h = 1`` is not attained.
    """
    if theta <= 0:
        raise DomainError("theta must be positive")
    s = 2.0 + theta
    zs = float(special.zeta(s))

    def rule(j):
        j = np.asarray(j, dtype=float)
        return 1.0 - 1.0 / j, j ** (-s) / zs

    def tail(I):
        I = np.asarray(I, dtype=float)
        # Hurwitz zeta: sum_{j >= I+1} j^-s
        return special.zeta(s, I + 1.0) / zs

    def occ_at_h():
        return float((special.zeta(1.0 + theta) - zs) / zs)

    def term_tail(N, lam):
        # f q / (lam - f) <= j^-(1+theta)/zs for lam >= 1; integral test
        return float(N ** (-theta) / (theta * zs))

    return CountableDiscrete(rule, tail, 1.0, name="zeta", params={"theta": float(theta)},
                             occupation_at_h=occ_at_h, term_tail_bound=term_tail,
                             allow_zero=True)


REGISTRY = {
    "dirac": dirac,
    "twopoint": two_point,
    "finite": finite,
    "uniform": uniform,
    "beta": beta,
    "zeta": zeta_family,
    "exponential": exponential,
}


def from_descriptor(name, **params):
    """Build a built-in model from a name and keyword parameters."""
    try:
        ctor = REGISTRY[name]
    except KeyError:
        raise DomainError(f"unknown fitness model {name!r}; known: {sorted(REGISTRY)}") from None
    return ctor(**params)
