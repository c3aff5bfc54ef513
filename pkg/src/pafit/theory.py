"""Limit laws of preferential attachment with fitness.

The central object is the occupation integral

    I(lam) = int f / (lam - f) dQ(f),     lam >= h,

whose root ``lambda0`` (when ``I(h) > 1``) fixes link shares ``nu``, degree
laws ``eta`` and tail exponents ``lambda0 / f``.  When ``I(h) < 1`` there is
no root, ``lambda0 = h`` and a fraction ``1 - I(h)`` of edge endpoints
condenses at the fitness supremum.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import DomainError, InvalidVariantError, SolverError
from .fitness import FitnessModel

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-12
BOUNDARY_TOL = 1e-9
RESIDUAL_TOL = 1e-10
SUM_TOL = 1e-12


class Phase(str, enum.Enum):
    FIRST_MOVER = "first-mover-advantage"
    FIT_GET_RICHER = "fit-get-richer"
    BOUNDARY = "fit-get-richer-boundary"
    INNOVATION = "innovation-pays-off"
    UNBOUNDED = "unbounded-degenerate"


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


@dataclass
class PhaseReport:
    lambda0: float
    I_at_h: float
    phase: Phase
    missing_mass: float
    h: float
    bracket: tuple = (math.nan, math.nan)
    iterations: int = 0
    residual: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def condensed(self):
        """True when limit laws use ``lambda0 = h`` (boundary or innovation)."""
        return self.phase in (Phase.BOUNDARY, Phase.INNOVATION)

    def to_dict(self):
        return {
            "lambda0": _jsonable(self.lambda0),
            "I_at_h": _jsonable(self.I_at_h),
            "phase": self.phase.value,
            "missing_mass": self.missing_mass,
            "h": _jsonable(self.h),
            "residual": _jsonable(self.residual),
            "bracket": [_jsonable(b) for b in self.bracket],
            "iterations": self.iterations,
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# occupation integral


def _discrete_sum(model, lam, fn, tol=SUM_TOL, max_terms=2**24):
    """Sum ``fn(f_j, q_j)`` over all atoms, with a certified truncation."""
    if model.kind == "finite":
        f, q = model.fitnesses, model.probs
        return float(np.sum(fn(f, q)))
    total = 0.0
    start, chunk = 1, 4096
    while True:
        j = np.arange(start, start + chunk)
        f, q = model.atom_rule(j)
        total += float(np.sum(fn(np.asarray(f, float), np.asarray(q, float))))
        start += chunk
        N = start - 1
        if model.term_tail_bound is not None and lam >= model.h:
            bound = model.term_tail_bound(N, lam)
        else:
            bound = model.h / (lam - model.h) * model.mass_beyond(N)
        if bound <= tol or N >= max_terms:
            return total
        chunk *= 2


def _continuous_integral(model, lam, a, b, weight):
    """``int_a^b weight(x) g(x) / (lam - x) dx`` with a log substitution near lam.

    ``weight`` is ``"x"`` or ``"one"``.  The integrand blows up like
    ``1 / (lam - x)`` when ``lam`` approaches ``h``, so when ``lam - h < h/10``
    the top decile of ``[0, h]`` is integrated in ``u = -log(lam - x)``.
    """
    g = model.g
    h = model.h
    if b <= a:
        return 0.0

    def direct(x):
        w = x if weight == "x" else 1.0
        return w * g(x) / (lam - x)

    def subst(u):
        x = lam - math.exp(-u)
        w = x if weight == "x" else 1.0
        return w * g(x)

    split = 0.9 * h
    near = (lam - h) < 0.1 * h and b > split
    total = 0.0
    lo_end = min(b, split) if near else b
    if lo_end > a:
        val, _ = integrate.quad(direct, a, lo_end, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400)
        total += val
    if near:
        x0 = max(a, split)
        u0 = -math.log(lam - x0)
        u1 = math.inf if lam == b else -math.log(lam - b)
        val, _ = integrate.quad(subst, u0, u1, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400)
        total += val
    return float(total)


def occupation_integral(model: FitnessModel, lam: float) -> float:
    """``I(lam)`` for ``lam >= h``; may be ``+inf`` at ``lam == h``."""
    if not model.is_bounded:
        raise InvalidVariantError("the occupation integral needs a bounded fitness support")
    h = model.h
    if lam < h:
        raise DomainError(f"lambda={lam!r} is below the fitness supremum h={h!r}")
    if model.kind == "finite":
        f, q = model.fitnesses, model.probs
        if lam == h:
            if np.any((f == h) & (f > 0)):
                return math.inf
        return float(np.sum(f * q / (lam - f)))
    if model.kind == "countable":
        if lam == h:
            if model.occupation_at_h is not None:
                return float(model.occupation_at_h())
            return _occupation_at_h_numeric(model)
        return _discrete_sum(model, lam, lambda f, q: f * q / (lam - f))
    # continuous
    if lam == h:
        if model.density_positive_at_h:
            return math.inf
        if model.density_positive_at_h is None:
            return _occupation_at_h_numeric(model)
    return _continuous_integral(model, lam, 0.0, h, "x")


def _occupation_at_h_numeric(model):
    """Evaluate ``I`` just above ``h``; report ``inf`` on a divergent trend."""
    h = model.h
    vals = [occupation_integral(model, h * (1 + 10.0 ** -k)) for k in (4, 6, 8)]
    if vals[0] > 0 and (vals[1] / vals[0] > 10 or vals[2] / vals[1] > 10):
        return math.inf
    if vals[2] - vals[1] > 0.5 * (vals[1] - vals[0]) and vals[2] > 1:
        # still climbing at the same pace: logarithmic divergence
        return math.inf
    return vals[2]


# ---------------------------------------------------------------------------
# lambda0 and phase


def solve_lambda0(model: FitnessModel, max_iter=400) -> PhaseReport:
    """Root of ``I(lam) = 1`` on ``(h, inf)``, or ``h`` when none exists."""
    if not model.is_bounded:
        raise InvalidVariantError("unbounded models have no lambda0; use classify_phase")
    h = model.h
    I_h = occupation_integral(model, h)
    if abs(I_h - 1.0) <= BOUNDARY_TOL:
        return PhaseReport(h, I_h, Phase.BOUNDARY, 0.0, h, (h, h), 0, abs(I_h - 1.0))
    if I_h < 1.0:
        return PhaseReport(h, I_h, Phase.INNOVATION, 1.0 - I_h, h, (h, h), 0, 0.0)

    if model.kind == "finite":
        return _solve_finite_shifted(model, I_h, max_iter)
    lo = h
    hi = max(2.0 * h, h + 1.0)
    it = 0
    while occupation_integral(model, hi) >= 1.0:
        lo, hi = hi, 2.0 * hi
        it += 1
        if it > 200:
            raise SolverError("could not bracket lambda0", {"bracket": (lo, hi), "iterations": it})
    best, best_res = hi, abs(occupation_integral(model, hi) - 1.0)
    while hi - lo > 1e-12 * hi:
        it += 1
        if it > max_iter:
            raise SolverError("bisection for lambda0 did not converge",
                              {"bracket": (lo, hi), "iterations": it, "residual": best_res})
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = occupation_integral(model, mid)
        res = abs(val - 1.0)
        if res < best_res:
            best, best_res = mid, res
        if val > 1.0:
            lo = mid
        else:
            hi = mid
    if best_res > RESIDUAL_TOL:
        raise SolverError("lambda0 residual above tolerance",
                          {"bracket": (lo, hi), "iterations": it, "residual": best_res})
    return PhaseReport(best, I_h, Phase.FIT_GET_RICHER, 0.0, h, (lo, hi), it, best_res)


def _solve_finite_shifted(model, I_h, max_iter):
    """Bisection in ``t = lam - h`` so roots very close to ``h`` keep precision."""
    h = model.h
    f, q = model.fitnesses, model.probs
    gap = h - f

    def occ(t):
        return float(np.sum(f * q / (t + gap)))

    lo, hi = 0.0, max(h, 1.0)
    it = 0
    while occ(hi) >= 1.0:
        lo, hi = hi, 2.0 * hi
        it += 1
        if it > 200:
            raise SolverError("could not bracket lambda0", {"bracket": (h + lo, h + hi), "iterations": it})
    while hi - lo > 1e-13 * hi:
        it += 1
        if it > max_iter:
            break
        mid = 0.5 * (lo + hi)
        if occ(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    res = abs(occ(t) - 1.0)
    if res > RESIDUAL_TOL:
        raise SolverError("lambda0 residual above tolerance",
                          {"bracket": (h + lo, h + hi), "iterations": it, "residual": res})
    return PhaseReport(h + t, I_h, Phase.FIT_GET_RICHER, 0.0, h, (h + lo, h + hi), it, res)


def classify_phase(model: FitnessModel) -> PhaseReport:
    if model.kind == "finite" and model.J == 1:
        f = float(model.fitnesses[0])
        return PhaseReport(2.0 * f, math.inf, Phase.FIRST_MOVER, 0.0, f, (2 * f, 2 * f), 0, 0.0)
    if not model.is_bounded:
        return PhaseReport(math.inf, math.nan, Phase.UNBOUNDED, 0.0, math.inf)
    return solve_lambda0(model)


# ---------------------------------------------------------------------------
# limit laws


def mu_k(k: int) -> float:
    """Classic preferential attachment degree law ``4 / (k (k+1) (k+2))``."""
    if k < 1:
        raise DomainError("degree must be >= 1")
    from fractions import Fraction
    return float(Fraction(4, k * (k + 1) * (k + 2)))


def tail_exponent(report: PhaseReport, f: float) -> float:
    return report.lambda0 / f


def nu(model: FitnessModel, report: PhaseReport, target) -> float:
    """Limiting edge-endpoint share of an atom (int) or interval ``(a, b)``."""
    lam = report.lambda0
    if isinstance(target, (int, np.integer)):
        if not model.is_discrete:
            raise InvalidVariantError("atom targets need a discrete model")
        f, q = model.atom(int(target))
        if report.phase is Phase.UNBOUNDED:
            return q
        return lam * q / (lam - f)

    a, b = map(float, target)
    if a > b or a < 0 or (model.is_bounded and b > model.h):
        raise DomainError(f"interval [{a}, {b}] outside the fitness support")
    if report.phase is Phase.UNBOUNDED:
        if model.is_discrete:
            return _discrete_sum_interval(model, a, b, lambda f, q: q)
        if math.isinf(b):
            return 2.0 - model.mass(0.0, a)
        return model.mass(a, b)
    total = 1.0 + model.G
    if report.condensed and b >= model.h:
        return total - _nu_direct(model, lam, 0.0, a)
    return _nu_direct(model, lam, a, b)


def _nu_direct(model, lam, a, b):
    if model.is_discrete:
        return _discrete_sum_interval(model, a, b, lambda f, q: lam * q / (lam - f))
    return lam * _continuous_integral(model, lam, a, b, "one")


def _discrete_sum_interval(model, a, b, fn):
    if model.kind == "finite":
        f, q = model.fitnesses, model.probs
        m = (f >= a) & (f <= b)
        return float(np.sum(fn(f[m], q[m])))
    # countable atoms below h: sum those inside [a, b]; tail beyond is bounded
    total = 0.0
    start, chunk = 1, 4096
    while True:
        j = np.arange(start, start + chunk)
        f, q = (np.asarray(v, float) for v in model.atom_rule(j))
        m = (f >= a) & (f <= b)
        total += float(np.sum(fn(f[m], q[m])))
        start += chunk
        if model.mass_beyond(start - 1) < SUM_TOL or start > 2**24 or f[-1] > b:
            return total
        chunk *= 2


def log_degree_product(k, s):
    """``log prod_{l=2}^k l / (l + s)``."""
    if k <= 1:
        return 0.0
    if k <= 1000:
        l = np.arange(2, k + 1, dtype=float)
        return float(np.sum(np.log(l) - np.log(l + s)))
    return float(special.gammaln(k + 1) + special.gammaln(2 + s) - special.gammaln(k + 1 + s))


def eta(model: FitnessModel, report: PhaseReport, j: int, k: int) -> float:
    """Limiting fraction of vertices with fitness atom ``j`` and degree ``k``.

    Uses the prefactor ``lambda0 q_j / (lambda0 + f_j)`` derived from the
    left Perron vector of the joint (fitness, degree) urn; this is the form
    for which ``sum_k k eta(j, k) = nu_j`` and the one-fitness case gives
    ``4 / (k (k+1) (k+2))``.
    """
    if not model.is_discrete:
        raise InvalidVariantError("per-atom degree laws exist only for discrete models")
    if k < 1:
        raise DomainError("degree must be >= 1")
    f, q = model.atom(int(j))
    if report.phase is Phase.UNBOUNDED:
        return q if k == 1 else 0.0
    lam = report.lambda0
    if f == 0:
        return q if k == 1 else 0.0
    s = lam / f
    pref = lam * q / (lam + f)
    return pref / k * math.exp(log_degree_product(k, s))


def eta_main_text(model, report, j, k):
    """The variant with prefactor ``nu_j``; kept for comparison only."""
    f, q = model.atom(int(j))
    lam = report.lambda0
    return nu(model, report, int(j)) / k * math.exp(log_degree_product(k, lam / f))


# ---------------------------------------------------------------------------
# tables


@dataclass
class LimitLaw:
    report: PhaseReport
    nu_table: dict
    eta_table: dict
    tail_exponents: dict
    scope: str

    def to_dict(self):
        return {
            **self.report.to_dict(),
            "scope": self.scope,
            "nu_table": {(_interval_key(*k) if isinstance(k, tuple) else str(k)): v
                         for k, v in self.nu_table.items()},
            "eta_table": {f"{j},{k}": v for (j, k), v in self.eta_table.items()},
            "tail_exponents": {str(k): _jsonable(v) for k, v in self.tail_exponents.items()},
        }


def _interval_key(a, b):
    return f"[{a:g},{b:g}]"


def limit_law(model, report=None, *, atoms=None, k_max=10, intervals=None) -> LimitLaw:
    """Tabulate ``nu`` (and ``eta`` for discrete models) for a model."""
    if report is None:
        report = classify_phase(model)
    scope = "innovation" if report.condensed else "standard"
    nu_table, eta_table, tails = {}, {}, {}
    if model.is_discrete:
        if atoms is None:
            atoms = range(1, (model.J if model.kind == "finite" else 10) + 1)
        for j in atoms:
            nu_table[int(j)] = nu(model, report, int(j))
            f, _ = model.atom(int(j))
            tails[int(j)] = (report.lambda0 / f) if f > 0 else math.inf
            for k in range(1, k_max + 1):
                eta_table[(int(j), k)] = eta(model, report, int(j), k)
    for a, b in intervals or ():
        nu_table[(float(a), float(b))] = nu(model, report, (a, b))
    return LimitLaw(report, nu_table, eta_table, tails, scope)
