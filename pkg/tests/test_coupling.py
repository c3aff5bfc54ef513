import math
from types import SimpleNamespace

import numpy as np
import pytest

from pafit import coupling as C
from pafit import fitness as F
from pafit import theory as T
from pafit.errors import DomainError, InvalidVariantError
from pafit.urn import perron_of


def test_zeta_lower_truncation_atoms():
    z = F.zeta_family(2)
    m = C.truncate(z, 3, "lower")
    assert np.allclose(m.fitnesses, [0.0, 0.5, 2 / 3, 1.0])
    assert m.probs[-1] == pytest.approx(z.mass_beyond(3), rel=1e-12)
    _, q = z.atoms(3)
    assert np.allclose(m.probs[:3], q)


def test_zeta_upper_truncation_merges_into_zero_atom():
    z = F.zeta_family(2)
    spec = C.truncate_spec(z, 3, "upper")
    _, q = z.atoms(3)
    assert np.allclose(spec.model.fitnesses, [0.0, 0.5, 2 / 3])
    assert spec.model.probs[0] == pytest.approx(q[0] + z.mass_beyond(3), rel=1e-12)
    assert spec.mapped_mass == pytest.approx(z.mass_beyond(3))


@pytest.mark.parametrize("side", ["upper", "lower"])
def test_truncation_identity_without_tail(side):
    m = F.two_point()
    t = C.truncate(m, 2, side)
    assert np.array_equal(t.fitnesses, m.fitnesses)
    assert np.allclose(t.probs, m.probs)


def test_truncation_errors():
    with pytest.raises(InvalidVariantError):
        C.truncate(F.uniform(), 3, "upper")
    with pytest.raises(DomainError):
        C.truncate(F.zeta_family(2), 3, "middle")
    with pytest.raises(DomainError):
        C.truncate(F.zeta_family(2), 0, "upper")


def test_truncated_roots_bracket():
    z = F.zeta_family(2)
    for I in (5, 20):
        up = T.solve_lambda0(C.truncate(z, I, "upper")).lambda0
        lo = T.solve_lambda0(C.truncate(z, I, "lower")).lambda0
        assert up <= 1.0 <= lo


def test_triple_run_identity_when_no_tail():
    r = C.coupled_triple_run(F.two_point(), 2, 3000, seed=1)
    assert r.ok
    s = r.summaries
    assert s["upper"].final.M == s["original"].final.M == s["lower"].final.M
    assert s["upper"].final.N == s["lower"].final.N


def test_triple_run_zeta_no_violations():
    r = C.coupled_triple_run(F.zeta_family(2), 5, 3000, seed=3)
    assert r.ok and r.steps_checked == 3000


def test_degree_run_vertex_mode_no_violations():
    r = C.coupled_degree_run(F.zeta_family(2), 5, 3000, seed=4)
    assert r.ok, r.violations[:2]
    for name in ("upper", "original", "lower"):
        assert sum(r.summaries[name].final.M.values()) == 2 * 3000 + 2


def test_coupled_run_deterministic():
    a = C.coupled_degree_run(F.zeta_family(2), 4, 1000, seed=8)
    b = C.coupled_degree_run(F.zeta_family(2), 4, 1000, seed=8)
    assert a.summaries["original"].to_json() == b.summaries["original"].to_json()


def _fake_state(rows):
    """Three chains, one class (1), per-chain vertex degree lists."""
    nv = len(rows[0])
    kmax = max(max(r) for r in rows) + 1
    Nd = np.zeros((3, 2, kmax), dtype=np.int64)
    M = np.zeros((3, 2), dtype=np.int64)
    deg = np.zeros((3, nv), dtype=np.int64)
    for x, r in enumerate(rows):
        for v, d in enumerate(r):
            Nd[x, 1, d] += 1
            M[x, 1] += d
            deg[x, v] = d
    return SimpleNamespace(Nd=Nd, M=M, deg=deg, cls=np.ones(nv, dtype=np.int64), nv=nv,
                           _u=lambda: 0.0)


def _tails(degs, kmax=8):
    return np.array([sum(d for d in degs if d >= k) for k in range(1, kmax)])


def test_inversion_rule_breaks_tail_order():
    # original chain degrees {3, 2}, upper chain {4, 2}: tails ordered before the step
    st = _fake_state([[4, 2], [3, 2], [3, 2]])
    up, orig = [4, 2], [3, 2]
    assert np.all(_tails(orig) <= _tails(up))
    # one shared uniform in [0.6, 2/3): original picks degree 2, upper picks degree 4
    U = 0.62
    vu = C._invert_degree(st, C.UPPER, 1, U)
    vf = C._invert_degree(st, C.ORIG, 1, U)
    assert st.deg[C.UPPER, vu] == 4 and st.deg[C.ORIG, vf] == 2
    up[vu] += 1
    orig[vf] += 1
    assert np.any(_tails(orig) > _tails(up))


def test_inversion_mode_reports_violations():
    r = C.coupled_degree_run(F.zeta_family(2), 5, 4000, seed=0, mode="inversion")
    assert not r.ok
    assert {v["condition"] for v in r.violations} == {"4"}
    first = r.violations[0]
    assert {"step", "class", "k", "T", "digest", "picks"} <= set(first)
    assert r.violations_jsonl().count("\n") == len(r.violations)


def test_degree_run_bad_mode():
    with pytest.raises(DomainError):
        C.coupled_degree_run(F.zeta_family(2), 5, 10, seed=0, mode="nope")


def test_discretization_spec_invariants():
    spec = C.discretize(F.uniform(), 10)
    assert np.allclose(spec.upper - spec.lower, spec.eps)
    assert spec.masses.sum() == pytest.approx(spec.G)


def test_discretization_root_matches_urn():
    spec = C.discretize(F.uniform(), 4)
    root = C.solve_discretization_lambda(spec)
    assert root.residual <= 1e-10
    assert root.nu_sum == pytest.approx(1 + root.G, abs=1e-9)
    assert perron_of(spec.urn).lambda1 == pytest.approx(root.lam, abs=1e-9)


def test_scan_truncation():
    tab = C.lambda0_convergence_scan(F.zeta_family(2), [5, 10, 100])
    d = tab.diagnostics()
    assert d["upper_nondecreasing"] and d["lower_nonincreasing"] and d["brackets_target"]
    assert tab.to_csv().splitlines()[0] == "I,lower,upper,target,upper_phase"


def test_scan_discretization():
    tab = C.lambda0_convergence_scan(F.uniform(), [10, 50])
    lam = tab.column("lambda_tilde")
    assert np.all(np.diff(lam) < 0) and np.all(lam > 1.2550009749)
    with pytest.raises(InvalidVariantError):
        C.lambda0_convergence_scan(F.exponential(), [10])
