import json
import math

import numpy as np
import pytest
from scipy import special

from pafit import fitness as F
from pafit import theory as T
from pafit.errors import DomainError, InvalidVariantError

# Frozen oracles, derived by hand before running the code.
TWO_POINT_LAMBDA = (4.5 + math.sqrt(4.25)) / 2          # root of l^2 - 4.5 l + 4 = 0
UNIFORM_LAMBDA = 1.2550009749156743                     # root of l ln(l/(l-1)) = 2
ZETA_I_AT_H = (special.zeta(3) - special.zeta(4)) / special.zeta(4)


def test_dirac_first_mover():
    r = T.classify_phase(F.dirac(1.0))
    assert r.phase is T.Phase.FIRST_MOVER
    assert r.lambda0 == pytest.approx(2.0, abs=1e-12)
    assert r.missing_mass == 0.0


def test_two_point_root():
    r = T.classify_phase(F.two_point(1, 2, 0.5))
    assert r.phase is T.Phase.FIT_GET_RICHER
    assert r.lambda0 == pytest.approx(TWO_POINT_LAMBDA, abs=1e-10)
    assert abs(T.occupation_integral(F.two_point(), r.lambda0) - 1) < 1e-10


def test_uniform_root():
    r = T.classify_phase(F.uniform())
    assert math.isinf(r.I_at_h)
    assert r.lambda0 == pytest.approx(UNIFORM_LAMBDA, abs=1e-9)
    lam = UNIFORM_LAMBDA
    assert lam * math.log(lam / (lam - 1)) == pytest.approx(2.0, abs=1e-12)


def test_beta_innovation():
    m = F.beta(1, 3)
    r = T.classify_phase(m)
    assert r.phase is T.Phase.INNOVATION
    assert r.I_at_h == pytest.approx(0.5, abs=1e-9)
    assert r.lambda0 == 1.0
    assert r.missing_mass == pytest.approx(0.5, abs=1e-9)


@pytest.mark.parametrize("a,b", [(0.0, 0.2), (0.3, 0.6), (0.5, 0.9)])
def test_beta_interval_shares(a, b):
    m = F.beta(1, 3)
    r = T.classify_phase(m)
    exact = 3 * ((b - b * b / 2) - (a - a * a / 2))
    assert T.nu(m, r, (a, b)) == pytest.approx(exact, abs=1e-9)


def test_beta_condensed_top_interval():
    m = F.beta(1, 3)
    r = T.classify_phase(m)
    a = 0.95
    below = 3 * (a - a * a / 2)
    assert T.nu(m, r, (a, 1.0)) == pytest.approx(2.0 - below, abs=1e-9)
    assert T.nu(m, r, (a, 1.0)) == pytest.approx(0.50375, abs=1e-9)


def test_zeta_integral_at_h():
    m = F.zeta_family(2)
    r = T.classify_phase(m)
    assert r.I_at_h == pytest.approx(ZETA_I_AT_H, abs=1e-9)
    assert r.I_at_h == pytest.approx(0.1106265353, abs=1e-9)
    assert r.phase is T.Phase.INNOVATION
    assert r.lambda0 == 1.0


def test_exponential_unbounded():
    r = T.classify_phase(F.exponential())
    assert r.phase is T.Phase.UNBOUNDED
    assert math.isinf(r.lambda0)


def test_boundary_detection():
    # I(h) = int f/(1-f) 2(1-f) df = 1 exactly
    m = F.beta(1, 2)
    r = T.classify_phase(m)
    assert r.phase is T.Phase.BOUNDARY
    assert r.lambda0 == 1.0


def test_mu_k_values():
    assert T.mu_k(1) == pytest.approx(2 / 3)
    assert T.mu_k(2) == pytest.approx(1 / 6)
    assert sum(T.mu_k(k) for k in range(1, 4001)) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(DomainError):
        T.mu_k(0)


def test_eta_dirac_reduces_to_mu():
    m = F.dirac(1.0)
    r = T.classify_phase(m)
    for k in range(1, 30):
        assert T.eta(m, r, 1, k) == pytest.approx(T.mu_k(k), rel=1e-12)


def test_eta_moment_identity():
    m = F.two_point()
    r = T.classify_phase(m)
    for j in (1, 2):
        tot = sum(k * T.eta(m, r, j, k) for k in range(1, 200000))
        # Yule-Simon tail with exponent > 1 converges slowly; bound the remainder
        assert tot == pytest.approx(T.nu(m, r, j), rel=2e-3)
        mass = sum(T.eta(m, r, j, k) for k in range(1, 200000))
        assert mass == pytest.approx(m.atom(j)[1], rel=1e-3)


def test_link_shares_sum():
    m = F.two_point()
    r = T.classify_phase(m)
    assert T.nu(m, r, 1) + T.nu(m, r, 2) == pytest.approx(2.0, abs=1e-10)


def test_tail_exponent():
    m = F.two_point()
    r = T.classify_phase(m)
    assert T.tail_exponent(r, 2.0) == pytest.approx(TWO_POINT_LAMBDA / 2)


def test_eta_requires_discrete():
    m = F.uniform()
    with pytest.raises(InvalidVariantError):
        T.eta(m, T.classify_phase(m), 1, 1)


def test_limit_law_serializes():
    law = T.limit_law(F.two_point(), intervals=[(0.0, 1.5)])
    d = json.loads(json.dumps(law.to_dict()))
    assert d["phase"] == "fit-get-richer"
    assert "[0,1.5]" in d["nu_table"] and "1,1" in d["eta_table"]


def test_log_degree_product_branches():
    s = 1.7
    direct = float(np.sum(np.log(np.arange(2, 1001)) - np.log(np.arange(2, 1001) + s)))
    assert T.log_degree_product(1000, s) == pytest.approx(direct, rel=1e-12)
    g = special.gammaln(1002) + special.gammaln(2 + s) - special.gammaln(1002 + s)
    assert T.log_degree_product(1001, s) == pytest.approx(g, rel=1e-12)
