import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import afa.accountant as accountant_module
from afa.accountant import (Accountant, NoFiniteEpsilon, delta_of_eps, eps_from_delta_curve,
                            eps_of_delta, gaussian_delta_oracle)
from afa.divergence import DiscretePair
from afa.dominating import DominatingPair, compose_pairs, subsampled_gaussian_hockey_stick
from afa.phi import LogPhiLedger, PhiTerm
from afa.quadrature import QuadratureError

E_RR = math.e / (1 + math.e)


def gaussian_acct(sigma, k=1):
  return Accountant(LogPhiLedger().append(PhiTerm.gaussian(sigma), k))


def gaussian_hs(mu, alpha):
  """H_alpha between N(mu, 1) and N(0, 1), any alpha > 0."""
  eps = math.log(alpha)
  return stats.norm.cdf(mu / 2 - eps / mu) - alpha * stats.norm.cdf(-mu / 2 - eps / mu)


def mixed_oracle(sigma, p, eps):
  """delta(eps) of RR(p) composed with a Gaussian, conditioning on the RR loss."""
  ell = math.log(p / (1 - p))
  mu = 1 / sigma

  def one_side(weights):
    return sum(w * gaussian_hs(mu, math.exp(eps - l)) for w, l in weights)
  # Both orientations coincide for these symmetric mechanisms.
  return one_side([(p, ell), (1 - p, -ell)])


def discretized_gaussian(sigma, S=12.0, N=20000):
  edges = np.linspace(-S, S, N + 1)
  p = np.diff(stats.norm.cdf(edges, 1, sigma))
  q = np.diff(stats.norm.cdf(edges, 0, sigma))
  p[0] += stats.norm.cdf(-S, 1, sigma)
  q[0] += stats.norm.cdf(-S, 0, sigma)
  p[-1] += stats.norm.sf(S, 1, sigma)
  q[-1] += stats.norm.sf(S, 0, sigma)
  return DiscretePair.from_probs(p, q)


class TestDeltaOfEps:

  def test_oriented_parts(self):
    acct = Accountant(LogPhiLedger().append(PhiTerm.discrete(
        DiscretePair.from_probs([0.6, 0.3, 0.1], [0.3, 0.7, 0.0]))))
    res = acct.delta_of_eps(0.2, full_output=True)
    assert acct.delta_oriented(0.2, 'P')[0] == pytest.approx(res.delta_p, abs=1e-15)
    assert acct.delta_oriented(0.2, 'Q')[0] == pytest.approx(res.delta_q, abs=1e-15)
    with pytest.raises(ValueError, match='first'):
      acct.delta_oriented(0.2, 'R')

  def test_golden_gaussian(self):
    assert gaussian_acct(1.0).delta_of_eps(0.277) == pytest.approx(0.300, abs=1e-3)

  def test_empty_ledger(self):
    assert Accountant().delta_of_eps(0.0) == 0.0
    assert Accountant().delta_of_eps(-1.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)

  def test_gaussian_oracle(self):
    value = gaussian_acct(2.0, 4).delta_of_eps(1.0)
    assert value == pytest.approx(gaussian_delta_oracle(1.0, 1.0), abs=1e-6)

  @pytest.mark.parametrize('sigma,k', [(1.0, 3), (0.5, 20), (3.0, 1000)])
  def test_gaussian_grid_of_eps(self, sigma, k):
    acct, mu = gaussian_acct(sigma, k), math.sqrt(k) / sigma
    for eps in np.linspace(0, 3 * mu * mu, 12):
      assert acct.delta_of_eps(eps) == pytest.approx(gaussian_delta_oracle(mu, eps), abs=1e-6)

  def test_negative_eps(self):
    value = gaussian_acct(1.0, 2).delta_of_eps(-0.5)
    assert value == pytest.approx(gaussian_hs(math.sqrt(2), math.exp(-0.5)), abs=1e-9)

  def test_rr(self):
    acct = Accountant(LogPhiLedger().append(PhiTerm.rr(E_RR)))
    for eps in (0.0, 0.4, 0.9):
      assert acct.delta_of_eps(eps) == pytest.approx(E_RR - math.exp(eps) * (1 - E_RR), abs=1e-14)
    assert acct.delta_of_eps(1.0) == pytest.approx(0.0, abs=1e-14)

  def test_single_mixture_matches_exact(self):
    acct = Accountant(LogPhiLedger().append(PhiTerm.quad_mixture(1.0, 0.3, 'remove')))
    for eps in (0.1, 0.5, 1.5):
      res = acct.delta_of_eps(eps, full_output=True)
      exact = subsampled_gaussian_hockey_stick(1.0, 0.3, 'remove', math.exp(eps))
      assert res.delta_p == pytest.approx(exact, abs=1e-12)

  def test_mixed_ledger(self):
    acct = Accountant(LogPhiLedger().append(PhiTerm.rr(0.6)).append(PhiTerm.gaussian(1.5)))
    for eps in (0.0, 0.5, 2.0):
      assert acct.delta_of_eps(eps) == pytest.approx(mixed_oracle(1.5, 0.6, eps), abs=1e-9)

  def test_nan(self):
    with pytest.raises(ValueError, match='NaN'):
      gaussian_acct(1.0).delta_of_eps(math.nan)

  def test_queries_do_not_mutate(self):
    acct = gaussian_acct(1.0, 3)
    before = acct.ledger.terms
    acct.delta_of_eps(0.5)
    acct.eps_of_delta(1e-3)
    assert acct.ledger.terms == before

  def test_compose_returns_new(self):
    base = gaussian_acct(1.0)
    more = base.compose(PhiTerm.gaussian(1.0), 3)
    assert base.ledger.terms[0][1] == 1 and more.ledger.terms[0][1] == 4

  @settings(max_examples=20, deadline=None)
  @given(st.lists(st.floats(-2.0, 8.0), min_size=2, max_size=6))
  def test_monotone_and_bounded(self, eps_values):
    pair = DiscretePair.from_probs([0.6, 0.3, 0.1], [0.5, 0.5, 0.0])
    acct = Accountant(LogPhiLedger().append(PhiTerm.discrete(pair)).append(PhiTerm.gaussian(2.0)))
    eps_values = sorted(eps_values)
    deltas = [acct.delta_of_eps(e) for e in eps_values]
    assert all(a >= b - 1e-10 for a, b in zip(deltas, deltas[1:]))
    assert all(acct.inf_mass - 1e-12 <= d <= 1 for d in deltas)


class TestEpsOfDelta:

  def test_golden_gaussian(self):
    assert gaussian_acct(1.0).eps_of_delta(0.3) == pytest.approx(0.277, abs=1e-3)

  def test_golden_rr(self):
    acct = Accountant(LogPhiLedger().append(PhiTerm.rr(E_RR)))
    assert acct.eps_of_delta(0.3) == pytest.approx(0.471, abs=1e-3)

  def test_round_trip(self):
    acct = gaussian_acct(1.0)
    assert acct.eps_of_delta(acct.delta_of_eps(1.0)) == pytest.approx(1.0, abs=1e-6)

  @pytest.mark.parametrize('eps', [0.3, 2.0, 6.0])
  def test_round_trip_composed(self, eps):
    acct = Accountant(LogPhiLedger().append(PhiTerm.quad_mixture(1.0, 0.5), 50))
    assert acct.eps_of_delta(acct.delta_of_eps(eps)) == pytest.approx(eps, abs=1e-6)

  def test_large_eps_against_oracle(self):
    # The answer sits near eps = 92, where delta needs the tilted single-CDF form.
    mu = 10.0
    eps = gaussian_acct(1.0, 100).eps_of_delta(1e-5)
    expected = accountant_module.optimize.brentq(
        lambda e: gaussian_delta_oracle(mu, e) - 1e-5, 50, 150, xtol=1e-12)
    assert eps == pytest.approx(expected, abs=1e-6)

  def test_zero_when_already_private(self):
    assert gaussian_acct(100.0).eps_of_delta(0.9) == 0.0

  def test_bad_delta(self):
    with pytest.raises(ValueError, match=r'\(0, 1\)'):
      gaussian_acct(1.0).eps_of_delta(1.0)

  def test_full_output(self):
    res = gaussian_acct(1.0).eps_of_delta(0.3, full_output=True)
    assert res.delta == pytest.approx(0.3, abs=1e-7)
    assert res.error == accountant_module.EPS_TOL

  def test_custom_curve(self):
    assert eps_from_delta_curve(lambda e: math.exp(-e), 0.25) == pytest.approx(math.log(4),
                                                                               abs=1e-8)


class TestTiltedRoute:

  @pytest.mark.parametrize('eps', [1.5, 3.0, 5.0])
  def test_matches_two_cdf_route(self, eps, monkeypatch):
    ledger = LogPhiLedger().append(PhiTerm.quad_mixture(1.0, 0.5), 40)
    tilted = Accountant(ledger).delta_of_eps(eps)
    monkeypatch.setattr(accountant_module, 'TILT_EPS', math.inf)
    plain = Accountant(ledger).delta_of_eps(eps)
    assert tilted == pytest.approx(plain, abs=1e-10)

  @pytest.mark.parametrize('eps', [20.0, 40.0, 60.0])
  def test_relative_accuracy_far_out(self, eps):
    value = gaussian_acct(1.0, 100).delta_of_eps(eps)
    assert value == pytest.approx(gaussian_delta_oracle(10.0, eps), rel=1e-4)


class TestMassAtInfinity:

  def pair(self):
    return DiscretePair.from_probs([0.5, 0.4, 0.1], [0.5, 0.5, 0.0])

  def test_two_compositions(self):
    acct = Accountant(LogPhiLedger().append(PhiTerm.discrete(self.pair()), 2))
    assert acct.inf_mass == pytest.approx(0.19, abs=1e-15)
    for eps in (0.0, 1.0, 10.0, 100.0):
      assert acct.delta_of_eps(eps) >= 0.19 - 1e-15

  def test_matches_product_pair(self):
    acct = Accountant(LogPhiLedger().append(PhiTerm.discrete(self.pair()), 2))
    prod = compose_pairs(DominatingPair.discrete(self.pair()), DominatingPair.discrete(self.pair()))
    swapped = prod.swap()
    for eps in (0.0, 0.3, 1.0):
      brute = max(prod.hockey_stick(math.exp(eps)), swapped.hockey_stick(math.exp(eps)))
      assert acct.delta_of_eps(eps) == pytest.approx(brute, abs=1e-12)

  def test_no_finite_eps(self):
    acct = Accountant(LogPhiLedger().append(PhiTerm.discrete(self.pair()), 2))
    with pytest.raises(NoFiniteEpsilon, match='no finite epsilon'):
      acct.eps_of_delta(0.15)

  def test_eps_above_inf_mass(self):
    pair = DiscretePair.from_probs([0.6, 0.3, 0.1], [0.3, 0.7, 0.0])
    acct = Accountant(LogPhiLedger().append(PhiTerm.discrete(pair), 2))
    eps = acct.eps_of_delta(0.2)
    assert eps > 0
    # delta(eps) is a step function here, so the root is a jump.
    assert acct.delta_of_eps(eps + 1e-7) <= 0.2 < acct.delta_of_eps(eps - 1e-7)


class TestHeterogeneous:

  def ledger(self, sigma, k):
    ledger = LogPhiLedger()
    for i in range(k):
      ledger = ledger.append(PhiTerm.gaussian(sigma) if i % 2 == 0 else PhiTerm.rr(0.52))
    return ledger

  def test_monotone_in_sigma(self):
    values = [Accountant(self.ledger(s, 10)).delta_of_eps(2.0) for s in (0.3, 0.5, 1.0, 5.0)]
    assert all(a >= b for a, b in zip(values, values[1:]))

  def test_two_steps_against_brute_force(self):
    value = Accountant(self.ledger(0.5, 2)).delta_of_eps(2.0)
    prod = compose_pairs(DominatingPair.rr(0.52), DominatingPair.discrete(discretized_gaussian(0.5)),
                         atom_budget=10 ** 6)
    assert value == pytest.approx(prod.hockey_stick(math.exp(2.0)), abs=1e-4)
    assert value == pytest.approx(mixed_oracle(0.5, 0.52, 2.0), abs=1e-10)


class TestSequences:

  def test_pointwise_max(self):
    add = Accountant(LogPhiLedger().append(PhiTerm.quad_mixture(1.0, 0.2, 'add'), 30))
    rem = Accountant(LogPhiLedger().append(PhiTerm.quad_mixture(1.0, 0.2, 'remove'), 30))
    both = delta_of_eps([add, rem], 0.5)
    assert both == max(add.delta_of_eps(0.5), rem.delta_of_eps(0.5))
    eps = eps_of_delta([add, rem], 1e-3)
    assert max(add.delta_of_eps(eps), rem.delta_of_eps(eps)) == pytest.approx(1e-3, rel=1e-5)

  def test_budget_failure_names_orientation(self):
    from afa.quadrature import QuadConfig
    cfg = QuadConfig(abs_tol=1e-15, nodes_per_panel=4, max_panels=2)
    acct = Accountant(LogPhiLedger().append(PhiTerm.gaussian(0.3), 50), cfg)
    with pytest.raises(QuadratureError, match='orientation P'):
      acct.delta_of_eps(0.5)
