import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from afa.divergence import DiscretePair, PrivacyProfile, hockey_stick
from afa.dominating import (AtomBudgetError, DominatingPair, SamplingScheme, amplify,
                            compose_pairs, dominate_full_range, hs_closure,
                            laplace_hockey_stick, pair_from_profile,
                            subsample_profile_symmetric, subsampled_gaussian_hockey_stick)

ALPHAS = [0.5, 1.0, 2.0, 4.0]


def gaussian_hs(sigma, alpha):
  """Closed-form H_alpha(N(1, s^2) || N(0, s^2))."""
  mu = 1 / sigma
  eps = math.log(alpha)
  return stats.norm.cdf(mu / 2 - eps / mu) - alpha * stats.norm.cdf(-mu / 2 - eps / mu)


def mixture_hs_quad(sigma, gamma, relation, alpha):
  """Independent oracle: direct integration of (p - alpha q)_+."""
  n0 = lambda o: stats.norm.pdf(o, 0, sigma)
  n1 = lambda o: stats.norm.pdf(o, 1, sigma)
  if relation == 'remove':
    p, q = lambda o: (1 - gamma) * n0(o) + gamma * n1(o), n0
  else:
    p, q = n1, lambda o: (1 - gamma) * n1(o) + gamma * n0(o)
  val, _ = integrate.quad(lambda o: max(p(o) - alpha * q(o), 0.0), -40, 40, limit=400,
                          epsabs=1e-13, points=[0.5])
  return val


# A toy mechanism on datasets of bits: the sum of the records plus noise Z with
# a symmetric three-point law. (Z + 1, Z) dominates it under add/remove and
# replace neighbours.
NOISE = np.array([0.3, 0.4, 0.3])
OUTPUTS = 8


def toy(total):
  out = np.zeros(OUTPUTS)
  out[total:total + 3] += NOISE
  return out


def poisson_output(data, gamma):
  out = np.zeros(OUTPUTS)
  for coins in itertools.product([0, 1], repeat=len(data)):
    weight = np.prod([gamma if c else 1 - gamma for c in coins])
    out += weight * toy(sum(d for d, c in zip(data, coins) if c))
  return out


def subset_output(data, m):
  subsets = list(itertools.combinations(range(len(data)), m))
  return sum(toy(sum(data[i] for i in s)) for s in subsets) / len(subsets)


def brute_hs(p, q, alpha):
  return float(np.maximum(p - alpha * q, 0).sum())


def toy_pair(relation):
  return DominatingPair.discrete(
      DiscretePair.from_probs(np.r_[0, NOISE], np.r_[NOISE, 0]), relation)


class TestClosedForms:

  @pytest.mark.parametrize('relation', ['add', 'remove'])
  @pytest.mark.parametrize('alpha', [0.3, 1.0, 1.7, 5.0])
  def test_subsampled_gaussian_matches_integration(self, relation, alpha):
    exact = subsampled_gaussian_hockey_stick(1.0, 0.3, relation, alpha)
    assert exact == pytest.approx(mixture_hs_quad(1.0, 0.3, relation, alpha), abs=1e-9)

  def test_laplace_matches_integration(self):
    lam, alpha = 0.8, 1.4
    p = lambda o: stats.laplace.pdf(o, 0, lam)
    q = lambda o: stats.laplace.pdf(o, 1, lam)
    cross = (1 - lam * math.log(alpha)) / 2
    direct, _ = integrate.quad(lambda o: max(p(o) - alpha * q(o), 0), -30, 30,
                               points=[0, cross, 1], limit=200, epsabs=1e-13)
    assert laplace_hockey_stick(lam, alpha) == pytest.approx(direct, abs=1e-10)

  def test_gamma_one_is_gaussian(self):
    for alpha in (0.5, 2.0):
      assert subsampled_gaussian_hockey_stick(2.0, 1.0, 'remove', alpha) == pytest.approx(
          gaussian_hs(2.0, alpha), abs=1e-12)


class TestPairFromProfile:

  def test_rr_profile(self):
    rr = DiscretePair.randomized_response(0.75)
    pair = pair_from_profile(PrivacyProfile.of_pair(rr))
    for alpha in (1.0, math.e, math.e ** 2):
      assert pair.hockey_stick(alpha) == pytest.approx(hockey_stick(rr, alpha), abs=1e-3)

  def test_floor_profile_gives_identical_pair(self):
    pair = pair_from_profile(PrivacyProfile.identical())
    assert np.allclose(pair.hockey_stick(np.array([0.2, 1.0, 3.0])), [0.8, 0.0, 0.0],
                       atol=1e-9)

  def test_gaussian_profile(self):
    pair = pair_from_profile(PrivacyProfile.gaussian(1.0))
    assert pair.hockey_stick(math.e) == pytest.approx(gaussian_hs(1.0, math.e), abs=2e-3)
    assert pair.provenance == 'profile-derived'

  def test_rejects_nan(self):
    with pytest.raises(ValueError, match='NaN'):
      pair_from_profile(lambda a: np.full_like(np.asarray(a, dtype=float), np.nan))


class TestClosure:

  def test_valid_profile_is_fixed_point(self):
    h = PrivacyProfile.gaussian(1.0)
    closed = hs_closure(h)
    alphas = np.exp(np.linspace(-3, 3, 50))
    assert np.allclose(closed(alphas), h(alphas), atol=1e-4)

  def test_nonconvex_tail(self):
    h = lambda a: np.minimum(1.0, 2.0 - np.asarray(a, dtype=float)).clip(0)
    closed = hs_closure(h)
    alphas = np.linspace(0, 4, 81)
    assert (closed(alphas) <= h(alphas) + 1e-12).all()
    assert np.allclose(closed(alphas), np.maximum(1 - alphas / 2, 0), atol=1e-12)
    closed.check(alphas)

  def test_bump_removed(self):
    base = PrivacyProfile.gaussian(1.0)
    bumpy = lambda a: base(a) + 0.05 * (np.abs(np.asarray(a, dtype=float) - 2) < 0.2)
    closed = hs_closure(bumpy)
    grid = np.concatenate([[0.0], np.exp(np.linspace(-5, 5, 200))])
    closed.check(grid)
    assert (closed(grid) <= bumpy(grid) + 1e-12).all()
    # The chord across the removed bump sits just above the convex base.
    assert closed(2.0) < bumpy(2.0) - 0.04
    assert base(2.0) - 1e-9 <= closed(2.0) <= base(2.0) + 5e-3


class TestCompose:

  def test_rr_self_composition(self):
    rr = DominatingPair.rr(0.75)
    both = compose_pairs(rr, rr)
    assert both.to_discrete().logp.size == 4
    # Brute force over the four outcomes (p1 p2, q1 q2).
    p = np.outer([0.75, 0.25], [0.75, 0.25]).ravel()
    q = np.outer([0.25, 0.75], [0.25, 0.75]).ravel()
    for alpha in (0.5, 1.0, 2.0, 9.0):
      assert both.hockey_stick(alpha) == pytest.approx(brute_hs(p, q, alpha), abs=1e-14)
    assert both.hockey_stick(1.0) == pytest.approx(0.5, abs=1e-14)

  def test_identical_pair_is_neutral(self):
    rr = DominatingPair.rr(0.75)
    same = DominatingPair.discrete(DiscretePair.from_probs([0.4, 0.6], [0.4, 0.6]))
    both = compose_pairs(rr, same)
    alphas = np.array([0.2, 1.0, 2.5])
    assert np.allclose(both.hockey_stick(alphas), rr.hockey_stick(alphas), atol=1e-14)

  def test_gaussian_self_composition(self):
    g = DominatingPair.gaussian(1.0)
    both = compose_pairs(g, g)
    for alpha in (0.5, 1.0, math.e, 8.0):
      value = both.hockey_stick(alpha)
      assert value == pytest.approx(gaussian_hs(1 / math.sqrt(2), alpha), abs=2e-3)
      assert value >= gaussian_hs(1 / math.sqrt(2), alpha) - 1e-12

  def test_inf_masses_combine(self):
    a = DominatingPair.discrete(DiscretePair.from_probs([0.5, 0.4, 0.1], [0.5, 0.5, 0.0]))
    both = compose_pairs(a, a).to_discrete()
    assert both.p_inf == pytest.approx(0.19, abs=1e-15)

  def test_budget_error_advises_ledger(self):
    rr = DominatingPair.discrete(DiscretePair.from_probs(
        np.full(100, 0.01), np.linspace(1, 2, 100) / np.linspace(1, 2, 100).sum()))
    with pytest.raises(AtomBudgetError, match='characteristic-function ledger'):
      compose_pairs(rr, rr, atom_budget=50)

  def test_relation_mismatch(self):
    with pytest.raises(ValueError, match='cannot compose'):
      compose_pairs(DominatingPair.rr(0.7, 'add'), DominatingPair.rr(0.7, 'remove'))

  @settings(max_examples=25, deadline=None)
  @given(st.floats(0.55, 0.95), st.floats(0.55, 0.95), st.floats(0.1, 10.0))
  def test_product_matches_brute_force(self, p1, p2, alpha):
    both = compose_pairs(DominatingPair.rr(p1), DominatingPair.rr(p2))
    p = np.outer([p1, 1 - p1], [p2, 1 - p2]).ravel()
    q = np.outer([1 - p1, p1], [1 - p2, p2]).ravel()
    assert both.hockey_stick(alpha) == pytest.approx(brute_hs(p, q, alpha), abs=1e-12)


class TestAmplify:

  def test_full_sampling_keeps_pair(self):
    rr = DominatingPair.rr(0.75)
    out = amplify(rr, SamplingScheme('poisson', 1.0), 'remove')
    alphas = np.array([0.5, 1.0, 2.0])
    assert np.allclose(out.hockey_stick(alphas), rr.hockey_stick(alphas), atol=1e-14)

  def test_gaussian_becomes_named_mixture(self):
    out = amplify(DominatingPair.gaussian(2.0), SamplingScheme('poisson', 0.01), 'remove')
    assert out.kind == 'subsampled_gaussian'
    assert out.params == (2.0, 0.01, 'remove')

  def test_joint_convexity_identity_on_rr(self):
    rr = DominatingPair.rr(0.75)
    gamma = 0.5
    out = amplify(rr, SamplingScheme('poisson', gamma), 'remove')
    for alpha_new in (1.5, 2.0, 4.0):
      alpha = 1 + (alpha_new - 1) / gamma
      assert out.hockey_stick(alpha_new) == pytest.approx(
          gamma * rr.hockey_stick(alpha), abs=1e-12)

  def test_relation_checks(self):
    with pytest.raises(ValueError, match='replace pair'):
      amplify(DominatingPair.rr(0.7), SamplingScheme('subset', 0.5), 'add')
    with pytest.raises(ValueError, match='Poisson'):
      amplify(DominatingPair.rr(0.7, 'replace'), SamplingScheme('poisson', 0.5), 'add')

  def test_bad_gamma(self):
    with pytest.raises(ValueError, match='gamma'):
      SamplingScheme('poisson', 0.0)

  @pytest.mark.parametrize('gamma', [0.1, 0.5, 0.9])
  def test_poisson_dominance_brute_force(self, gamma):
    scheme = SamplingScheme('poisson', gamma)
    add = amplify(toy_pair('symmetric'), scheme, 'add')
    remove = amplify(toy_pair('symmetric'), scheme, 'remove')
    for n in range(4):
      for data in itertools.product([0, 1], repeat=n):
        for extra in (0, 1):
          big = poisson_output(list(data) + [extra], gamma)
          small = poisson_output(list(data), gamma)
          for alpha in ALPHAS:
            assert brute_hs(big, small, alpha) <= remove.hockey_stick(alpha) + 1e-12
            assert brute_hs(small, big, alpha) <= add.hockey_stick(alpha) + 1e-12

  @pytest.mark.parametrize('n,m', [(2, 1), (3, 2), (4, 1), (4, 2)])
  def test_subset_dominance_brute_force(self, n, m):
    scheme = SamplingScheme('subset', m / n)
    curves = [amplify(toy_pair('replace'), scheme, d) for d in ('add', 'remove')]
    for data in itertools.product([0, 1], repeat=n):
      for i, value in itertools.product(range(n), (0, 1)):
        other = list(data)
        other[i] = value
        a, b = subset_output(list(data), m), subset_output(other, m)
        for alpha in ALPHAS:
          bound = max(c.hockey_stick(alpha) for c in curves)
          assert brute_hs(a, b, alpha) <= bound + 1e-12


class TestSymmetricSubsampling:

  def test_branches_agree_at_one(self):
    pair, scheme = DominatingPair.gaussian(1.0), SamplingScheme('poisson', 0.5)
    rem = amplify(pair, scheme, 'remove').hockey_stick(1.0)
    add = amplify(pair, scheme, 'add').hockey_stick(1.0)
    assert rem == pytest.approx(add, abs=1e-12)
    assert subsample_profile_symmetric(pair, scheme, 1.0) == pytest.approx(rem, abs=1e-12)

  def test_high_alpha_uses_remove(self):
    value = subsample_profile_symmetric(DominatingPair.gaussian(1.0),
                                        SamplingScheme('poisson', 0.5), 2.0)
    assert value == pytest.approx(mixture_hs_quad(1.0, 0.5, 'remove', 2.0), abs=1e-9)

  def test_low_alpha_uses_add(self):
    value = subsample_profile_symmetric(DominatingPair.gaussian(1.0),
                                        SamplingScheme('poisson', 0.5), 0.5)
    assert value == pytest.approx(mixture_hs_quad(1.0, 0.5, 'add', 0.5), abs=1e-9)


class TestFullRange:

  def test_gaussian_unchanged(self):
    g = DominatingPair.gaussian(1.0)
    out = dominate_full_range(g)
    alphas = np.array([0.25, 0.5, 1.0, 2.0, 4.0])
    assert np.allclose(out.hockey_stick(alphas), g.hockey_stick(alphas), atol=1e-4)

  def test_identical_pair(self):
    same = DominatingPair.discrete(DiscretePair.from_probs([0.5, 0.5], [0.5, 0.5]))
    out = dominate_full_range(same)
    alphas = np.array([0.25, 0.5, 2.0])
    assert np.allclose(out.hockey_stick(alphas), np.maximum(1 - alphas, 0), atol=1e-9)

  def test_rr_both_orientations(self):
    rr = DiscretePair.randomized_response(0.75)
    out = dominate_full_range(DominatingPair.rr(0.75))
    for alpha in (0.25, 0.5, 2.0, 4.0):
      brute = max(hockey_stick(rr, alpha), hockey_stick(rr.swap(), alpha))
      assert out.hockey_stick(alpha) == pytest.approx(brute, abs=1e-9)

  def test_needs_symmetric_relation(self):
    with pytest.raises(ValueError, match='symmetric'):
      dominate_full_range(DominatingPair.rr(0.75, 'add'))


class TestDuality:

  @pytest.mark.parametrize('alpha', [0.3, 1.0, 2.0, 6.0])
  def test_add_remove_swap(self, alpha):
    rem = DominatingPair.subsampled_gaussian(1.0, 0.2, 'remove').to_discrete()
    swapped = DominatingPair.discrete(rem, 'remove').swap()
    assert swapped.relation == 'add'
    assert swapped.hockey_stick(alpha) == pytest.approx(hockey_stick(rem.swap(), alpha),
                                                        abs=1e-12)

  def test_profile_invariants_for_every_kind(self):
    pairs = [DominatingPair.gaussian(1.0), DominatingPair.laplace(1.0),
             DominatingPair.rr(0.7), DominatingPair.subsampled_gaussian(1.0, 0.3, 'add'),
             compose_pairs(DominatingPair.rr(0.7), DominatingPair.rr(0.6))]
    grid = np.concatenate([[0.0], np.exp(np.linspace(-6, 6, 199))])
    for pair in pairs:
      pair.profile().check(grid)
