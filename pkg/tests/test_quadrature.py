import math

import numpy as np
import pytest
from scipy import integrate as sp_integrate
from scipy import stats

from afa.divergence import DiscretePair
from afa.phi import LogPhiLedger, PhiTerm, ledger_eval
from afa.quadrature import (QuadConfig, QuadratureError, gauss_legendre, integrate,
                            levy_cdf, map_infinite)


def gaussian_ledger(sigma, k):
  return LogPhiLedger().append(PhiTerm.gaussian(sigma), k)


def gaussian_loss_cdf(sigma, k, x):
  """The composed loss is N(k mu^2 / 2, k mu^2) with mu = 1 / sigma."""
  var = k / sigma ** 2
  return stats.norm.cdf(x, loc=var / 2, scale=math.sqrt(var))


class TestIntegrate:

  def test_polynomial(self):
    res = integrate(lambda x: x * x, 0.0, 1.0)
    assert res.value == pytest.approx(1 / 3, abs=1e-14)
    assert res.converged

  def test_sine(self):
    assert integrate(np.sin, 0.0, math.pi).value == pytest.approx(2.0, abs=1e-12)

  def test_zero(self):
    assert integrate(np.zeros_like, 0.0, 1.0).value == 0.0

  def test_empty_interval(self):
    assert integrate(np.exp, 2.0, 2.0).value == 0.0

  def test_reversed_interval(self):
    with pytest.raises(ValueError, match='a < b'):
      integrate(np.exp, 1.0, 0.0)

  def test_open_rule_skips_endpoint_singularity(self):
    res = integrate(lambda x: np.sin(x) / x, 0.0, 1.0)
    assert res.value == pytest.approx(0.9460830703671830, abs=1e-14)

  def test_vector_valued(self):
    res = integrate(lambda x: np.stack([x, x ** 2], axis=1), 0.0, 2.0)
    assert np.allclose(res.value, [2.0, 8 / 3], atol=1e-13)

  def test_budget_exhaustion_flags(self):
    cfg = QuadConfig(abs_tol=1e-14, nodes_per_panel=4, max_panels=4)
    res = integrate(lambda x: np.sin(60 * x), 0.0, 10.0, cfg)
    assert not res.converged
    assert res.error > cfg.abs_tol

  def test_half_line(self):
    res = integrate(lambda x: np.exp(-x), 0.0, math.inf)
    assert res.value == pytest.approx(1.0, abs=1e-12)

  def test_gauss_legendre_exact_degree(self):
    nodes, weights = gauss_legendre(5)
    assert np.isclose(weights @ nodes ** 9, 0.0, atol=1e-15)
    assert np.isclose(weights @ nodes ** 8, 2 / 9, atol=1e-15)

  def test_config_validation(self):
    with pytest.raises(ValueError, match='abs_tol'):
      QuadConfig(abs_tol=0.0)
    with pytest.raises(ValueError, match='nodes_per_panel'):
      QuadConfig(nodes_per_panel=1)


class TestMapInfinite:

  def test_standard_normal(self):
    res = integrate(stats.norm.pdf, -math.inf, math.inf)
    assert res.value == pytest.approx(1.0, abs=1e-12)

  def test_odd_function(self):
    res = integrate(lambda x: x * np.exp(-x * x), -math.inf, math.inf)
    assert abs(res.value) < 1e-12

  def test_shifted_normal(self):
    res = integrate(lambda x: stats.norm.pdf(x, 3, 2), -math.inf, math.inf)
    assert res.value == pytest.approx(1.0, abs=1e-12)

  def test_manual_change_of_variables(self):
    u = np.linspace(-0.9, 0.9, 7)
    x, jac = map_infinite(u)
    assert np.allclose(x, u / (1 - u * u))
    assert np.allclose(jac, (1 + u * u) / (1 - u * u) ** 2)


class TestLevyCdf:

  def test_single_gaussian_median(self):
    assert levy_cdf(gaussian_ledger(1.0, 1), 'P', 0.5) == pytest.approx(0.5, abs=1e-10)

  def test_single_gaussian_one_sd(self):
    value = levy_cdf(gaussian_ledger(1.0, 1), 'P', 1.5)
    assert value == pytest.approx(stats.norm.cdf(1.0), abs=1e-9)

  @pytest.mark.parametrize('x', [0.5, 1.5])
  def test_inversion_path(self, x):
    # Two uses at sqrt(2) give the same loss law as one use at 1, but are inverted.
    value = levy_cdf(gaussian_ledger(math.sqrt(2), 2), 'P', x)
    assert value == pytest.approx(stats.norm.cdf(x - 0.5), abs=1e-10)

  def test_hundred_gaussians_at_mean(self):
    assert levy_cdf(gaussian_ledger(10.0, 100), 'P', 0.5) == pytest.approx(0.5, abs=1e-8)

  @pytest.mark.parametrize('sigma,k', [(1.0, 2), (2.0, 10), (0.5, 7)])
  def test_gaussian_window(self, sigma, k):
    sd = math.sqrt(k) / sigma
    xs = k / (2 * sigma ** 2) + np.linspace(-5 * sd, 5 * sd, 50)
    values, err = levy_cdf(gaussian_ledger(sigma, k), 'P', xs, full_output=True)
    assert np.max(np.abs(values - gaussian_loss_cdf(sigma, k, xs))) <= 1e-8
    assert np.all(np.diff(values) >= -1e-12)

  def test_folded_integrand_limit(self):
    # (1/t) Im(exp(-itx) phi(t)) tends to (mean - x) as t -> 0.
    ledger, x = gaussian_ledger(1.0, 3), 0.2
    t = 1e-6
    value = np.imag(np.exp(-1j * t * x + ledger_eval(ledger, t, 'P'))) / t
    assert value == pytest.approx(1.5 - x, abs=1e-9)

  def test_rr_composition_exact(self):
    ledger = LogPhiLedger().append(PhiTerm.rr(0.75), 3)
    ell = math.log(3)
    # Loss is ell * (2B - 3) with B ~ Binomial(3, 0.75) under P.
    for b in range(4):
      x = ell * (2 * b - 3)
      above, below = levy_cdf(ledger, 'P', np.array([x + 1e-9, x - 1e-9]))
      assert above == pytest.approx(stats.binom.cdf(b, 3, 0.75), abs=1e-14)
      assert below == pytest.approx(stats.binom.cdf(b - 1, 3, 0.75), abs=1e-14)
    atom = ledger.split('P').atoms.loss[1]
    assert levy_cdf(ledger, 'P', atom, left=True) == pytest.approx(1 / 64, abs=1e-14)
    assert levy_cdf(ledger, 'P', atom) == pytest.approx(10 / 64, abs=1e-14)

  def test_mass_at_infinity_caps_cdf(self):
    pair = DiscretePair.from_probs([0.6, 0.3, 0.1], [0.5, 0.5, 0.0])
    ledger = LogPhiLedger().append(PhiTerm.discrete(pair), 2)
    assert levy_cdf(ledger, 'P', 1e6) == pytest.approx(0.81, abs=1e-14)

  def test_laplace_against_numeric_cdf(self):
    # Laplace + Gaussian has no atoms in the sum; compare with a direct convolution.
    ledger = LogPhiLedger().append(PhiTerm.laplace(1.0)).append(PhiTerm.gaussian(1.0))
    term = PhiTerm.laplace(1.0)
    loss, log_mass = term.atoms('P')
    x = 0.7

    def conv(y):
      return term.continuous_cdf(x - y) * stats.norm.pdf(y, 0.5, 1.0)
    smooth, _ = sp_integrate.quad(conv, -12, 12, points=[x - 1, x + 1], epsabs=1e-13)
    atomic = sum(math.exp(m) * stats.norm.cdf(x - l, 0.5, 1.0) for l, m in zip(loss, log_mass))
    assert levy_cdf(ledger, 'P', x) == pytest.approx(atomic + smooth, abs=1e-10)

  def test_monotone_mixture(self):
    ledger = LogPhiLedger().append(PhiTerm.quad_mixture(1.0, 0.5), 40)
    mean, var = ledger.loss_moments('P')
    xs = mean + np.linspace(-4, 4, 50) * math.sqrt(var)
    values = levy_cdf(ledger, 'P', xs)
    assert np.all(np.diff(values) >= -1e-10)
    assert 0 <= values[0] < values[-1] <= 1

  def test_nan_rejected(self):
    with pytest.raises(ValueError, match='NaN'):
      levy_cdf(gaussian_ledger(1.0, 2), 'P', math.nan)

  def test_bad_direction(self):
    with pytest.raises(ValueError, match='direction'):
      levy_cdf(gaussian_ledger(1.0, 2), 'R', 0.0)

  def test_budget_exhaustion_raises(self):
    cfg = QuadConfig(abs_tol=1e-15, nodes_per_panel=4, max_panels=2)
    with pytest.raises(QuadratureError):
      levy_cdf(gaussian_ledger(0.3, 50), 'P', 100.0, cfg)
