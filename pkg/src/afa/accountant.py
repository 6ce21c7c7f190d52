"""The Fourier accountant: delta(eps) and eps(delta) of a composed ledger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from scipy import optimize

from afa.phi import LogPhiLedger, PhiTerm
from afa.quadrature import QuadConfig, QuadratureError, levy_cdf, levy_tilted_survival

EPS_TOL = 1e-8
# Above this eps, ledgers without atoms use the single-CDF form of delta.
TILT_EPS = 1.0


class NoFiniteEpsilon(ValueError):
  """The target delta is at or below the mass at infinity."""


@dataclass(frozen=True)
class DeltaResult:
  delta: float
  error: float
  delta_p: float
  delta_q: float


@dataclass(frozen=True)
class EpsResult:
  eps: float
  error: float
  delta: float


@dataclass(frozen=True, eq=False)
class Accountant:
  """Tracks a composition through its log characteristic functions.

  Queries never modify the accountant. Levy integrands are memoised per
  accountant, so repeated queries (e.g. inside eps_of_delta) reuse nodes.
  """

  ledger: LogPhiLedger = field(default_factory=LogPhiLedger)
  quad: QuadConfig = QuadConfig()
  _cache: dict = field(default_factory=dict, compare=False, repr=False)

  def compose(self, term: PhiTerm, count: int = 1) -> 'Accountant':
    return Accountant(self.ledger.append(term, count), self.quad)

  @property
  def inf_mass(self) -> float:
    return max(self.ledger.inf_mass('P'), self.ledger.inf_mass('Q'))

  def _delta_one_side(self, eps: float, first: str, second: str) -> tuple[float, float]:
    """P[eps < L < inf] + P[L = inf] - e^eps Q'[L' < -eps] for one ordering."""
    if not self.ledger.terms:
      return max(0.0, -math.expm1(eps)), 0.0
    ledger, cache = self.ledger, self._cache
    mass = ledger.finite_mass(first)
    single = len(ledger.terms) == 1 and ledger.terms[0][1] == 1
    if eps > TILT_EPS and not single and ledger.split(first) is None:
      return self._delta_tilted(eps, first, mass)
    upper, err_u = levy_cdf(ledger, first, eps, self.quad, full_output=True, cache=cache)
    lower, err_l = levy_cdf(ledger, second, -eps, self.quad, left=True, full_output=True,
                            cache=cache)
    scale = math.exp(eps)
    value = ledger.inf_mass(first) + (mass - upper) - scale * lower
    return value, err_u + scale * err_l

  def _delta_tilted(self, eps: float, first: str, mass: float) -> tuple[float, float]:
    """Same quantity as int_0^inf e^-u P[L > eps + u] du.

    Needs only the first characteristic function, so large eps does not
    multiply the error of the second CDF by e^eps. Used for ledgers without
    atoms.
    """
    value, err = levy_tilted_survival(self.ledger, first, eps, self.quad, self._cache)
    return self.ledger.inf_mass(first) + value, err

  def delta_oriented(self, eps: float, first: str) -> tuple[float, float]:
    """Unclamped delta and error bound of one orientation, first = 'P' or 'Q'."""
    if first not in ('P', 'Q'):
      raise ValueError(f"first must be 'P' or 'Q', got {first!r}")
    return self._delta_one_side(float(eps), first, 'Q' if first == 'P' else 'P')

  def delta_of_eps(self, eps: float, full_output: bool = False):
    """max of the two orientations, clamped to [0, 1].

    Raises:
      QuadratureError: with per-orientation error estimates.
    """
    eps = float(eps)
    if math.isnan(eps):
      raise ValueError('eps must not be NaN')
    parts = {}
    for first, second in (('P', 'Q'), ('Q', 'P')):
      try:
        parts[first] = self._delta_one_side(eps, first, second)
      except QuadratureError as exc:
        raise QuadratureError(f'orientation {first}: {exc}', {first: exc.error}) from exc
    (dp, ep), (dq, eq) = parts['P'], parts['Q']
    delta = min(1.0, max(0.0, dp, dq))
    if full_output:
      return DeltaResult(delta, max(ep, eq), dp, dq)
    return delta

  def eps_of_delta(self, delta: float, full_output: bool = False):
    return eps_from_delta_curve(self.delta_of_eps, delta, self.inf_mass, full_output)


def eps_from_delta_curve(delta_fn, delta: float, inf_mass: float = 0.0,
                         full_output: bool = False):
  """Smallest eps >= 0 with delta_fn(eps) <= delta, to 1e-8 in eps.

  The bracket [0, hi] doubles hi from 1; inside it a bracketing root finder
  (Brent) replaces plain bisection with the same termination width.
  """
  if not 0 < delta < 1:
    raise ValueError(f'delta must lie in (0, 1), got {delta}')
  if delta <= inf_mass:
    raise NoFiniteEpsilon(
        f'no finite epsilon: delta {delta} is at most the mass at infinity {inf_mass}')
  at_zero = delta_fn(0.0)
  if at_zero <= delta:
    return EpsResult(0.0, 0.0, at_zero) if full_output else 0.0
  hi = 1.0
  while delta_fn(hi) >= delta:
    hi *= 2
    if hi > 1e6:
      raise NoFiniteEpsilon(f'delta({hi:g}) still exceeds {delta}')
  root = optimize.brentq(lambda e: delta_fn(e) - delta, 0.0, hi, xtol=EPS_TOL)
  if full_output:
    return EpsResult(root, EPS_TOL, delta_fn(root))
  return root


def delta_of_eps(acct: Accountant | Sequence[Accountant], eps: float) -> float:
  """delta(eps); a sequence of accountants gives their pointwise maximum.

  Composed subsampled mechanisms under add/remove neighbours run one ledger
  per direction and combine them this way.
  """
  if isinstance(acct, Accountant):
    return acct.delta_of_eps(eps)
  return max(a.delta_of_eps(eps) for a in acct)


def eps_of_delta(acct: Accountant | Sequence[Accountant], delta: float) -> float:
  if isinstance(acct, Accountant):
    return acct.eps_of_delta(delta)
  accts = list(acct)
  return eps_from_delta_curve(lambda e: delta_of_eps(accts, e), delta,
                              max(a.inf_mass for a in accts))


def gaussian_delta_oracle(mu: float, eps: float) -> float:
  """Closed-form delta(eps) of the Gaussian mechanism with mu = sqrt(k) / sigma."""
  from scipy import special
  return float(special.ndtr(mu / 2 - eps / mu) - math.exp(eps) * special.ndtr(-mu / 2 - eps / mu))
