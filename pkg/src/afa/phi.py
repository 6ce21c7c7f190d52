"""Characteristic functions of privacy losses and the composition ledger.

Composition multiplies characteristic functions, so the ledger stores the
distinct mechanisms with integer multiplicities and sums their log
characteristic functions. Mass at infinite loss never enters a characteristic
function; each term reports it separately and the ledger combines it as
``1 - prod(1 - p_i)``.

Because multiplicities are integers, the branch of each complex logarithm is
irrelevant once the sum is exponentiated, so principal branches are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np
from scipy import special

from afa.divergence import DiscretePair
from afa.quadrature import gauss_legendre, map_infinite

DIRECTIONS = ('P', 'Q')
_T_CHUNK_ELEMENTS = 2_000_000


def _check_direction(direction: str) -> None:
  if direction not in DIRECTIONS:
    raise ValueError(f"direction must be 'P' or 'Q', got {direction!r}")


def complex_logsumexp(log_mass: np.ndarray, loss: np.ndarray, t: np.ndarray) -> np.ndarray:
  """log sum_j exp(log_mass_j + i t loss_j) for every t, without overflow."""
  t = np.atleast_1d(np.asarray(t, dtype=float))
  if log_mass.size == 0:
    return np.full(t.shape, -np.inf + 0j)
  shift = float(np.max(log_mass))
  weights = np.exp(log_mass - shift)
  out = np.empty(t.shape, dtype=complex)
  step = max(1, _T_CHUNK_ELEMENTS // log_mass.size)
  for start in range(0, t.size, step):
    chunk = t[start:start + step]
    total = np.exp(1j * np.outer(chunk, loss)) @ weights
    with np.errstate(divide='ignore'):
      out[start:start + step] = np.log(total) + shift
  return out


def log_phi_closed_form(kind: str, param: float, t):
  """log phi(t) for the mechanisms with closed forms.

  gaussian: noise scale sigma at sensitivity 1.
  laplace: noise scale lam at sensitivity 1.
  rr: randomized response keeping the true bit with probability p.
  These pairs are symmetric, so the same function serves both directions.
  """
  t = np.asarray(t, dtype=float)
  if kind == 'gaussian':
    if param <= 0:
      raise ValueError('sigma must be positive')
    return -(t * t - 1j * t) / (2 * param * param)
  if kind == 'laplace':
    if param <= 0:
      raise ValueError('lam must be positive')
    up = np.exp(1j * t / param)
    down = np.exp((-1j * t - 1) / param)
    return np.log(0.5 * (up + down + (up - down) / (1 + 2j * t)))
  if kind == 'rr':
    if not 0.5 <= param < 1:
      raise ValueError('p must lie in [0.5, 1)')
    ell = math.log(param / (1 - param))
    return np.log(param * np.exp(1j * t * ell) + (1 - param) * np.exp(-1j * t * ell))
  raise ValueError(f'no closed form for kind {kind!r}')


def log_phi_discrete(pair: DiscretePair, t, direction: str = 'P'):
  """log phi of the finite loss of a discrete pair; phi(0) = 1 - inf mass."""
  _check_direction(direction)
  loss, log_mass = pair.losses(direction)
  if loss.size == 0:
    raise ValueError('pair has no finite-loss outcomes')
  out = complex_logsumexp(log_mass, loss, t)
  return complex(out[0]) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class _MixtureRule:
  """Fixed quadrature rule over the output space of a subsampled Gaussian."""

  log_weight: dict
  loss: dict
  coarse_log_weight: dict
  coarse_loss: dict

  def phi(self, t: np.ndarray, direction: str):
    fine = np.exp(complex_logsumexp(self.log_weight[direction], self.loss[direction], t))
    coarse = np.exp(complex_logsumexp(self.coarse_log_weight[direction],
                                      self.coarse_loss[direction], t))
    return fine, np.abs(fine - coarse)


def mixture_log_densities(sigma: float, gamma: float, relation: str, o):
  """Log densities (P, Q) of the Poisson-subsampled Gaussian pair at o.

  'remove' is ((1 - g) N(0, s^2) + g N(1, s^2), N(0, s^2)) and 'add' is
  (N(1, s^2), (1 - g) N(1, s^2) + g N(0, s^2)).
  """
  o = np.asarray(o, dtype=float)
  base0 = -0.5 * (o / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))
  base1 = -0.5 * ((o - 1) / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))
  with np.errstate(divide='ignore'):
    lg, l1g = math.log(gamma), math.log1p(-gamma) if gamma < 1 else -math.inf
  if relation == 'remove':
    return np.logaddexp(l1g + base0, lg + base1), base0
  if relation == 'add':
    return base1, np.logaddexp(l1g + base1, lg + base0)
  raise ValueError(f"relation must be 'add' or 'remove', got {relation!r}")


def mixture_loss_cdf(sigma: float, gamma: float, relation: str, x, direction: str = 'P'):
  """Exact CDF of the subsampled-Gaussian loss under P or Q.

  The loss log p/q is increasing in o for both relations, so each CDF value
  is a mixture of normal CDFs at the output where the loss crosses x.
  """
  _check_direction(direction)
  x = np.asarray(x, dtype=float)
  var = sigma * sigma
  rest = 1.0 - gamma
  level = x if direction == 'P' else -x
  with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
    if relation == 'remove':
      arg = np.exp(level) - rest
      cut = np.where(arg > 0, var * np.log(np.where(arg > 0, arg, 1.0) / gamma) + 0.5, -np.inf)
      weights = ((rest, 0.0), (gamma, 1.0)) if direction == 'P' else ((1.0, 0.0),)
    elif relation == 'add':
      arg = np.exp(-level) - rest
      cut = np.where(arg > 0, 0.5 - var * np.log(np.where(arg > 0, arg, 1.0) / gamma), np.inf)
      weights = ((1.0, 1.0),) if direction == 'P' else ((rest, 1.0), (gamma, 0.0))
    else:
      raise ValueError(f"relation must be 'add' or 'remove', got {relation!r}")
  if direction == 'P':
    return sum(w * special.ndtr((cut - m) / sigma) for w, m in weights)
  return sum(w * special.ndtr((m - cut) / sigma) for w, m in weights)


def _panel_nodes(edges: np.ndarray, n: int):
  xi, w = gauss_legendre(n)
  half = 0.5 * np.diff(edges)
  mid = 0.5 * (edges[1:] + edges[:-1])
  return (mid[:, None] + half[:, None] * xi).ravel(), (half[:, None] * w).ravel()


@lru_cache(maxsize=64)
def _mixture_rule(sigma: float, gamma: float, relation: str, budget: int,
                  order: int = 10) -> _MixtureRule:
  """Builds the node set once; it is reused for every t.

  Panels in the mapped variable are bisected where the density, its first
  two loss moments or a handful of probe oscillations are poorly resolved,
  until the node budget is spent.
  """
  center, scale = 0.5, 2.0 * sigma
  probes = np.array([0.5, 2.0, 8.0, 32.0, 128.0, 512.0])

  def features(u):
    o, jac = map_infinite(u, center, scale)
    lp, lq = mixture_log_densities(sigma, gamma, relation, o)
    cols = []
    for lw, ls in ((lp, lp - lq), (lq, lq - lp)):
      w = np.exp(lw) * jac
      ls = np.where(np.isfinite(ls), ls, 0.0)
      cols += [w, w * ls, w * ls * ls]
      ph = np.exp(1j * np.outer(ls, probes)) * w[:, None]
      cols += list(ph.real.T) + list(ph.imag.T)
    return np.stack(cols, axis=1)

  def panel_sum(lo, hi):
    nodes, weights = _panel_nodes(np.array([lo, hi]), order)
    return weights @ features(nodes)

  # Density and moments must be near exact; high probes get looser targets.
  probe_tol = np.array([1e-17, 1e-17, 1e-17, 1e-16, 1e-15, 1e-14])
  per_side = np.concatenate([np.full(3, 1e-17), probe_tol, probe_tol])
  tol = np.concatenate([per_side, per_side])

  edges = list(np.linspace(-1.0, 1.0, 17))
  max_panels = max(2, budget // order)
  while len(edges) - 1 < max_panels:
    errs = []
    for lo, hi in zip(edges[:-1], edges[1:]):
      mid = 0.5 * (lo + hi)
      diff = np.abs(panel_sum(lo, hi) - panel_sum(lo, mid) - panel_sum(mid, hi))
      errs.append(np.max(diff / tol))
    errs = np.array(errs)
    if errs.max() < 1:
      break
    room = max_panels - (len(edges) - 1)
    worst = np.argsort(errs)[::-1][:max(1, min(room, len(errs) // 4 + 1))]
    new = [0.5 * (edges[i] + edges[i + 1]) for i in worst]
    edges = sorted(edges + new)
  edges = np.asarray(edges)

  def rule(edge_set, n):
    u, w = _panel_nodes(edge_set, n)
    o, jac = map_infinite(u, center, scale)
    lp, lq = mixture_log_densities(sigma, gamma, relation, o)
    logw = np.log(w * jac)
    keep_p = np.isfinite(lp) & (lp + logw > -745)
    keep_q = np.isfinite(lq) & (lq + logw > -745)
    log_weight = {'P': (lp + logw)[keep_p], 'Q': (lq + logw)[keep_q]}
    # Both densities integrate to one; normalising removes the mass error,
    # which would otherwise dominate the Levy error column near t = 0.
    log_weight = {d: v - special.logsumexp(v) for d, v in log_weight.items()}
    loss = {'P': (lp - lq)[keep_p], 'Q': (lq - lp)[keep_q]}
    return log_weight, loss

  fine_w, fine_l = rule(edges, order)
  coarse_w, coarse_l = rule(edges, order - 2)
  return _MixtureRule(fine_w, fine_l, coarse_w, coarse_l)


def log_phi_quad_mixture(sigma: float, gamma: float, t, direction: str = 'P',
                         relation: str = 'remove', budget: int = 700,
                         full_output: bool = False):
  """log phi of the Poisson-subsampled Gaussian loss by quadrature over outputs.

  The integral ``int p(o) exp(i t L(o)) do`` is evaluated on a fixed node set
  of at most ``budget`` points that is built once and cached, so repeated
  calls for new t only pay for the exponentials. With ``full_output`` an
  absolute error estimate for phi (not its log) is returned as well.
  """
  _check_direction(direction)
  if not sigma > 0 or not 0 < gamma <= 1:
    raise ValueError('need sigma > 0 and 0 < gamma <= 1')
  rule = _mixture_rule(float(sigma), float(gamma), relation, int(budget))
  tv = np.atleast_1d(np.asarray(t, dtype=float))
  phi, err = rule.phi(tv, direction)
  with np.errstate(divide='ignore'):
    log_phi = np.log(phi)
  if np.ndim(t) == 0:
    log_phi, err = complex(log_phi[0]), float(err[0])
  return (log_phi, err) if full_output else log_phi


class AtomicPLD:
  """A finite set of loss atoms with masses, sorted by loss."""

  def __init__(self, loss: np.ndarray, mass: np.ndarray):
    order = np.argsort(loss, kind='stable')
    self.loss = np.asarray(loss, dtype=float)[order]
    self.mass = np.asarray(mass, dtype=float)[order]
    self._cum = np.concatenate([[0.0], np.cumsum(self.mass)])

  @property
  def total_mass(self) -> float:
    return float(self._cum[-1])

  @property
  def size(self) -> int:
    return self.loss.size

  def cdf(self, x, left: bool = False) -> np.ndarray:
    side = 'left' if left else 'right'
    return self._cum[np.searchsorted(self.loss, np.asarray(x, dtype=float), side=side)]

  def phi(self, t) -> np.ndarray:
    with np.errstate(divide='ignore'):
      log_mass = np.log(self.mass)
    return np.exp(complex_logsumexp(log_mass, self.loss, t))

  def convolve(self, other: 'AtomicPLD', budget: int) -> 'AtomicPLD | None':
    if self.size * other.size > 16 * budget:
      return None
    loss = np.add.outer(self.loss, other.loss).ravel()
    mass = np.multiply.outer(self.mass, other.mass).ravel()
    key = np.round(loss, 11)
    uniq, inverse = np.unique(key, return_inverse=True)
    if uniq.size > budget:
      return None
    return AtomicPLD(uniq, np.bincount(inverse, weights=mass))

  def power(self, k: int, budget: int) -> 'AtomicPLD | None':
    result = AtomicPLD(np.zeros(1), np.ones(1))
    base = self
    while k:
      if k & 1:
        result = result.convolve(base, budget)
        if result is None:
          return None
      k >>= 1
      if k:
        base = base.convolve(base, budget)
        if base is None:
          return None
    return result


@dataclass(frozen=True, eq=False)
class PhiTerm:
  """One mechanism's loss characteristic function.

  kind is one of 'gaussian' (sigma), 'laplace' (lam), 'rr' (p), 'discrete'
  (a DiscretePair), 'quad_mixture' (sigma, gamma, relation, budget) or 'grid'
  (a discretised loss from :mod:`afa.discretize`, the side 'lo' or 'hi' and
  optionally the orientation 'PQ' or 'QP' it is tilted for).
  """

  kind: str
  params: tuple

  def __post_init__(self):
    if self.kind == 'gaussian':
      (sigma,) = self.params
      if not sigma > 0:
        raise ValueError('sigma must be positive')
    elif self.kind == 'laplace':
      (lam,) = self.params
      if not lam > 0:
        raise ValueError('lam must be positive')
    elif self.kind == 'rr':
      (p,) = self.params
      if not 0.5 <= p < 1:
        raise ValueError('p must lie in [0.5, 1)')
    elif self.kind == 'discrete':
      if not isinstance(self.params[0], DiscretePair):
        raise ValueError('discrete terms need a DiscretePair')
    elif self.kind == 'quad_mixture':
      sigma, gamma, relation, budget = self.params
      if not sigma > 0 or not 0 < gamma <= 1 or relation not in ('add', 'remove'):
        raise ValueError('quad_mixture needs sigma > 0, 0 < gamma <= 1 and a relation')
      if budget < 20:
        raise ValueError('node budget too small')
    elif self.kind == 'grid':
      if self.params[1] not in ('lo', 'hi'):
        raise ValueError("grid side must be 'lo' or 'hi'")
      if self.params[2:] not in ((), (None,), ('PQ',), ('QP',)):
        raise ValueError("grid orientation must be 'PQ' or 'QP'")
    else:
      raise ValueError(f'unknown term kind {self.kind!r}')

  @classmethod
  def gaussian(cls, sigma: float) -> 'PhiTerm':
    return cls('gaussian', (float(sigma),))

  @classmethod
  def laplace(cls, lam: float) -> 'PhiTerm':
    return cls('laplace', (float(lam),))

  @classmethod
  def rr(cls, p: float) -> 'PhiTerm':
    return cls('rr', (float(p),))

  @classmethod
  def discrete(cls, pair: DiscretePair) -> 'PhiTerm':
    return cls('discrete', (pair,))

  @classmethod
  def quad_mixture(cls, sigma: float, gamma: float, relation: str = 'remove',
                   budget: int = 700) -> 'PhiTerm':
    return cls('quad_mixture', (float(sigma), float(gamma), relation, int(budget)))

  @classmethod
  def grid(cls, grid: Any, side: str, orientation: str | None = None) -> 'PhiTerm':
    return cls('grid', (grid, side, orientation))

  @property
  def key(self) -> tuple:
    return (self.kind,) + tuple(id(p) if isinstance(p, (DiscretePair,)) or self.kind == 'grid'
                                and not isinstance(p, str) else p for p in self.params)

  def total_mass(self, direction: str) -> float:
    """phi(0) of the finite part; below 1 - inf_mass only for truncated grids."""
    if self.kind == 'grid':
      _, log_mass = self.atoms(direction)
      return float(np.exp(log_mass).sum())
    return 1.0 - self.inf_mass(direction)

  def inf_mass(self, direction: str) -> float:
    _check_direction(direction)
    if self.kind == 'discrete':
      pair = self.params[0]
      return pair.p_inf if direction == 'P' else pair.q_inf
    return 0.0

  def log_phi(self, t, direction: str) -> tuple[np.ndarray, np.ndarray]:
    """log phi(t) and an absolute error bound on phi(t)."""
    _check_direction(direction)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    zero = np.zeros(t.shape)
    if self.kind in ('gaussian', 'laplace', 'rr'):
      return log_phi_closed_form(self.kind, self.params[0], t), zero
    if self.kind == 'discrete':
      return log_phi_discrete(self.params[0], t, direction), zero
    if self.kind == 'quad_mixture':
      sigma, gamma, relation, budget = self.params
      return log_phi_quad_mixture(sigma, gamma, t, direction, relation, budget,
                                  full_output=True)
    loss, log_mass = self.atoms(direction)
    return complex_logsumexp(log_mass, loss, t), zero

  def exact_cdf(self, x, direction: str):
    """Closed-form loss CDF of a single use, or None when there is none."""
    _check_direction(direction)
    if self.kind == 'gaussian':
      mu = 1.0 / self.params[0]
      return special.ndtr((np.asarray(x, dtype=float) - mu * mu / 2) / mu)
    if self.kind == 'quad_mixture':
      sigma, gamma, relation, _ = self.params
      return mixture_loss_cdf(sigma, gamma, relation, x, direction)
    return None

  def atoms(self, direction: str):
    """Loss atoms and log masses of the atomic component, or None."""
    if self.kind == 'rr':
      p = self.params[0]
      ell = math.log(p / (1 - p))
      return np.array([ell, -ell]), np.log([p, 1 - p])
    if self.kind == 'laplace':
      lam = self.params[0]
      return np.array([1 / lam, -1 / lam]), np.array([math.log(0.5), math.log(0.5) - 1 / lam])
    if self.kind == 'discrete':
      loss, log_mass = self.params[0].losses(direction)
      return loss, log_mass
    if self.kind == 'grid':
      grid, side, *orientation = self.params
      return grid.atoms(direction, side, *orientation)
    return None

  @property
  def purely_atomic(self) -> bool:
    return self.kind in ('rr', 'discrete', 'grid')

  def continuous_mass(self) -> float:
    if self.kind != 'laplace':
      return 0.0
    return 0.5 * -math.expm1(-1 / self.params[0])

  def continuous_decay(self) -> float:
    """g with |continuous_phi(t)| <= g / t."""
    if self.kind != 'laplace':
      return 0.0
    return 0.25 * (1 + math.exp(-1 / self.params[0]))

  def continuous_cdf(self, x) -> np.ndarray:
    """CDF of the absolutely continuous part of the loss (Laplace only).

    For Lap(0, lam) against Lap(1, lam) the loss is (1 - 2o)/lam on (0, 1),
    where the density is exp(-o/lam) / (2 lam).
    """
    lam = self.params[0]
    x = np.clip(np.asarray(x, dtype=float), -1 / lam, 1 / lam)
    o = 0.5 * (1 - lam * x)
    return 0.5 * (np.exp(-o / lam) - math.exp(-1 / lam))

  def continuous_phi(self, t) -> np.ndarray:
    lam = self.params[0]
    t = np.asarray(t, dtype=float)
    return 0.5 * (np.exp(1j * t / lam) - np.exp((-1j * t - 1) / lam)) / (1 + 2j * t)

  def moments(self, direction: str) -> tuple[float, float]:
    """Mean and variance of the finite loss (normalised to unit mass)."""
    if self.kind == 'gaussian':
      v = 1.0 / self.params[0] ** 2
      return v / 2, v
    if self.kind == 'quad_mixture':
      sigma, gamma, relation, budget = self.params
      rule = _mixture_rule(sigma, gamma, relation, budget)
      w = np.exp(rule.log_weight[direction])
      loss = rule.loss[direction]
      m0 = w.sum()
      m1 = (w * loss).sum() / m0
      return float(m1), float(max((w * loss * loss).sum() / m0 - m1 * m1, 0.0))
    if self.kind == 'laplace':
      lam = self.params[0]
      h = 1e-3 * lam
      lp = log_phi_closed_form('laplace', lam, np.array([h]))[0]
      return float(lp.imag / h), float(max(-2 * lp.real / (h * h), 1e-30))
    loss, log_mass = self.atoms(direction)
    w = np.exp(log_mass - np.max(log_mass))
    w = w / w.sum()
    mean = float(w @ loss)
    return mean, float(max(w @ (loss - mean) ** 2, 0.0))


@dataclass(frozen=True)
class LogPhiLedger:
  """An immutable multiset of PhiTerms with integer multiplicities."""

  terms: tuple = ()
  atom_budget: int = 200_000
  _memo: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

  def __post_init__(self):
    for term, count in self.terms:
      if not isinstance(term, PhiTerm):
        raise TypeError('ledger entries must be PhiTerms')
      if int(count) != count or count < 1:
        raise ValueError('multiplicities must be positive integers')

  def append(self, term: PhiTerm, count: int = 1) -> 'LogPhiLedger':
    if int(count) != count or count < 1:
      raise ValueError('count must be a positive integer')
    merged, found = [], False
    for existing, k in self.terms:
      if existing.key == term.key:
        merged.append((existing, k + int(count)))
        found = True
      else:
        merged.append((existing, k))
    if not found:
      merged.append((term, int(count)))
    return LogPhiLedger(tuple(merged), self.atom_budget)

  def finite_mass(self, direction: str) -> float:
    if all(term.kind != 'grid' for term, _ in self.terms):
      return 1.0 - self.inf_mass(direction)
    return float(math.prod(term.total_mass(direction) ** k for term, k in self.terms))

  def inf_mass(self, direction: str) -> float:
    log_keep = sum(k * math.log1p(-term.inf_mass(direction)) if term.inf_mass(direction) < 1
                   else -math.inf for term, k in self.terms)
    return float(-math.expm1(log_keep)) + 0.0

  def log_phi(self, t, direction: str) -> np.ndarray:
    total = np.zeros(np.atleast_1d(t).shape, dtype=complex)
    for term, k in self.terms:
      lp, _ = term.log_phi(t, direction)
      total = total + k * lp
    return total

  def phi_with_error(self, t, direction: str):
    """phi(t) of the composition and a first-order bound on its error."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    parts = [(term.log_phi(t, direction), k) for term, k in self.terms]
    total = np.zeros(t.shape, dtype=complex)
    for (lp, _), k in parts:
      total = total + k * lp
    with np.errstate(over='ignore', under='ignore'):
      phi = np.exp(total)
    err = np.zeros(t.shape)
    for i, ((lp, e), k) in enumerate(parts):
      if not np.any(e):
        continue
      others = np.zeros(t.shape)
      for j, ((lq, _), kj) in enumerate(parts):
        if j != i:
          others = others + kj * lq.real
      with np.errstate(over='ignore', under='ignore', divide='ignore'):
        mod = np.exp(lp.real)
        err = err + k * e * (mod + e) ** (k - 1) * np.exp(others)
    return phi, err

  def loss_moments(self, direction: str) -> tuple[float, float]:
    mean = var = 0.0
    for term, k in self.terms:
      m, v = term.moments(direction)
      mean += k * m
      var += k * v
    return mean, var

  def split(self, direction: str) -> 'KnownPart | None':
    """The part of the composed loss law that is resolved exactly.

    When every term has atoms, the atomic component and the first-order
    continuous pieces are enumerated within the atom budget and only the
    remainder is left to numerical inversion. Returns None when a term has
    no atoms or the budget is exceeded; then the whole ledger is inverted.
    """
    _check_direction(direction)
    if direction not in self._memo:
      self._memo[direction] = self._split(direction)
    return self._memo[direction]

  def _split(self, direction: str) -> 'KnownPart | None':
    if not self.terms:
      return KnownPart(AtomicPLD(np.zeros(1), np.ones(1)), [], False)
    if any(term.atoms(direction) is None for term, _ in self.terms):
      return None
    bases = []
    for term, _ in self.terms:
      loss, log_mass = term.atoms(direction)
      bases.append(AtomicPLD(loss, np.exp(log_mass)))

    def product(powers):
      acc = AtomicPLD(np.zeros(1), np.ones(1))
      for base, k in zip(bases, powers):
        if k == 0:
          continue
        piece = base.power(k, self.atom_budget)
        acc = acc.convolve(piece, self.atom_budget) if piece is not None else None
        if acc is None:
          return None
      return acc

    counts = [k for _, k in self.terms]
    atoms = product(counts)
    if atoms is None:
      return None
    smooth = []
    for i, (term, k) in enumerate(self.terms):
      if term.purely_atomic:
        continue
      powers = list(counts)
      powers[i] -= 1
      rest = product(powers)
      if rest is None:
        return None
      smooth.append((term, k, rest))
    n_smooth = sum(k for term, k in self.terms if not term.purely_atomic)
    envelope = []
    for (term, k), base in zip(self.terms, bases):
      m_c = term.continuous_mass()
      envelope.append((k, base.total_mass, m_c, term.continuous_decay()))
    return KnownPart(atoms, smooth, n_smooth > 1, envelope)


class KnownPart:
  """Atoms plus first-order continuous pieces of a composed loss law.

  Each continuous piece is ``k * c * B`` where ``c`` is the continuous part of
  one term and ``B`` the atoms of everything else, so its CDF is a finite sum
  of shifted closed-form CDFs.
  """

  def __init__(self, atoms: AtomicPLD, smooth: list, has_remainder: bool,
               envelope: list | None = None):
    self.atoms = atoms
    self.smooth = smooth
    self.has_remainder = has_remainder
    # (count, atomic mass, continuous mass, decay constant) per term
    self.envelope = envelope or []

  def remainder_bound(self, t) -> np.ndarray:
    """Upper bound on |phi - phi_known| using |c_i(t)| <= min(m_c, g / t)."""
    t = np.asarray(t, dtype=float)
    full = np.ones(t.shape)
    base = 1.0
    first = np.zeros(t.shape)
    for k, m_a, m_c, g in self.envelope:
      c = np.minimum(m_c, g / np.maximum(t, 1e-300))
      full = full * (m_a + c) ** k
      base_prev = base
      base = base * m_a ** k
      first = first * m_a ** k + base_prev * k * c * m_a ** (k - 1)
    return np.maximum(full - base - first, 0.0)

  @property
  def support_radius(self) -> float:
    """Largest |loss| of the composition; the atoms reach the support ends."""
    return float(np.max(np.abs(self.atoms.loss))) if self.atoms.size else 0.0

  @property
  def total_mass(self) -> float:
    total = self.atoms.total_mass
    for term, k, rest in self.smooth:
      total += k * term.continuous_mass() * rest.total_mass
    return total

  def cdf(self, x, left: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.asarray(self.atoms.cdf(x, left=left), dtype=float)
    for term, k, rest in self.smooth:
      shifted = x[..., None] - rest.loss
      out = out + k * (term.continuous_cdf(shifted) @ rest.mass)
    return out

  def phi(self, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = self.atoms.phi(t)
    for term, k, rest in self.smooth:
      out = out + k * term.continuous_phi(t) * rest.phi(t)
    return out


def ledger_append(ledger: LogPhiLedger, term: PhiTerm, count: int = 1) -> LogPhiLedger:
  return ledger.append(term, count)


def ledger_eval(ledger: LogPhiLedger, t, direction: str):
  """Sum of multiplicity * log phi over the ledger; 0 for the empty ledger."""
  _check_direction(direction)
  out = ledger.log_phi(t, direction)
  return complex(out[0]) if np.ndim(t) == 0 else out


def inf_mass_combine(masses, counts=None) -> float:
  """1 - prod (1 - p_i)^k_i for independent mechanisms with infinite-loss mass."""
  masses = np.asarray(masses, dtype=float)
  counts = np.ones_like(masses) if counts is None else np.asarray(counts, dtype=float)
  if ((masses < 0) | (masses > 1)).any():
    raise ValueError('masses must lie in [0, 1]')
  if (masses == 1).any():
    raise ValueError('a term has all its mass at infinite loss; the mechanism is degenerate')
  return float(-np.expm1(np.sum(counts * np.log1p(-masses))))
