"""Dominating pairs: construction, closure, composition and amplification.

A dominating pair (P, Q) for a mechanism under a neighbouring relation has
``H_alpha(P || Q)`` at least the mechanism's worst-case hockey-stick
divergence for every alpha. Named families keep their closed forms; everything
else is a :class:`DiscretePair`, and continuous families are binned only when
a product or mixture forces it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from afa.divergence import DiscretePair, PrivacyProfile, hockey_stick

RELATIONS = ('add', 'remove', 'replace', 'symmetric')
DEFAULT_ATOM_BUDGET = 4096


def _sf(x):
  return special.ndtr(-np.asarray(x, dtype=float))


def subsampled_gaussian_hockey_stick(sigma: float, gamma: float, relation: str, alpha):
  """Exact H_alpha for the Poisson-subsampled Gaussian pair.

  The loss is monotone in the output, so the optimal set is a half line and
  both masses are normal tail probabilities.
  """
  a = np.asarray(alpha, dtype=float)
  out = np.empty(a.shape)
  flat, res = a.reshape(-1), out.reshape(-1)
  for i, al in enumerate(flat):
    if relation == 'remove':
      if al <= 1 - gamma:
        res[i] = 1 - al
        continue
      cut = sigma * sigma * math.log((al - 1 + gamma) / gamma) + 0.5
      tail0, tail1 = _sf(cut / sigma), _sf((cut - 1) / sigma)
      res[i] = (1 - gamma) * tail0 + gamma * tail1 - al * tail0
    elif relation == 'add':
      if al == 0:
        res[i] = 1.0
        continue
      arg = 1 / al - 1 + gamma
      if arg <= 0:
        res[i] = 0.0
        continue
      cut = 0.5 - sigma * sigma * math.log(arg / gamma)
      tail0, tail1 = _sf(cut / sigma), _sf((cut - 1) / sigma)
      res[i] = tail1 - al * ((1 - gamma) * tail1 + gamma * tail0)
    else:
      raise ValueError(f"relation must be 'add' or 'remove', got {relation!r}")
  out = np.clip(out, 0.0, 1.0)
  return float(out) if a.ndim == 0 else out


def laplace_hockey_stick(lam: float, alpha):
  """H_alpha of Lap(0, lam) against Lap(1, lam): 1 - exp((eps - 1/lam)/2)."""
  a = np.asarray(alpha, dtype=float)
  with np.errstate(divide='ignore'):
    eps = np.log(a)
  mid = 1 - np.exp((eps - 1 / lam) / 2)
  vals = np.where(eps >= 1 / lam, 0.0, np.where(eps <= -1 / lam, 1 - a, mid))
  vals = np.clip(vals, 0.0, 1.0)
  return float(vals) if a.ndim == 0 else vals


def _monotone_root(fn, target: float, lo: float, hi: float) -> float:
  for _ in range(200):
    mid = 0.5 * (lo + hi)
    if fn(mid) < target:
      lo = mid
    else:
      hi = mid
  return 0.5 * (lo + hi)


def lattice_pair(loss_cdf, lo: float, hi: float, spacing: float) -> DiscretePair:
  """Pessimistic pair on the loss lattice ``j * spacing``.

  P-mass of each cell ``(L_{j-1}, L_j]`` sits at the upper loss L_j and the
  Q-mass is set to ``p_j exp(-L_j)``. Rounding losses up raises every
  ``E_P[(1 - alpha e^{-L})_+]``, so the result dominates the original pair;
  the missing Q-mass becomes a Q-only outcome and mass above ``hi`` becomes
  a P-only outcome.
  """
  j_lo = math.floor(lo / spacing)
  j_hi = math.ceil(hi / spacing)
  losses = spacing * np.arange(j_lo, j_hi + 1, dtype=float)
  cdf = np.asarray(loss_cdf(losses), dtype=float)
  p = np.diff(np.concatenate([[0.0], cdf]))
  p = np.maximum(p, 0.0)
  p_top = max(0.0, 1.0 - cdf[-1])
  keep = p > 0
  logp = np.log(p[keep])
  logq = logp - losses[keep]
  q_rest = max(0.0, 1.0 - float(np.exp(logq).sum()))
  return DiscretePair(logp, logq, math.log(p_top) if p_top > 0 else -math.inf,
                      math.log(q_rest) if q_rest > 0 else -math.inf)


@dataclass(frozen=True, eq=False)
class DominatingPair:
  """A dominating pair with its neighbouring relation.

  kind: 'gaussian' (sigma), 'laplace' (lam), 'rr' (p), 'subsampled_gaussian'
  (sigma, gamma, direction) or 'discrete' (DiscretePair).
  tight: whether the pair is known to be attained by some neighbouring pair.
  provenance: 'exact', 'grid' or 'profile-derived'.
  """

  kind: str
  params: tuple
  relation: str = 'symmetric'
  tight: bool = True
  provenance: str = 'exact'

  def __post_init__(self):
    if self.relation not in RELATIONS:
      raise ValueError(f'relation must be one of {RELATIONS}')
    if self.kind not in ('gaussian', 'laplace', 'rr', 'subsampled_gaussian', 'discrete'):
      raise ValueError(f'unknown pair kind {self.kind!r}')

  @classmethod
  def gaussian(cls, sigma: float, relation: str = 'symmetric') -> 'DominatingPair':
    if not sigma > 0:
      raise ValueError('sigma must be positive')
    return cls('gaussian', (float(sigma),), relation)

  @classmethod
  def laplace(cls, lam: float, relation: str = 'symmetric') -> 'DominatingPair':
    if not lam > 0:
      raise ValueError('lam must be positive')
    return cls('laplace', (float(lam),), relation)

  @classmethod
  def rr(cls, p: float, relation: str = 'symmetric') -> 'DominatingPair':
    DiscretePair.randomized_response(p)
    return cls('rr', (float(p),), relation)

  @classmethod
  def discrete(cls, pair: DiscretePair, relation: str = 'symmetric',
               tight: bool = True, provenance: str = 'exact') -> 'DominatingPair':
    return cls('discrete', (pair,), relation, tight, provenance)

  @classmethod
  def subsampled_gaussian(cls, sigma: float, gamma: float, direction: str) -> 'DominatingPair':
    if not sigma > 0 or not 0 < gamma <= 1:
      raise ValueError('need sigma > 0 and 0 < gamma <= 1')
    if direction not in ('add', 'remove'):
      raise ValueError("direction must be 'add' or 'remove'")
    return cls('subsampled_gaussian', (float(sigma), float(gamma), direction), direction)

  def hockey_stick(self, alpha):
    """H_alpha(P || Q) of the pair (not of the swapped ordering)."""
    if self.kind == 'gaussian':
      return PrivacyProfile.gaussian(1 / self.params[0])(alpha)
    if self.kind == 'laplace':
      return laplace_hockey_stick(self.params[0], alpha)
    if self.kind == 'subsampled_gaussian':
      return subsampled_gaussian_hockey_stick(*self.params, alpha)
    return hockey_stick(self.to_discrete(), alpha)

  def profile(self) -> PrivacyProfile:
    return PrivacyProfile(self.hockey_stick, self.provenance)

  def loss_cdf(self, x):
    """P[L <= x] for the loss L = log dP/dQ under P (continuous families)."""
    x = np.asarray(x, dtype=float)
    if self.kind == 'gaussian':
      mu = 1 / self.params[0]
      return special.ndtr((x - mu * mu / 2) / mu)
    if self.kind == 'laplace':
      inv = 1 / self.params[0]
      low_atom = 0.5 * math.exp(-inv)
      o = (1 - x / inv) / 2
      smooth = 0.5 * (np.exp(-np.clip(o, 0, None) * inv) - math.exp(-inv))
      inside = low_atom + np.clip(smooth, 0, None)
      return np.where(x < -inv, 0.0, np.where(x >= inv, 1.0, inside))
    if self.kind == 'subsampled_gaussian':
      sigma, gamma, direction = self.params
      with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        if direction == 'remove':
          arg = np.exp(x) - 1 + gamma
          cut = sigma * sigma * np.log(np.where(arg > 0, arg, 1.0) / gamma) + 0.5
          val = (1 - gamma) * special.ndtr(cut / sigma) + gamma * special.ndtr((cut - 1) / sigma)
          return np.where(arg > 0, val, 0.0)
        arg = np.exp(-x) - 1 + gamma
        cut = 0.5 - sigma * sigma * np.log(np.where(arg > 0, arg, 1.0) / gamma)
        return np.where(arg > 0, special.ndtr((cut - 1) / sigma), 1.0)
    raise ValueError(f'{self.kind} pairs have no continuous loss law')

  def loss_range(self, tail: float = 1e-12) -> tuple[float, float]:
    """Loss interval outside of which P puts at most ``tail`` on each side."""
    if self.kind == 'laplace':
      inv = 1 / self.params[0]
      return -inv, inv
    f = lambda v: float(self.loss_cdf(v))
    lo, hi = -1.0, 1.0
    while f(lo) > tail:
      lo *= 2
    while f(hi) < 1 - tail:
      hi *= 2
    return _monotone_root(f, tail, lo, hi), _monotone_root(f, 1 - tail, lo, hi)

  def to_discrete(self, atom_budget: int = DEFAULT_ATOM_BUDGET,
                  spacing: float | None = None) -> DiscretePair:
    """Exact for finite pairs; a pessimistic loss lattice otherwise.

    Without an explicit spacing the lattice uses about atom_budget points.
    """
    if self.kind == 'discrete':
      return self.params[0]
    if self.kind == 'rr':
      return DiscretePair.randomized_response(self.params[0])
    lo, hi = self.loss_range()
    if spacing is None:
      spacing = (hi - lo) / max(atom_budget - 2, 1)
    return lattice_pair(self.loss_cdf, lo, hi, spacing)

  def swap(self) -> 'DominatingPair':
    flipped = {'add': 'remove', 'remove': 'add'}.get(self.relation, self.relation)
    if self.kind in ('gaussian', 'laplace', 'rr'):
      return DominatingPair(self.kind, self.params, flipped, self.tight, self.provenance)
    return DominatingPair.discrete(self.to_discrete().swap(), flipped, self.tight,
                                   self.provenance)


@dataclass(frozen=True)
class SamplingScheme:
  """Poisson sampling (each record kept with prob. gamma) or sampling a
  fixed-size subset (gamma = batch size / dataset size)."""

  kind: str
  gamma: float

  def __post_init__(self):
    if self.kind not in ('poisson', 'subset'):
      raise ValueError("sampling kind must be 'poisson' or 'subset'")
    if not 0 < self.gamma <= 1:
      raise ValueError(f'gamma must lie in (0, 1], got {self.gamma}')


def _expand(pair: DiscretePair) -> tuple[np.ndarray, np.ndarray]:
  """Probability vectors with explicit P-only and Q-only outcomes appended."""
  p = np.concatenate([pair.p, [pair.p_inf, 0.0]])
  q = np.concatenate([pair.q, [0.0, pair.q_inf]])
  return p, q


def _renormalized(p: np.ndarray, q: np.ndarray) -> DiscretePair:
  return DiscretePair.from_probs(p / p.sum(), q / q.sum())


class AtomBudgetError(ValueError):
  """A discrete construction would exceed its atom budget."""


def _continuous(pair: DominatingPair) -> bool:
  return pair.kind in ('gaussian', 'laplace', 'subsampled_gaussian')


def _lattice_index(pair: DiscretePair, spacing: float):
  idx = (pair.logp - pair.logq) / spacing
  rounded = np.round(idx)
  if pair.logp.size and np.max(np.abs(idx - rounded)) > 1e-6:
    return None
  return rounded.astype(np.int64)


def _lattice_compose(pa: DiscretePair, pb: DiscretePair, spacing: float):
  """Product of two pairs whose losses lie on ``spacing * Z``, or None."""
  ia, ib = _lattice_index(pa, spacing), _lattice_index(pb, spacing)
  if ia is None or ib is None or not ia.size or not ib.size:
    return None
  def dense(pair, idx):
    vals = np.zeros(idx.max() - idx.min() + 1)
    np.add.at(vals, idx - idx.min(), pair.p)
    return vals
  p = np.convolve(dense(pa, ia), dense(pb, ib))
  losses = spacing * (ia.min() + ib.min() + np.arange(p.size))
  keep = p > 0
  logp = np.log(p[keep])
  p_inf = 1 - (1 - pa.p_inf) * (1 - pb.p_inf)
  q_inf = 1 - (1 - pa.q_inf) * (1 - pb.q_inf)
  return DiscretePair(logp, logp - losses[keep],
                      math.log(p_inf) if p_inf > 0 else -math.inf,
                      math.log(q_inf) if q_inf > 0 else -math.inf)


def compose_pairs(a: DominatingPair, b: DominatingPair,
                  atom_budget: int = DEFAULT_ATOM_BUDGET) -> DominatingPair:
  """Product pair (P1 x P2, Q1 x Q2).

  Continuous factors go onto a shared loss lattice so that product losses
  stay on it. Atoms with equal loss are merged only when the raw product
  exceeds the budget; merging equal-loss atoms leaves every H_alpha intact.

  Raises:
    AtomBudgetError: if the product still has more than atom_budget atoms.
  """
  if a.relation == b.relation or b.relation == 'symmetric':
    relation = a.relation
  elif a.relation == 'symmetric':
    relation = b.relation
  else:
    raise ValueError(f'cannot compose relations {a.relation!r} and {b.relation!r}')
  spacing = None
  widths = [np.subtract(*reversed(x.loss_range())) for x in (a, b) if _continuous(x)]
  if widths:
    finite = [x.to_discrete() for x in (a, b) if not _continuous(x)]
    points = atom_budget // max(finite[0].logp.size, 1) if finite else atom_budget
    spacing = sum(widths) / max(points - 2 * len(widths) - 2, 1)
  pa = a.to_discrete(atom_budget, spacing)
  pb = b.to_discrete(atom_budget, spacing)
  advice = ('product pair exceeds the atom budget; compose through the '
            'characteristic-function ledger (Accountant) instead')
  if spacing is not None:
    on_lattice = _lattice_compose(pa, pb, spacing)
    if on_lattice is not None:
      if on_lattice.logp.size > atom_budget:
        raise AtomBudgetError(advice)
      return DominatingPair.discrete(on_lattice, relation, False, 'grid')
  if (pa.logp.size + 2) * (pb.logp.size + 2) > 64 * atom_budget:
    raise AtomBudgetError(advice)
  p1, q1 = _expand(pa)
  p2, q2 = _expand(pb)
  p = np.multiply.outer(p1, p2).ravel()
  q = np.multiply.outer(q1, q2).ravel()
  both = (p > 0) & (q > 0)
  pm, qm = p[both], q[both]
  if pm.size > atom_budget:
    key = np.round(np.log(pm) - np.log(qm), 11)
    _, inv = np.unique(key, return_inverse=True)
    pm = np.bincount(inv, weights=pm)
    qm = np.bincount(inv, weights=qm)
    if pm.size > atom_budget:
      raise AtomBudgetError(advice)
  only_p = p[(p > 0) & (q == 0)].sum()
  only_q = q[(q > 0) & (p == 0)].sum()
  merged = DiscretePair(np.log(pm), np.log(qm),
                        math.log(only_p) if only_p > 0 else -math.inf,
                        math.log(only_q) if only_q > 0 else -math.inf)
  exact = not _continuous(a) and not _continuous(b)
  provenance = 'exact' if exact and a.provenance == b.provenance == 'exact' else 'grid'
  return DominatingPair.discrete(merged, relation, a.tight and b.tight and exact,
                                 provenance)


def _mixture(weight_p: float, p: np.ndarray, q: np.ndarray) -> np.ndarray:
  return weight_p * p + (1 - weight_p) * q


def amplify(pair: DominatingPair, scheme: SamplingScheme, direction: str) -> DominatingPair:
  """Dominating pair of the subsampled mechanism for one neighbour direction.

  Poisson sampling needs a pair valid for 'add' neighbours (a 'remove' pair
  is flipped first; a 'symmetric' one serves both):
  add gives (P, (1-g) P + g Q) and remove gives ((1-g) Q + g P, Q).
  Sampling a fixed-size subset needs a 'replace' pair:
  add gives (P, (1-g) P + g Q) and remove gives ((1-g) P + g Q, P).
  """
  if direction not in ('add', 'remove'):
    raise ValueError("direction must be 'add' or 'remove'")
  g = scheme.gamma
  if scheme.kind == 'poisson':
    if pair.relation == 'replace':
      raise ValueError('Poisson sampling needs an add, remove or symmetric pair')
    base = pair.swap() if pair.relation == 'remove' else pair
    if base.kind == 'gaussian':
      return DominatingPair.subsampled_gaussian(base.params[0], g, direction)
    p, q = _expand(base.to_discrete())
    if direction == 'add':
      new_p, new_q = p, _mixture(1 - g, p, q)
    else:
      new_p, new_q = _mixture(g, p, q), q
  else:
    if pair.relation != 'replace':
      raise ValueError('fixed-size subset sampling needs a replace pair')
    if pair.kind == 'gaussian':
      return DominatingPair.subsampled_gaussian(pair.params[0], g, direction)
    p, q = _expand(pair.to_discrete())
    if direction == 'add':
      new_p, new_q = p, _mixture(1 - g, p, q)
    else:
      new_p, new_q = _mixture(1 - g, p, q), p
  return DominatingPair.discrete(_renormalized(new_p, new_q), direction, pair.tight,
                                 pair.provenance)


def subsample_profile_symmetric(pair: DominatingPair, scheme: SamplingScheme, alpha):
  """Profile of a subsampled symmetric mechanism from a single base pair.

  alpha >= 1 uses the remove-direction mixture and alpha < 1 the add one.
  """
  if pair.relation not in ('symmetric', 'replace'):
    raise ValueError('needs a pair for a symmetric relation')
  a = np.asarray(alpha, dtype=float)
  rem = amplify(pair, scheme, 'remove').hockey_stick(a)
  add = amplify(pair, scheme, 'add').hockey_stick(a)
  vals = np.where(a >= 1, rem, add)
  return float(vals) if a.ndim == 0 else vals


def default_alpha_grid() -> np.ndarray:
  # The uniform part puts kinks at round alphas on a node.
  return np.unique(np.concatenate([np.exp(np.linspace(-14.0, 14.0, 5601)),
                                   np.linspace(0.0, 16.0, 3201)]))


def _lower_hull(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
  hull: list[int] = []
  for i in range(x.size):
    while len(hull) >= 2:
      i0, i1 = hull[-2], hull[-1]
      cross = (x[i1] - x[i0]) * (y[i] - y[i0]) - (y[i1] - y[i0]) * (x[i] - x[i0])
      if cross <= 0:
        hull.pop()
      else:
        break
    hull.append(i)
  idx = np.asarray(hull)
  return x[idx], y[idx]


def _closure_vertices(h, alphas=None) -> tuple[np.ndarray, np.ndarray]:
  alphas = default_alpha_grid() if alphas is None else np.sort(np.asarray(alphas, float))
  if alphas[0] != 0:
    alphas = np.concatenate([[0.0], alphas])
  vals = np.asarray(h(alphas), dtype=float)
  if np.isnan(vals).any():
    raise ValueError('h returned NaN')
  vals = np.minimum(1.0, np.minimum.accumulate(vals))
  return _lower_hull(alphas, vals)


def hs_closure(h, alphas=None) -> PrivacyProfile:
  """Largest profile-class member below min{1, running-min h}.

  Computed on a grid as the lower convex hull of ``min(1, inf_{y<=x} h(y))``,
  capped by h itself off the nodes, floored at ``(1 - alpha)_+`` and extended
  flat beyond the last node.
  """
  hx, hy = _closure_vertices(h, alphas)

  def closed(a):
    a = np.asarray(a, dtype=float)
    # Chords overshoot between nodes; the exact closure is also below h.
    hull = np.interp(a, hx, hy, right=hy[-1])
    out = np.maximum(np.minimum(hull, np.asarray(h(a), dtype=float)), np.maximum(1 - a, 0.0))
    return float(out) if out.ndim == 0 else out

  return PrivacyProfile(closed, 'profile-derived')


def pair_from_profile(h, alphas=None, relation: str = 'symmetric') -> DominatingPair:
  """A pair whose hockey-stick curve is the closure of h.

  Q is uniform on [0, 1] and P has CDF ``1 + H*(x - 1)`` on [0, 1) with the
  remaining mass as an atom at 1, where H* is the convex conjugate of the
  closed profile. For the piecewise-linear closure P has a piecewise-constant
  density, so the pair is stored exactly as cells plus the atom.

  Raises:
    ValueError: if the closure does not start at 1 (h is not a profile bound).
  """
  hx, hy = _closure_vertices(h, alphas)
  hy = np.maximum(hy, np.maximum(1 - hx, 0.0))
  if abs(hy[0] - 1.0) > 1e-9:
    raise ValueError(f'closure of h equals {hy[0]} at alpha=0; a profile needs 1')
  slopes = np.diff(hy) / np.diff(hx)
  slopes = np.clip(slopes, -1.0, 0.0)
  y_edges = np.concatenate([[-1.0], slopes, [0.0]])
  lengths = np.diff(y_edges)
  lengths = np.maximum(lengths, 0.0)
  density = hx
  p = density * lengths
  q = lengths.copy()
  p_atom = max(float(hy[-1]), 0.0)
  p_all = np.concatenate([p, [p_atom]])
  q_all = np.concatenate([q, [0.0]])
  p_all = p_all / p_all.sum()
  q_all = q_all / q_all.sum()
  pair = DiscretePair.from_probs(p_all, q_all)
  return DominatingPair.discrete(pair, relation, True, 'profile-derived')


def dominate_full_range(pair: DominatingPair, alphas=None) -> DominatingPair:
  """Extends a pair certified only for alpha >= 1 to every alpha >= 0.

  Under a symmetric relation the swapped ordering bounds the alpha < 1 side:
  ``H_alpha(Q || P) = alpha H_{1/alpha}(P || Q) + 1 - alpha``.
  """
  if pair.relation not in ('symmetric', 'replace'):
    raise ValueError('full-range extension needs a symmetric relation')

  def curve(a):
    a = np.asarray(a, dtype=float)
    out = np.empty(a.shape)
    high = a >= 1
    out[high] = pair.hockey_stick(a[high])
    low = ~high & (a > 0)
    out[low] = a[low] * pair.hockey_stick(1 / a[low]) + 1 - a[low]
    out[a == 0] = 1.0
    return np.clip(out, 0.0, 1.0)

  return pair_from_profile(curve, alphas, pair.relation)
