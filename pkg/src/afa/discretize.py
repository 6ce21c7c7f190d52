"""Grid sandwich bounds for continuous privacy-loss variables.

The output domain ``[-S, S]`` is cut into N equal cells. Each cell keeps its
probability under P and Q and the smallest and largest loss over the cell.
Replacing every loss by its cell minimum (maximum) bounds the true loss.
For delta the second distribution is replaced by the e^-L tilt of the
first, so delta of one orientation becomes sum_j p_j (1 - e^(eps - L_j))_+,
which is monotone in every L_j and gives certified lower and upper bounds.

The bound needs the exact cell probabilities. The left-point rule
``p(o_j) * width`` is available as ``mass_rule='left'``, but its O(width)
mass error can push the "lower" CDF below the true one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from scipy import special

from afa.phi import LogPhiLedger, PhiTerm, complex_logsumexp, mixture_log_densities
from afa.quadrature import QuadConfig

PRUNE_LOG_MASS = math.log(1e-30)


def tail_log_bound(sigma: float, gamma: float, S: float, k: int = 1) -> float:
  """log of k * (exp(-S^2 / 2 sigma^2) + exp(-(S-1)^2 / 2 sigma^2))."""
  if not S > 1:
    raise ValueError('the tail bound needs S > 1')
  if not 0 < gamma <= 1 or not sigma > 0:
    raise ValueError('need sigma > 0 and 0 < gamma <= 1')
  two_var = 2 * sigma * sigma
  return math.log(k) + float(np.logaddexp(-S * S / two_var, -(S - 1) ** 2 / two_var))


def tail_bound(sigma: float, gamma: float, S: float, k: int = 1) -> float:
  """Mass of the subsampled-Gaussian pair outside [-S, S], times k.

  Values of 1 or more carry no information; use a larger S.
  """
  return math.exp(tail_log_bound(sigma, gamma, S, k))


def log_normal_interval(a, b, mean: float, sigma: float) -> np.ndarray:
  """log P[a < X < b] for X ~ N(mean, sigma^2), accurate far in the tails."""
  za = (np.asarray(a, dtype=float) - mean) / sigma
  zb = (np.asarray(b, dtype=float) - mean) / sigma
  # Work on the lower tail, where log_ndtr keeps full relative precision.
  flip = za > 0
  za, zb = np.where(flip, -zb, za), np.where(flip, -za, zb)
  hi, lo = special.log_ndtr(zb), special.log_ndtr(za)
  with np.errstate(divide='ignore'):
    return hi + np.log(-np.expm1(lo - hi))


@dataclass(frozen=True)
class DensityPair:
  """Log-densities of a continuous pair with a handle on the loss shape.

  monotone: 'increasing' or 'decreasing' certifies that log p - log q is
  monotone in the output, so cell extremes sit at the cell ends. Otherwise
  cell_extrema(left, right) must return per-cell (min, max) losses.
  tail: callable S -> bound on the mass outside [-S, S] under either density.
  loss: optional direct evaluation of log p - log q, for precision.
  log_cell_mass: optional (left, right) -> (log P cell mass, log Q cell mass).
  """

  log_p: Callable
  log_q: Callable
  tail: Callable
  monotone: str | None = None
  cell_extrema: Callable | None = None
  loss: Callable | None = None
  log_cell_mass: Callable | None = None

  def __post_init__(self):
    if self.monotone not in (None, 'increasing', 'decreasing'):
      raise ValueError("monotone must be 'increasing', 'decreasing' or None")
    if self.monotone is None and self.cell_extrema is None:
      raise ValueError('a loss without a monotonicity certificate needs cell_extrema')

  @classmethod
  def subsampled_gaussian(cls, sigma: float, gamma: float,
                          relation: str = 'remove') -> 'DensityPair':
    if not sigma > 0 or not 0 < gamma <= 1:
      raise ValueError('need sigma > 0 and 0 < gamma <= 1')
    if relation not in ('add', 'remove'):
      raise ValueError("relation must be 'add' or 'remove'")
    log_rest = math.log1p(-gamma) if gamma < 1 else -math.inf
    two_var = 2 * sigma * sigma

    def loss(o):
      shift = (2 * np.asarray(o, dtype=float) - 1) / two_var
      if relation == 'remove':
        return np.logaddexp(log_rest, math.log(gamma) + shift)
      return -np.logaddexp(log_rest, math.log(gamma) - shift)

    def cell_mass(left, right):
      at0 = log_normal_interval(left, right, 0.0, sigma)
      at1 = log_normal_interval(left, right, 1.0, sigma)
      mixed = np.logaddexp(log_rest + at0, math.log(gamma) + at1) if gamma < 1 else at1
      if relation == 'remove':
        return mixed, at0
      mixed = np.logaddexp(log_rest + at1, math.log(gamma) + at0) if gamma < 1 else at0
      return at1, mixed

    return cls(
        log_p=lambda o: mixture_log_densities(sigma, gamma, relation, o)[0],
        log_q=lambda o: mixture_log_densities(sigma, gamma, relation, o)[1],
        tail=lambda S: tail_bound(sigma, gamma, S),
        monotone='increasing',
        loss=loss,
        log_cell_mass=cell_mass,
    )


@dataclass(frozen=True, eq=False)
class GridPLD:
  """Cells of a discretised pair; pruned cells (mass < 1e-30) are dropped.

  log_p, log_q: log cell masses. loss_lo, loss_hi: cell extremes of the loss
  log p - log q. tail_mass_bound: per-mechanism mass not represented by the
  cells, including everything pruned.
  """

  S: float
  N: int
  log_p: np.ndarray
  log_q: np.ndarray
  loss_lo: np.ndarray
  loss_hi: np.ndarray
  tail_mass_bound: float
  pruned_mass: float = 0.0
  mass_rule: str = 'exact'

  def atoms(self, direction: str, side: str, orientation: str | None = None):
    """(loss, log mass) of the 'lo' or 'hi' grid under P or Q.

    Under Q the loss is log q - log p, so its lower version negates loss_hi.
    With an orientation 'PQ' ('QP') the first distribution keeps its cell
    masses and the second is their e^-L tilt, so the pair is consistent.
    """
    if side not in ('lo', 'hi'):
      raise ValueError("side must be 'lo' or 'hi'")
    if orientation is not None:
      if orientation not in ('PQ', 'QP'):
        raise ValueError("orientation must be 'PQ' or 'QP'")
      first = orientation[0]
      loss, log_mass = self.atoms(first, side)
      if direction == first:
        return loss, log_mass
      if direction in ('P', 'Q'):
        return -loss, log_mass - loss
    if direction == 'P':
      return (self.loss_lo if side == 'lo' else self.loss_hi), self.log_p
    if direction == 'Q':
      return -(self.loss_hi if side == 'lo' else self.loss_lo), self.log_q
    raise ValueError(f"direction must be 'P' or 'Q', got {direction!r}")

  def term(self, side: str, orientation: str | None = None) -> PhiTerm:
    return PhiTerm.grid(self, side, orientation)


def build_grid(mechanism: DensityPair, S: float, N: int, mass_rule: str | None = None) -> GridPLD:
  """Grid of cells [o_j, o_j + width], o_j = -S + j * width.

  mass_rule 'exact' uses the mechanism's cell probabilities and 'left' the
  left-point rule; the default is 'exact' whenever the mechanism offers it.
  """
  if not S > 0 or int(N) != N or N < 2:
    raise ValueError('need S > 0 and an integer N >= 2')
  if mass_rule is None:
    mass_rule = 'left' if mechanism.log_cell_mass is None else 'exact'
  if mass_rule not in ('exact', 'left'):
    raise ValueError("mass_rule must be 'exact' or 'left'")
  if mass_rule == 'exact' and mechanism.log_cell_mass is None:
    raise ValueError('exact cell masses need log_cell_mass on the mechanism')
  N = int(N)
  width = 2.0 * S / N
  edges = -S + width * np.arange(N + 1)
  left, right = edges[:-1], edges[1:]
  if mass_rule == 'exact':
    log_p, log_q = (np.asarray(v, dtype=float) for v in mechanism.log_cell_mass(left, right))
  else:
    log_p = np.asarray(mechanism.log_p(left), dtype=float) + math.log(width)
    log_q = np.asarray(mechanism.log_q(left), dtype=float) + math.log(width)
  if mechanism.monotone is not None:
    if mechanism.loss is not None:
      loss_edges = np.asarray(mechanism.loss(edges), dtype=float)
    else:
      loss_edges = (np.asarray(mechanism.log_p(edges), dtype=float)
                    - np.asarray(mechanism.log_q(edges), dtype=float))
    lo, hi = loss_edges[:-1], loss_edges[1:]
    if mechanism.monotone == 'decreasing':
      lo, hi = hi, lo
  else:
    lo, hi = (np.asarray(v, dtype=float) for v in mechanism.cell_extrema(left, right))
  slack = 1e-9 * (1 + np.abs(hi))
  if np.any(lo > hi + slack):
    raise ValueError('cell loss extremes are inconsistent with the certificate')
  lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
  keep = (log_p > PRUNE_LOG_MASS) | (log_q > PRUNE_LOG_MASS)
  pruned = float(np.exp(log_p[~keep]).sum() + np.exp(log_q[~keep]).sum())
  tail = float(mechanism.tail(S))
  return GridPLD(float(S), N, log_p[keep], log_q[keep], lo[keep], hi[keep],
                 tail + pruned, pruned, mass_rule)


def phi_bounds(grid: GridPLD, t, direction: str, side: str):
  """Characteristic function of the lower or upper grid loss."""
  loss, log_mass = grid.atoms(direction, side)
  vals = np.exp(complex_logsumexp(log_mass, loss, np.atleast_1d(np.asarray(t, float))))
  return complex(vals[0]) if np.ndim(t) == 0 else vals


@dataclass(frozen=True)
class Sandwich:
  delta_lo: float
  delta_hi: float
  delta_min: float
  delta_max: float
  tail: float
  error: float = 0.0


def sandwich_bounds(grids, eps: float, quad: QuadConfig = QuadConfig(),
                    cache: dict | None = None, full_output: bool = False):
  """Bounds on delta(eps) for a composition of gridded mechanisms.

  grids is a sequence of (GridPLD, count). The tail charge per composition
  is the grid's tail mass bound, inflated by (1 + e^eps) for pruned cells
  whose mass may sit on either side. Each side takes the larger of its two
  orientations. With full_output the Sandwich also carries the largest
  quadrature error. Passing the same cache dict across calls reuses the
  accountants and their nodes.

  Raises:
    QuadratureError: naming the grid side whose inversion failed.
  """
  from afa.accountant import Accountant
  from afa.quadrature import QuadratureError

  grids = [(g, int(k)) for g, k in grids if k]
  cache = {} if cache is None else cache
  values = {'lo': 0.0, 'hi': 0.0}
  error = 0.0
  if grids:
    for side in ('lo', 'hi'):
      for orientation in ('PQ', 'QP'):
        if (side, orientation) not in cache:
          ledger = LogPhiLedger()
          for grid, k in grids:
            ledger = ledger.append(grid.term(side, orientation), k)
          cache[side, orientation] = Accountant(ledger, quad)
        try:
          # Only the orientation the pair was tilted for is meaningful.
          value, err = cache[side, orientation].delta_oriented(eps, orientation[0])
        except QuadratureError as exc:
          raise QuadratureError(f'{side} side of the sandwich failed: {exc}',
                                exc.error) from exc
        values[side] = max(values[side], min(1.0, value))
        error = max(error, err)
  tail = sum(k * (g.tail_mass_bound - g.pruned_mass + (1 + math.exp(eps)) * g.pruned_mass)
             for g, k in grids)
  lo = max(0.0, values['lo'] - tail)
  hi = min(1.0, max(values['hi'] + tail, lo))
  if full_output:
    return Sandwich(lo, hi, values['lo'], values['hi'], tail, error)
  return lo, hi


def delta_sandwich(grid: GridPLD, k: int, eps, quad: QuadConfig = QuadConfig(),
                   full_output: bool = False):
  """Certified (lower, upper) bounds on delta(eps) after k compositions.

  A sequence of eps values returns a list and shares quadrature nodes.
  """
  if int(k) != k or k < 0:
    raise ValueError('k must be a nonnegative integer')
  cache: dict = {}
  results = [sandwich_bounds([(grid, k)], float(e), quad, cache, full_output)
             for e in np.atleast_1d(eps)]
  return results if np.ndim(eps) else results[0]
