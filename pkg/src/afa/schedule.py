"""Mechanism schedules: parsing and assembly into accountants.

A schedule is JSON::

  {"mechanisms": [{"kind": "gaussian", "sigma": 2.0, "count": 10,
                   "relation": "symmetric",
                   "sampling": {"kind": "poisson", "gamma": 0.01}}],
   "query": {"delta": 1e-5},
   "quadrature": {"abs_tol": 1e-12},
   "grid": {"S": 100, "N": 100000}}

Kinds: gaussian (sigma), laplace (lam), rr (p), discrete (p, q: lists).
Sampled mechanisms are tracked with one ledger per neighbour direction and
the reported delta is the pointwise maximum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from afa.accountant import Accountant, eps_from_delta_curve
from afa.discretize import DensityPair, build_grid, sandwich_bounds
from afa.divergence import DiscretePair
from afa.dominating import DominatingPair, SamplingScheme, amplify
from afa.phi import LogPhiLedger, PhiTerm
from afa.quadrature import QuadConfig
from afa.rdp import RdpCurve

KINDS = {'gaussian': ('sigma',), 'laplace': ('lam',), 'rr': ('p',), 'discrete': ('p', 'q')}
DIRECTIONS = ('add', 'remove')


class ScheduleError(ValueError):
  """The schedule file is malformed."""


@dataclass(frozen=True)
class Mechanism:
  kind: str
  params: dict
  count: int = 1
  relation: str = 'symmetric'
  sampling: SamplingScheme | None = None

  @classmethod
  def from_dict(cls, raw: dict) -> 'Mechanism':
    if not isinstance(raw, dict) or 'kind' not in raw:
      raise ScheduleError('each mechanism needs a "kind"')
    kind = raw['kind']
    if kind not in KINDS:
      raise ScheduleError(f'unknown mechanism kind {kind!r}; expected one of {sorted(KINDS)}')
    missing = [name for name in KINDS[kind] if name not in raw]
    if missing:
      raise ScheduleError(f'{kind} needs parameter(s) {missing}')
    params = {name: raw[name] for name in KINDS[kind]}
    count = raw.get('count', 1)
    if not isinstance(count, int) or count < 1:
      raise ScheduleError(f'count must be a positive integer, got {count!r}')
    sampling = None
    if raw.get('sampling') is not None:
      s = raw['sampling']
      try:
        sampling = SamplingScheme(s['kind'], float(s['gamma']))
      except (KeyError, TypeError) as exc:
        raise ScheduleError('sampling needs "kind" and "gamma"') from exc
    mech = cls(kind, params, count, raw.get('relation', 'symmetric'), sampling)
    mech.pair()
    return mech

  def pair(self) -> DominatingPair:
    relation = self.relation
    if self.kind == 'gaussian':
      return DominatingPair.gaussian(float(self.params['sigma']), relation)
    if self.kind == 'laplace':
      return DominatingPair.laplace(float(self.params['lam']), relation)
    if self.kind == 'rr':
      return DominatingPair.rr(float(self.params['p']), relation)
    pair = DiscretePair.from_probs(self.params['p'], self.params['q'])
    return DominatingPair.discrete(pair, relation)

  def term(self, direction: str | None) -> PhiTerm:
    """The ledger term; direction picks the sampled pair ('add' or 'remove')."""
    if self.sampling is None:
      if self.kind == 'gaussian':
        return PhiTerm.gaussian(float(self.params['sigma']))
      if self.kind == 'laplace':
        return PhiTerm.laplace(float(self.params['lam']))
      if self.kind == 'rr':
        return PhiTerm.rr(float(self.params['p']))
      return PhiTerm.discrete(self.pair().to_discrete())
    amplified = amplify(self.pair(), self.sampling, direction)
    if amplified.kind == 'subsampled_gaussian':
      sigma, gamma, rel = amplified.params
      return PhiTerm.quad_mixture(sigma, gamma, rel)
    return PhiTerm.discrete(amplified.to_discrete())

  def rdp_curve(self) -> RdpCurve:
    if self.sampling is None:
      if self.kind == 'gaussian':
        return RdpCurve.gaussian(float(self.params['sigma']))
      if self.kind == 'laplace':
        return RdpCurve.laplace(float(self.params['lam']))
      return RdpCurve.discrete(self.pair().to_discrete())
    if self.kind == 'gaussian' and self.sampling.kind == 'poisson':
      return RdpCurve.subsampled_gaussian(float(self.params['sigma']), self.sampling.gamma)
    curves = [RdpCurve.discrete(amplify(self.pair(), self.sampling, d).to_discrete(),
                                symmetric=False) for d in DIRECTIONS]
    return RdpCurve(lambda a: max(c.eps_of_alpha(a) for c in curves), 'sampled')


@dataclass(frozen=True)
class Schedule:
  mechanisms: tuple = ()
  query: dict = field(default_factory=dict)
  quad: QuadConfig = QuadConfig()
  grid_S: float = 100.0
  grid_N: int = 100_000

  @classmethod
  def from_dict(cls, raw: dict) -> 'Schedule':
    if not isinstance(raw, dict):
      raise ScheduleError('the schedule must be a JSON object')
    mechs = tuple(Mechanism.from_dict(m) for m in raw.get('mechanisms', []))
    query = raw.get('query', {}) or {}
    if not isinstance(query, dict):
      raise ScheduleError('"query" must be an object')
    quad_raw = raw.get('quadrature', {}) or {}
    grid = raw.get('grid', {}) or {}
    try:
      quad = QuadConfig(**quad_raw)
    except TypeError as exc:
      raise ScheduleError(f'bad quadrature settings: {exc}') from exc
    return cls(mechs, query, quad, float(grid.get('S', 100.0)), int(grid.get('N', 100_000)))

  @classmethod
  def load(cls, path: str | Path) -> 'Schedule':
    try:
      raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
      raise ScheduleError(f'{path}: invalid JSON ({exc})') from exc
    return cls.from_dict(raw)

  @property
  def sampled(self) -> bool:
    return any(m.sampling is not None for m in self.mechanisms)

  def accountants(self, k: int = 1) -> list[Accountant]:
    """One accountant, or one per neighbour direction when anything is sampled."""
    directions = DIRECTIONS if self.sampled else (None,)
    out = []
    for direction in directions:
      ledger = LogPhiLedger()
      for mech in self.mechanisms:
        ledger = ledger.append(mech.term(direction), mech.count * k)
      out.append(Accountant(ledger, self.quad))
    return out

  def rdp_curve(self, k: int = 1) -> RdpCurve:
    total = RdpCurve.zero()
    for mech in self.mechanisms:
      total = total + mech.rdp_curve().scale(mech.count)
    return total.scale(k)

  def gaussian_mu(self, k: int = 1) -> float | None:
    """mu of the equivalent single Gaussian, when every mechanism is one."""
    if not self.mechanisms or any(m.kind != 'gaussian' or m.sampling is not None
                                  for m in self.mechanisms):
      return None
    return math.sqrt(k * sum(m.count / float(m.params['sigma']) ** 2 for m in self.mechanisms))

  def sandwich(self, k: int = 1) -> 'GridSandwich':
    """Grid bounds; every mechanism must be a Poisson-sampled Gaussian."""
    for m in self.mechanisms:
      if m.kind != 'gaussian' or m.sampling is None or m.sampling.kind != 'poisson':
        raise ScheduleError('the grid sandwich supports Poisson-sampled Gaussians only')
    per_direction = []
    for direction in DIRECTIONS:
      grids = [(build_grid(DensityPair.subsampled_gaussian(
          float(m.params['sigma']), m.sampling.gamma, direction),
          self.grid_S, self.grid_N), m.count * k) for m in self.mechanisms]
      per_direction.append(grids)
    return GridSandwich(per_direction, self.quad)


class GridSandwich:
  """delta and eps bounds over both neighbour directions."""

  def __init__(self, per_direction: list, quad: QuadConfig):
    self.per_direction = per_direction
    self.quad = quad
    self._accts: dict = {}

  def delta_bounds(self, eps: float) -> tuple[float, float]:
    lo = hi = 0.0
    for i, grids in enumerate(self.per_direction):
      cache = self._accts.setdefault(i, {})
      lo_i, hi_i = sandwich_bounds(grids, eps, self.quad, cache=cache)
      lo, hi = max(lo, lo_i), max(hi, hi_i)
    return lo, hi

  def eps_bounds(self, delta: float) -> tuple[float, float]:
    eps_lo = eps_from_delta_curve(lambda e: self.delta_bounds(e)[0], delta)
    eps_hi = eps_from_delta_curve(lambda e: self.delta_bounds(e)[1], delta)
    return eps_lo, max(eps_lo, eps_hi)


def as_floats(values) -> list[float]:
  return [float(v) for v in np.atleast_1d(values)]
