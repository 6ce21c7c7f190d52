"""Renyi-DP baseline: curves, classical conversion and the f-DP route."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from afa.divergence import DiscretePair, TradeoffFn
from afa.phi import mixture_log_densities
from afa.quadrature import QuadConfig, integrate


LOG_X_MIN = math.log(1e-305)


def classical_alpha_grid() -> np.ndarray:
  """128 orders, geometrically spaced in alpha - 1, inside (1, 1e6]."""
  return 1.0 + np.geomspace(1e-2, 1e6 - 1, 128)


def conversion_alpha_grid() -> np.ndarray:
  below = 0.5 + np.arange(32) / 64
  return np.concatenate([below, [1.0], classical_alpha_grid()])


def _renyi_discrete(p: np.ndarray, q: np.ndarray, alpha: float) -> float:
  """D_alpha(p || q) for probability vectors, with KL at alpha = 1."""
  both = (p > 0) & (q > 0)
  if alpha == 1:
    if np.any((p > 0) & (q == 0)):
      return math.inf
    return float(np.sum(p[both] * (np.log(p[both]) - np.log(q[both]))))
  if alpha > 1 and np.any((p > 0) & (q == 0)):
    return math.inf
  terms = alpha * np.log(p[both]) + (1 - alpha) * np.log(q[both])
  total = special.logsumexp(terms) if terms.size else -math.inf
  return float(max(total / (alpha - 1), 0.0))


def _renyi_numeric(log_p: Callable, log_q: Callable, alpha: float, center: float,
                   scale: float) -> float:
  cfg = QuadConfig(abs_tol=1e-14)
  if alpha == 1:
    f = lambda o: np.exp(log_p(o)) * (log_p(o) - log_q(o))
    return float(max(integrate(f, -math.inf, math.inf, cfg, scale=scale).value, 0.0))
  # The integrand peaks up to about alpha away from the centre; integrating
  # around the located peak, shifted by its height, keeps exp bounded.
  exponent = lambda o: alpha * log_p(o) + (1 - alpha) * log_q(o)
  reach = 40 * scale + abs(alpha) * max(scale, 1.0)
  grid = np.linspace(center - reach, center + reach, 4001)
  values = exponent(grid)
  i = int(np.argmax(values))
  step = grid[1] - grid[0]
  found = optimize.minimize_scalar(lambda o: -float(exponent(np.array([o]))[0]),
                                   bounds=(grid[i] - step, grid[i] + step), method='bounded',
                                   options={'xatol': 1e-10 * (1 + abs(grid[i]))})
  mode = float(found.x) if -found.fun > values[i] else float(grid[i])
  peak = float(max(-found.fun, values[i]))
  f = lambda u: np.exp(exponent(mode + u) - peak)
  value = integrate(f, -math.inf, math.inf, cfg, scale=scale, initial_panels=16).value
  return float(max((math.log(value) + peak) / (alpha - 1), 0.0))


@dataclass(frozen=True)
class RdpCurve:
  """An RDP guarantee alpha -> eps(alpha) (alpha = 1 is the KL bound)."""

  eps_of_alpha: Callable[[float], float]
  name: str = 'custom'

  def __call__(self, alpha):
    a = np.asarray(alpha, dtype=float)
    if (a <= 0).any():
      raise ValueError('Renyi orders must be positive')
    vals = np.array([float(self.eps_of_alpha(float(v))) for v in a.reshape(-1)])
    return float(vals[0]) if a.ndim == 0 else vals.reshape(a.shape)

  def scale(self, k: float) -> 'RdpCurve':
    return RdpCurve(lambda a: k * self.eps_of_alpha(a), f'{k}x{self.name}')

  def __add__(self, other: 'RdpCurve') -> 'RdpCurve':
    return RdpCurve(lambda a: self.eps_of_alpha(a) + other.eps_of_alpha(a),
                    f'{self.name}+{other.name}')

  @classmethod
  def zero(cls) -> 'RdpCurve':
    return cls(lambda a: 0.0, 'zero')

  @classmethod
  def gaussian(cls, sigma: float) -> 'RdpCurve':
    if not sigma > 0:
      raise ValueError('sigma must be positive')
    return cls(lambda a: a / (2 * sigma * sigma), f'gaussian({sigma})')

  @classmethod
  def discrete(cls, pair: DiscretePair, symmetric: bool = True) -> 'RdpCurve':
    """Exact Renyi divergences of a finite pair, both orderings if symmetric."""
    p = np.concatenate([pair.p, [pair.p_inf, 0.0]])
    q = np.concatenate([pair.q, [0.0, pair.q_inf]])

    def eps(a):
      forward = _renyi_discrete(p, q, a)
      return max(forward, _renyi_discrete(q, p, a)) if symmetric else forward

    return cls(eps, 'discrete')

  @classmethod
  def laplace(cls, lam: float) -> 'RdpCurve':
    """Laplace mechanism with scale lam and sensitivity 1."""
    if not lam > 0:
      raise ValueError('lam must be positive')
    inv = 1 / lam

    def eps(a):
      if a == 1:
        return inv + math.exp(-inv) - 1
      if a > 0.5:
        mix = (a / (2 * a - 1) * math.exp((a - 1) * inv)
               + (a - 1) / (2 * a - 1) * math.exp(-a * inv))
        return math.log(mix) / (a - 1)
      log_p = lambda o: -np.abs(o) * inv - math.log(2 * lam)
      log_q = lambda o: -np.abs(o - 1) * inv - math.log(2 * lam)
      return _renyi_numeric(log_p, log_q, a, 0.5, lam)

    return cls(eps, f'laplace({lam})')

  @classmethod
  def numeric(cls, log_p: Callable, log_q: Callable, center: float = 0.0,
              scale: float = 1.0, symmetric: bool = True) -> 'RdpCurve':
    """Renyi divergences of two densities by quadrature over the real line."""
    def eps(a):
      forward = _renyi_numeric(log_p, log_q, a, center, scale)
      if not symmetric:
        return forward
      return max(forward, _renyi_numeric(log_q, log_p, a, center, scale))
    return cls(eps, 'numeric')

  @classmethod
  def subsampled_gaussian(cls, sigma: float, gamma: float) -> 'RdpCurve':
    """Poisson-subsampled Gaussian; max over add and remove pairs, by quadrature."""
    pairs = [(lambda o, r=r: mixture_log_densities(sigma, gamma, r, o)[0],
              lambda o, r=r: mixture_log_densities(sigma, gamma, r, o)[1])
             for r in ('add', 'remove')]

    def eps(a):
      return max(_renyi_numeric(lp, lq, a, 0.5, sigma) for lp, lq in pairs)

    return cls(eps, f'subsampled_gaussian({sigma},{gamma})')


def subsampled_gaussian_integer_rdp(sigma: float, gamma: float, alpha: int) -> float:
  """Binomial expansion of D_alpha((1-g) N0 + g N1 || N0) for integer alpha >= 2."""
  if int(alpha) != alpha or alpha < 2:
    raise ValueError('integer alpha >= 2 required')
  j = np.arange(alpha + 1)
  log_binom = special.gammaln(alpha + 1) - special.gammaln(j + 1) - special.gammaln(alpha - j + 1)
  with np.errstate(divide='ignore'):
    terms = (log_binom + (alpha - j) * math.log1p(-gamma) + j * math.log(gamma)
             + j * (j - 1) / (2 * sigma * sigma))
  return float(special.logsumexp(terms) / (alpha - 1))


def rdp_compose_convert_classical(curve: RdpCurve, delta: float, k: int = 1,
                                  alphas=None) -> float:
  """min over alpha of k eps(alpha) + log(1/delta) / (alpha - 1)."""
  if not 0 < delta < 1:
    raise ValueError('delta must lie in (0, 1)')
  alphas = classical_alpha_grid() if alphas is None else np.asarray(alphas, dtype=float)
  alphas = alphas[alphas > 1]
  vals = k * curve(alphas) + math.log(1 / delta) / (alphas - 1)
  return float(np.min(vals))


def _log_constraints(alpha: float, x: np.ndarray, y: np.ndarray):
  """Both Renyi constraints on the Bernoulli pair (x, 1 - x) vs (1 - y, y).

  Returns log of each sum for alpha != 1 (the two KL values at alpha = 1).
  """
  with np.errstate(divide='ignore', invalid='ignore'):
    lx, l1x = np.log(x), np.log1p(-x)
    ly, l1y = np.log(y), np.log1p(-y)
    if alpha == 1:
      kl_a = special.xlogy(x, x) - x * l1y + special.xlogy(1 - x, 1 - x) - (1 - x) * ly
      kl_b = special.xlogy(1 - y, 1 - y) - (1 - y) * lx + special.xlogy(y, y) - y * l1x
      return kl_a, kl_b
    a = alpha
    first = np.logaddexp(a * lx + (1 - a) * l1y, a * l1x + (1 - a) * ly)
    second = np.logaddexp(a * l1y + (1 - a) * lx, a * ly + (1 - a) * l1x)
    return first, second


def _min_type_two(alpha: float, eps: float, x: np.ndarray, iters: int = 80) -> np.ndarray:
  """Smallest y in [0, 1 - x] meeting the order-alpha constraints at each x."""
  if not math.isfinite(eps):
    return np.zeros_like(x)

  def feasible(y):
    c1, c2 = _log_constraints(alpha, x, y)
    if alpha == 1:
      return (c1 <= eps) & (c2 <= eps)
    bound = (alpha - 1) * eps
    if alpha > 1:
      return (c1 <= bound + 1e-15) & (c2 <= bound + 1e-15)
    return (c1 >= bound - 1e-15) & (c2 >= bound - 1e-15)

  lo = np.zeros_like(x)
  hi = 1 - x
  zero_ok = feasible(np.zeros_like(x))
  for _ in range(iters):
    mid = 0.5 * (lo + hi)
    ok = feasible(mid)
    hi = np.where(ok, mid, hi)
    lo = np.where(ok, lo, mid)
  return np.where(zero_ok, 0.0, hi)


def _lower_hull_points(x: np.ndarray, y: np.ndarray):
  hull: list[int] = []
  for i in range(x.size):
    while len(hull) >= 2:
      i0, i1 = hull[-2], hull[-1]
      if (x[i1] - x[i0]) * (y[i] - y[i0]) - (y[i1] - y[i0]) * (x[i] - x[i0]) <= 0:
        hull.pop()
      else:
        break
    hull.append(i)
  return x[hull], y[hull]


def default_x_grid() -> np.ndarray:
  # Large eps puts the tangent point near e^-eps, so the grid reaches 1e-300.
  return np.unique(np.concatenate([[0.0], np.geomspace(1e-300, 1e-2, 1500),
                                   np.linspace(1e-2, 1.0, 600)]))


def rdp_tradeoff_fn(curve: RdpCurve, alphas=None, xs=None) -> TradeoffFn:
  """Convex piecewise-linear trade-off implied by an RDP curve.

  At each order the smallest type II error allowed by both Renyi constraints
  is found by bisection; the pointwise max over orders is convexified.
  Orders whose curve value is not finite are skipped.
  """
  alphas = conversion_alpha_grid() if alphas is None else np.asarray(alphas, dtype=float)
  xs = default_x_grid() if xs is None else np.asarray(xs, dtype=float)
  best = np.zeros_like(xs)
  for a in alphas:
    eps = float(curve(a))
    if not math.isfinite(eps):
      continue
    best = np.maximum(best, _min_type_two(float(a), eps, xs))
  best = np.minimum(best, 1 - xs)
  hx, hy = _lower_hull_points(xs, best)
  return TradeoffFn.piecewise_linear(hx, hy)


def rdp_to_tradeoff(curve: RdpCurve, x, alphas=None):
  f = rdp_tradeoff_fn(curve, alphas)
  return f(x)


def tradeoff_to_dp(f: TradeoffFn, delta: float | None = None, eps: float | None = None,
                   iters: int = 200) -> float:
  """delta(eps) = max_x 1 - f(x) - e^eps x, or the smallest eps for a delta.

  For delta(eps) the maximiser solves log(-f'(x)) = eps. For eps(delta) the
  tangent line at x* passes through (0, 1 - delta); eps is the log of minus
  its slope. Returns 0 when no slope steeper than -1 is needed.
  """
  if (delta is None) == (eps is None):
    raise ValueError('give exactly one of delta and eps')
  if eps is not None:
    # Bisection runs on log x so tangent points far below 1e-16 are reachable.
    lo, hi = LOG_X_MIN, 0.0
    for _ in range(iters):
      mid = 0.5 * (lo + hi)
      if float(f.log_slope(math.exp(mid))) > eps:
        lo = mid
      else:
        hi = mid
    scale = math.exp(eps)
    value = max(f.one_minus(x) - scale * x for x in (0.0, math.exp(lo), math.exp(hi)))
    return float(min(1.0, max(value, 0.0)))
  if not 0 <= delta < 1:
    raise ValueError('delta must lie in [0, 1)')

  def intercept(x):
    return f.one_minus(x) + f.right_derivative(x) * x

  # The tangent's delta-intercept grows with x while its slope flattens.
  if intercept(1.0) <= delta:
    return 0.0
  lo, hi = LOG_X_MIN, 0.0
  for _ in range(iters):
    mid = 0.5 * (lo + hi)
    if intercept(math.exp(mid)) < delta:
      lo = mid
    else:
      hi = mid
  x = math.exp(hi)
  slope = -(f.one_minus(x) - delta) / x
  if slope >= -1:
    return 0.0
  return math.log(-slope)
