"""Hockey-stick divergence, privacy profiles, trade-off functions and the
conversions between them.

Conventions used throughout:

* ``H_alpha(P || Q) = sup_S P(S) - alpha * Q(S)`` for ``alpha >= 0``.
* ``L_PQ = log(dP/dQ)`` under P and ``L_QP = log(dQ/dP)`` under Q. Points where
  one measure vanishes give infinite loss; their mass is tracked separately as
  ``p_inf`` (mass of P where Q is zero) and ``q_inf``.
* ``F(x) = P[L_PQ <= x]`` and ``G(x) = Q[L_QP <= x]`` count finite losses only,
  so they increase to ``1 - p_inf`` and ``1 - q_inf``.
* A trade-off function ``f = T[P, Q]`` maps the type I error of a test on P
  against Q to the smallest achievable type II error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import optimize, special

from afa.quadrature import QuadConfig, QuadratureError, integrate

_MASS_TOL = 1e-12


def _logsumexp(a: np.ndarray) -> float:
  return float(special.logsumexp(a)) if a.size else -math.inf


def _readonly(a) -> np.ndarray:
  a = np.array(a, dtype=float)
  a.setflags(write=False)
  return a


@dataclass(frozen=True, eq=False)
class DiscretePair:
  """Two distributions on a common finite outcome set, stored as log masses.

  Outcomes where exactly one measure vanishes are folded into ``logp_inf``
  (P-mass with infinite loss) and ``logq_inf``. Use :meth:`from_probs` to build
  one from plain probability vectors.
  """

  logp: np.ndarray
  logq: np.ndarray
  logp_inf: float = -math.inf
  logq_inf: float = -math.inf
  outcomes: tuple = ()

  def __post_init__(self):
    logp, logq = _readonly(self.logp), _readonly(self.logq)
    if logp.shape != logq.shape or logp.ndim != 1:
      raise ValueError('logp and logq must be 1-d arrays of equal length')
    if not (np.isfinite(logp).all() and np.isfinite(logq).all()):
      raise ValueError('finite atoms need positive mass under both measures')
    object.__setattr__(self, 'logp', logp)
    object.__setattr__(self, 'logq', logq)
    for name, log_atoms, log_inf in (('P', logp, self.logp_inf),
                                     ('Q', logq, self.logq_inf)):
      total = math.exp(_logsumexp(np.append(log_atoms, log_inf)))
      if abs(total - 1.0) > _MASS_TOL:
        raise ValueError(f'{name} masses sum to {total!r}, expected 1')

  @classmethod
  def from_probs(cls, p: Sequence[float], q: Sequence[float],
                 outcomes: Sequence | None = None) -> 'DiscretePair':
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
      raise ValueError('p and q must be 1-d with equal length')
    if (p < 0).any() or (q < 0).any():
      raise ValueError('probabilities must be nonnegative')
    both = (p > 0) & (q > 0)
    only_p = (p > 0) & (q == 0)
    only_q = (q > 0) & (p == 0)
    with np.errstate(divide='ignore'):
      logp_inf = math.log(p[only_p].sum()) if only_p.any() else -math.inf
      logq_inf = math.log(q[only_q].sum()) if only_q.any() else -math.inf
    labels = tuple(outcomes) if outcomes is not None else tuple(range(p.size))
    return cls(np.log(p[both]), np.log(q[both]), logp_inf, logq_inf,
               tuple(o for o, keep in zip(labels, both) if keep))

  @classmethod
  def randomized_response(cls, p: float) -> 'DiscretePair':
    """Binary randomized response that reports the true bit with prob. p."""
    if not 0.5 <= p < 1:
      raise ValueError(f'p must lie in [0.5, 1), got {p}')
    return cls.from_probs([p, 1 - p], [1 - p, p], outcomes=(1, 0))

  @property
  def p(self) -> np.ndarray:
    return np.exp(self.logp)

  @property
  def q(self) -> np.ndarray:
    return np.exp(self.logq)

  @property
  def p_inf(self) -> float:
    return math.exp(self.logp_inf)

  @property
  def q_inf(self) -> float:
    return math.exp(self.logq_inf)

  def swap(self) -> 'DiscretePair':
    return DiscretePair(self.logq, self.logp, self.logq_inf, self.logp_inf,
                        self.outcomes)

  def losses(self, direction: str = 'P') -> tuple[np.ndarray, np.ndarray]:
    """Finite loss atoms and their log masses under P or Q."""
    if direction == 'P':
      return self.logp - self.logq, self.logp
    if direction == 'Q':
      return self.logq - self.logp, self.logq
    raise ValueError(f"direction must be 'P' or 'Q', got {direction!r}")


def hockey_stick(pair: DiscretePair, alpha):
  """H_alpha(P || Q) by direct summation over atoms."""
  a = np.asarray(alpha, dtype=float)
  if np.isnan(a).any() or (a < 0).any():
    raise ValueError('alpha must be a nonnegative number')
  p, q = pair.p, pair.q
  flat = a.reshape(-1)
  vals = np.maximum(p[None, :] - flat[:, None] * q[None, :], 0.0).sum(axis=1)
  vals = np.minimum(vals + pair.p_inf, 1.0)
  return float(vals[0]) if a.ndim == 0 else vals.reshape(a.shape)


def hs_swap(pair: DiscretePair, alpha):
  """H_alpha(Q || P) from the P || Q side via alpha * H_{1/alpha} + 1 - alpha."""
  a = np.asarray(alpha, dtype=float)
  if (a <= 0).any():
    raise ValueError('alpha must be positive for the swap identity')
  vals = a * hockey_stick(pair, 1.0 / a) + 1.0 - a
  vals = np.clip(vals, 0.0, 1.0)
  return float(vals) if a.ndim == 0 else vals


def _call_vectorized(fn: Callable, x: np.ndarray) -> np.ndarray:
  try:
    out = np.asarray(fn(x), dtype=float)
    if out.shape == x.shape:
      return out
  except (TypeError, ValueError):
    pass
  return np.array([float(fn(float(v))) for v in x.reshape(-1)]).reshape(x.shape)


@dataclass(frozen=True)
class PrivacyProfile:
  """A privacy profile ``alpha -> H_alpha`` for one ordering of a pair.

  ``provenance`` records where the curve came from ('exact', 'grid' or
  'profile-derived') and is carried along by the conversions.
  """

  delta_of_alpha: Callable
  provenance: str = 'exact'

  def __call__(self, alpha):
    a = np.asarray(alpha, dtype=float)
    if (a < 0).any():
      raise ValueError('alpha must be nonnegative')
    vals = _call_vectorized(self.delta_of_alpha, a.reshape(-1)).reshape(a.shape)
    return float(vals) if a.ndim == 0 else vals

  def at_eps(self, eps):
    return self(np.exp(np.asarray(eps, dtype=float)))

  @classmethod
  def gaussian(cls, mu: float) -> 'PrivacyProfile':
    """Profile of N(mu, 1) against N(0, 1)."""
    if mu <= 0:
      raise ValueError('mu must be positive')

    def h(alpha):
      alpha = np.asarray(alpha, dtype=float)
      with np.errstate(divide='ignore', invalid='ignore'):
        eps = np.log(alpha)
        val = special.ndtr(mu / 2 - eps / mu) - alpha * special.ndtr(-mu / 2 - eps / mu)
      val = np.where(alpha == 0, 1.0, np.where(np.isinf(alpha), 0.0, val))
      return np.clip(val, 0.0, 1.0)

    return cls(h)

  @classmethod
  def identical(cls) -> 'PrivacyProfile':
    return cls(lambda a: np.maximum(1.0 - np.asarray(a, dtype=float), 0.0))

  @classmethod
  def of_pair(cls, pair: DiscretePair, swapped: bool = False) -> 'PrivacyProfile':
    target = pair.swap() if swapped else pair
    return cls(lambda a: hockey_stick(target, a))

  def check(self, alphas=None, tol: float = 1e-9) -> None:
    """Validates class membership on a grid and raises ValueError if violated."""
    if alphas is None:
      alphas = np.concatenate([[0.0], np.exp(np.linspace(-8, 8, 401))])
    alphas = np.sort(np.asarray(alphas, dtype=float))
    h = self(alphas)
    if alphas[0] == 0 and abs(h[0] - 1) > tol:
      raise ValueError(f'profile at alpha=0 is {h[0]}, expected 1')
    if (np.diff(h) > tol).any():
      i = int(np.argmax(np.diff(h) > tol))
      raise ValueError(f'profile increases near eps={math.log(alphas[i + 1]):.6g}')
    floor = np.maximum(1 - alphas, 0)
    if (h < floor - tol).any():
      i = int(np.argmax(h < floor - tol))
      raise ValueError(f'profile below (1 - alpha)_+ at alpha={alphas[i]:.6g}')
    _check_convex(alphas, h, tol)


def _check_convex(alphas: np.ndarray, h: np.ndarray, tol: float) -> None:
  slopes = np.diff(h) / np.diff(alphas)
  bad = np.diff(slopes) < -tol * (1 + np.abs(slopes[1:]))
  if bad.any():
    i = int(np.argmax(bad)) + 1
    where = math.log(alphas[i]) if alphas[i] > 0 else -math.inf
    raise ValueError(f'profile is not convex near eps={where:.6g}')


def gaussian_tradeoff_values(mu: float, x):
  z = -special.ndtri(np.asarray(x, dtype=float))
  return special.ndtr(z - mu)


@dataclass(frozen=True)
class TradeoffFn:
  """A trade-off function on [0, 1] with optional derivative information.

  ``grad`` returns the right derivative and ``grad_left`` the left one; both
  default to one-sided finite differences. ``log1m_f`` and ``log_neg_grad``
  give log(1 - f) and log(-f') for stable evaluation far in the tails.
  """

  f: Callable
  grad: Callable | None = None
  grad_left: Callable | None = None
  log1m_f: Callable | None = None
  log_neg_grad: Callable | None = None

  def __call__(self, x):
    x = np.asarray(x, dtype=float)
    if (x < 0).any() or (x > 1).any():
      raise ValueError('type I error must lie in [0, 1]')
    vals = _call_vectorized(self.f, x.reshape(-1)).reshape(x.shape)
    return float(vals) if x.ndim == 0 else vals

  def right_derivative(self, x: float) -> float:
    if self.grad is not None:
      return float(self.grad(x))
    h = 1e-8 * max(1.0, abs(x))
    if x + h > 1:
      return self.left_derivative(x)
    return (float(self(x + h)) - float(self(x))) / h

  def left_derivative(self, x: float) -> float:
    if self.grad_left is not None:
      return float(self.grad_left(x))
    if self.grad is not None and self.grad_left is None and self._smooth:
      return float(self.grad(x))
    h = 1e-8 * max(1.0, abs(x))
    if x - h < 0:
      return self.right_derivative(x)
    return (float(self(x)) - float(self(x - h))) / h

  @property
  def _smooth(self) -> bool:
    return self.log_neg_grad is not None

  def one_minus(self, x: float) -> float:
    if self.log1m_f is not None:
      return math.exp(float(self.log1m_f(x)))
    return 1.0 - float(self(x))

  def log_slope(self, x):
    """log(-f'(x)), vectorised; -inf where the slope is zero."""
    x = np.asarray(x, dtype=float)
    if self.log_neg_grad is not None:
      return np.asarray(self.log_neg_grad(x), dtype=float)
    g = np.array([self.right_derivative(float(v)) for v in x.reshape(-1)])
    with np.errstate(divide='ignore'):
      return np.log(np.maximum(-g, 0.0)).reshape(x.shape)

  @classmethod
  def gaussian(cls, mu: float) -> 'TradeoffFn':
    """Trade-off of N(0, 1) against N(mu, 1)."""
    if mu <= 0:
      raise ValueError('mu must be positive')

    def log_neg_grad(x):
      z = -special.ndtri(np.asarray(x, dtype=float))
      return mu * z - mu * mu / 2

    return cls(
        f=lambda x: gaussian_tradeoff_values(mu, x),
        grad=lambda x: -np.exp(log_neg_grad(x)),
        log1m_f=lambda x: special.log_ndtr(mu + special.ndtri(np.asarray(x, dtype=float))),
        log_neg_grad=log_neg_grad,
    )

  @classmethod
  def identity(cls) -> 'TradeoffFn':
    return cls(f=lambda x: 1 - np.asarray(x, dtype=float),
               grad=lambda x: -1.0, grad_left=lambda x: -1.0,
               log_neg_grad=lambda x: np.zeros_like(np.asarray(x, dtype=float)))

  @classmethod
  def piecewise_linear(cls, xs, ys) -> 'TradeoffFn':
    """Linear interpolation through vertices (xs, ys) with xs from 0 to 1."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs[0] != 0 or xs[-1] != 1 or (np.diff(xs) <= 0).any():
      raise ValueError('xs must increase strictly from 0 to 1')
    slopes = np.diff(ys) / np.diff(xs)

    def right(x):
      i = np.clip(np.searchsorted(xs, x, side='right') - 1, 0, slopes.size - 1)
      return slopes[i]

    def left(x):
      i = np.clip(np.searchsorted(xs, x, side='left') - 1, 0, slopes.size - 1)
      return slopes[i]

    return cls(f=lambda x: np.interp(x, xs, ys), grad=right, grad_left=left)

  @classmethod
  def of_pair(cls, pair: DiscretePair) -> 'TradeoffFn':
    """Exact trade-off T[P, Q] of a discrete pair (piecewise linear)."""
    order = np.argsort(pair.logp - pair.logq, kind='stable')
    p, q = pair.p[order], pair.q[order]
    xs = np.concatenate([[0.0], np.cumsum(p)])
    ys = 1.0 - pair.q_inf - np.concatenate([[0.0], np.cumsum(q)])
    if pair.p_inf > 0:
      xs = np.append(xs, 1.0)
      ys = np.append(ys, 0.0)
    xs[-1] = 1.0
    ys = np.maximum(ys, 0.0)
    keep = np.concatenate([[True], np.diff(xs) > 0])
    return cls.piecewise_linear(xs[keep], ys[keep])

  @classmethod
  def randomized_response(cls, p: float) -> 'TradeoffFn':
    return cls.of_pair(DiscretePair.randomized_response(p))


@dataclass(frozen=True)
class LossCDFPair:
  """CDFs of the finite privacy losses, F under P and G under Q.

  ``F_left`` and ``G_left`` give left limits; for continuous losses they can
  be omitted.
  """

  F: Callable
  G: Callable
  p_inf: float = 0.0
  q_inf: float = 0.0
  F_left: Callable | None = None
  G_left: Callable | None = None

  def f_left(self, x):
    return (self.F_left or self.F)(x)

  def g_left(self, x):
    return (self.G_left or self.G)(x)

  @classmethod
  def gaussian(cls, mu: float) -> 'LossCDFPair':
    """Losses of N(mu, 1) against N(0, 1); both are N(mu^2/2, mu^2)."""
    cdf = lambda x: special.ndtr((np.asarray(x, dtype=float) - mu * mu / 2) / mu)
    return cls(F=cdf, G=cdf)

  @classmethod
  def of_pair(cls, pair: DiscretePair) -> 'LossCDFPair':
    lp, mp = pair.losses('P')
    lq, mq = pair.losses('Q')

    def step(losses, logm, strict):
      order = np.argsort(losses)
      sorted_l = losses[order]
      cum = np.concatenate([[0.0], np.cumsum(np.exp(logm[order]))])
      side = 'left' if strict else 'right'
      return lambda x: cum[np.searchsorted(sorted_l, np.asarray(x, float), side=side)]

    return cls(step(lp, mp, False), step(lq, mq, False), pair.p_inf, pair.q_inf,
               step(lp, mp, True), step(lq, mq, True))


def profile_from_cdfs(cdfs: LossCDFPair, alpha, orientation: str = 'PQ'):
  """H_alpha for one ordering from the loss CDFs.

  ``H_alpha(P || Q) = 1 - F(log alpha) - alpha * G(-log alpha -)`` and the
  Q || P ordering swaps the roles of F and G.
  """
  if orientation not in ('PQ', 'QP'):
    raise ValueError("orientation must be 'PQ' or 'QP'")
  a = np.asarray(alpha, dtype=float)
  if (a < 0).any():
    raise ValueError('alpha must be nonnegative')
  out = np.ones(a.shape)
  pos = a > 0
  eps = np.log(a[pos])
  if orientation == 'PQ':
    vals = 1 - np.asarray(cdfs.F(eps)) - a[pos] * np.asarray(cdfs.g_left(-eps))
  else:
    vals = 1 - np.asarray(cdfs.G(eps)) - a[pos] * np.asarray(cdfs.f_left(-eps))
  out[pos] = vals
  out = np.clip(out, 0.0, 1.0)
  return float(out) if a.ndim == 0 else out


def _profile_log_derivative(profile: PrivacyProfile, y: np.ndarray) -> np.ndarray:
  h = np.maximum(1e-6, 1e-4 * np.abs(y))
  return (profile(np.exp(y + h)) - profile(np.exp(y - h))) / (2 * h)


def _monotone(raw: Callable, lo: float, hi: float, cap: float) -> Callable:
  grid = np.linspace(-60.0, 60.0, 2401)
  running = np.maximum.accumulate(np.clip(raw(grid), lo, cap))

  def cdf(x):
    x = np.asarray(x, dtype=float)
    idx = np.searchsorted(grid, x, side='right') - 1
    floor = np.where(idx >= 0, running[np.clip(idx, 0, grid.size - 1)], lo)
    return np.clip(np.maximum(raw(x), floor), lo, cap)

  return cdf


def cdfs_from_profile(profile_qp: PrivacyProfile, p_inf: float = 0.0) -> LossCDFPair:
  """Loss CDFs from the Q || P profile by differentiating in eps.

  With ``h(y) = H_{e^y}(Q || P)``, ``G(x) = 1 - h(x) + h'(x)`` and
  ``F(x) = -e^x h'(-x)``. Numerical ripple is removed by clamping and a
  running maximum. ``p_inf`` cannot be recovered stably from the profile and
  must be supplied when nonzero.

  Raises:
    ValueError: if the sampled profile is not convex in alpha.
  """
  alphas = np.exp(np.linspace(-12, 12, 961))
  h = profile_qp(alphas)
  _check_convex(alphas, h, 1e-9)
  q_inf = float(np.clip(profile_qp(1e12), 0.0, 1.0))

  def g_raw(x):
    x = np.asarray(x, dtype=float)
    return 1 - profile_qp(np.exp(x)) + _profile_log_derivative(profile_qp, x)

  def f_raw(x):
    x = np.asarray(x, dtype=float)
    return -np.exp(x) * _profile_log_derivative(profile_qp, -x)

  return LossCDFPair(F=_monotone(f_raw, 0.0, 0.0, 1.0 - p_inf),
                     G=_monotone(g_raw, 0.0, 0.0, 1.0 - q_inf),
                     p_inf=p_inf, q_inf=q_inf)


def _quantile_bracket(cdf: Callable, target: float) -> tuple[float, float]:
  """A tight (lo, hi] bracket of inf{u : cdf(u) >= target}."""
  lo, hi = -1.0, 1.0
  for _ in range(80):
    if float(cdf(lo)) < target:
      break
    lo *= 2
  else:
    return -math.inf, -math.inf
  for _ in range(80):
    if float(cdf(hi)) >= target:
      break
    hi *= 2
  else:
    return math.inf, math.inf
  for _ in range(200):
    mid = 0.5 * (lo + hi)
    if float(cdf(mid)) >= target:
      hi = mid
    else:
      lo = mid
    if hi - lo <= 1e-13 * max(1.0, abs(hi)):
      break
  return lo, hi


def tradeoff_from_cdfs(cdfs: LossCDFPair, x: float) -> float:
  """T[P, Q](x) from the loss CDFs, randomising at loss atoms."""
  if not 0 <= x <= 1:
    raise ValueError('x must lie in [0, 1]')
  if x == 0:
    return float(1 - cdfs.q_inf)
  lo, hi = _quantile_bracket(cdfs.F, x)
  if math.isinf(hi):
    return 0.0 if hi > 0 else float(1 - cdfs.q_inf)
  # The quantile (and any atom sitting on it) lies in (lo, hi].
  f_lo, f_hi = float(cdfs.F(lo)), float(cdfs.F(hi))
  above_hi = float(cdfs.g_left(-hi))
  above_lo = float(cdfs.g_left(-lo))
  jump = f_hi - f_lo
  theta = (x - f_lo) / jump if jump > 0 else 1.0
  theta = min(max(theta, 0.0), 1.0)
  return float(np.clip(above_hi + (1 - theta) * (above_lo - above_hi), 0.0, 1.0))


class ConjugateValue(NamedTuple):
  value: float
  error_bound: float


def fenchel_conjugate(f: TradeoffFn, slope: float, n_grid: int = 2048) -> ConjugateValue:
  """min over x in [0, 1] of f(x) + slope * x, refined around the best node."""
  xs = np.linspace(0.0, 1.0, n_grid + 1)
  vals = f(xs) + slope * xs
  i = int(np.argmin(vals))
  lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, n_grid)]
  best = float(vals[i])
  if hi > lo:
    res = optimize.minimize_scalar(lambda v: float(f(v)) + slope * v,
                                   bounds=(lo, hi), method='bounded',
                                   options={'xatol': 1e-14})
    if res.fun < best:
      best = float(res.fun)
  return ConjugateValue(best, abs(float(vals[i]) - best) + 1e-15)


def profile_from_tradeoff(f: TradeoffFn, eps):
  """H_{e^eps}(Q || P) = 1 - min_x (f(x) + e^eps x) for f = T[P, Q]."""
  e = np.asarray(eps, dtype=float)
  vals = np.array([1.0 - fenchel_conjugate(f, math.exp(v)).value for v in e.reshape(-1)])
  vals = np.clip(vals, 0.0, 1.0).reshape(e.shape)
  return float(vals) if e.ndim == 0 else vals


def tradeoff_from_profile(profile: PrivacyProfile, x, eps_grid=None):
  """Trade-off implied by a symmetric profile on a grid of eps >= 0.

  ``f(x) = sup_eps max{0, 1 - delta - e^eps x, e^-eps (1 - delta - x)}``.
  """
  if eps_grid is None:
    eps_grid = np.linspace(0.0, 20.0, 4001)
  eps_grid = np.asarray(eps_grid, dtype=float)
  deltas = np.asarray(profile.at_eps(eps_grid), dtype=float).reshape(-1)
  e = np.exp(eps_grid).reshape(-1)
  xv = np.asarray(x, dtype=float)
  flat = xv.reshape(-1, 1)
  first = 1 - deltas[None, :] - e[None, :] * flat
  second = (1 - deltas[None, :] - flat) / e[None, :]
  vals = np.maximum(0.0, np.maximum(first, second).max(axis=1))
  vals = vals.reshape(xv.shape)
  return float(vals) if xv.ndim == 0 else vals


def phi_from_tradeoff(f: TradeoffFn, t, prime: bool = False,
                      cfg: QuadConfig = QuadConfig(abs_tol=1e-10, max_panels=4096)):
  """Characteristic function of the loss from a differentiable trade-off.

  Under the uniform reparametrisation the loss equals ``-log|f'(x)|``, so
  ``phi(t) = int_0^1 exp(-i t log|f'(x)|) dx`` and
  ``phi'(t) = int_0^1 exp(i t log|f'(x)|) |f'(x)| dx``.

  Raises:
    ValueError: if |f'| is zero or infinite on a sampled set of positive
      measure (mass at infinity has to be split off first).
  """
  probe = (np.arange(1024) + 0.5) / 1024
  s = f.log_slope(probe)
  if (~np.isfinite(s)).mean() > 0.01:
    raise ValueError("f' vanishes or is unbounded on a set of positive measure")
  tv = np.atleast_1d(np.asarray(t, dtype=float))

  def integrand(x):
    ls = f.log_slope(x)
    ls = np.where(np.isfinite(ls), ls, 0.0)
    if prime:
      vals = np.exp(1j * np.outer(ls, tv) + ls[:, None])
    else:
      vals = np.exp(-1j * np.outer(ls, tv))
    return vals

  res = integrate(integrand, 0.0, 1.0, cfg, initial_panels=16)
  val = np.atleast_1d(res.value)
  return complex(val[0]) if np.ndim(t) == 0 else val


def g_from_f(F, x, F_left: Callable | None = None,
             cfg: QuadConfig = QuadConfig(abs_tol=1e-11)):
  """G(x) = Q[L_QP <= x] from F alone through the tilt dQ = e^{-L} dP.

  ``G(x) = int_{[-x, inf)} e^{-s} dF(s)``, evaluated as
  ``int_{-x}^inf e^{-s} (F(s) - F(-x-)) ds`` to avoid cancellation. A
  :class:`DiscretePair` is handled exactly.
  """
  xv = np.asarray(x, dtype=float)
  if isinstance(F, DiscretePair):
    losses, logm = F.losses('P')
    tilted = np.exp(logm - losses)
    flat = xv.reshape(-1)
    vals = np.array([tilted[losses >= -v].sum() for v in flat]).reshape(xv.shape)
    return float(vals) if xv.ndim == 0 else vals
  left = F_left or F
  out = []
  for v in xv.reshape(-1):
    base = float(left(-v))
    res = integrate(lambda s: np.exp(-s) * (np.asarray(F(s), dtype=float) - base),
                    -float(v), math.inf, cfg, scale=1.0, initial_panels=8)
    if not res.converged:
      raise QuadratureError(f'tilt integral did not converge at x={v}', res.error)
    out.append(res.value)
  vals = np.array(out).reshape(xv.shape)
  return float(vals) if xv.ndim == 0 else vals


class RenyiResult(NamedTuple):
  value: float
  error: float
  finite: bool


def renyi_from_profile(profile_pq: PrivacyProfile, alpha: float,
                       profile_qp: PrivacyProfile | None = None,
                       cfg: QuadConfig = QuadConfig(abs_tol=1e-11)) -> RenyiResult:
  """Renyi divergence D_alpha(P || Q) from the two hockey-stick profiles.

  Uses ``exp((alpha - 1) D) = 1 + alpha (alpha - 1) int_0^inf
  [e^{(alpha-1) eps} H_{e^eps}(P||Q) + e^{-alpha eps} H_{e^eps}(Q||P)] deps``.
  When ``profile_qp`` is omitted the swap identity supplies it. Positive mass
  at infinity (a profile that does not vanish) gives an infinite result.
  """
  if not alpha > 1:
    raise ValueError('alpha must exceed 1')
  if profile_qp is None:
    def swapped(a):
      a = np.asarray(a, dtype=float)
      with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        vals = a * profile_pq(1 / a) + 1 - a
      return np.clip(np.where(np.isfinite(vals), vals, 0.0), 0.0, 1.0)
    profile_qp = PrivacyProfile(swapped)
  if profile_pq(math.exp(300.0)) > 0:
    return RenyiResult(math.inf, 0.0, False)

  def integrand(eps):
    with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
      hp = np.asarray(profile_pq(np.exp(eps)), dtype=float)
      hq = np.asarray(profile_qp(np.exp(eps)), dtype=float)
      a = np.where(hp > 0, np.exp((alpha - 1) * eps + np.log(np.where(hp > 0, hp, 1))), 0.0)
      b = np.where(hq > 0, np.exp(-alpha * eps + np.log(np.where(hq > 0, hq, 1))), 0.0)
    return a + b

  res = integrate(integrand, 0.0, math.inf, cfg, scale=2.0, initial_panels=8)
  if not math.isfinite(res.value):
    return RenyiResult(math.inf, 0.0, False)
  inner = 1 + alpha * (alpha - 1) * res.value
  value = math.log(inner) / (alpha - 1)
  err = alpha * res.error / inner
  return RenyiResult(value, err, res.converged)
