"""Adaptive Gauss-Legendre integration and characteristic-function inversion.

The integrator works on vectorised integrands and refines every unconverged
panel in one batch, so that expensive integrands (characteristic functions of
large grids, inner quadratures) are evaluated on whole node arrays at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np


class QuadratureError(RuntimeError):
  """Raised when an integral cannot be brought within its error budget."""

  def __init__(self, message: str, error: float | dict | None = None):
    super().__init__(message)
    self.error = error


@dataclass(frozen=True)
class QuadConfig:
  """Error budget for adaptive integration.

  Attributes:
    abs_tol: Target absolute error of the whole integral.
    nodes_per_panel: Gauss-Legendre order used on every panel.
    max_panels: Refinement stops (unconverged) once this many panels exist.
  """

  abs_tol: float = 1e-12
  nodes_per_panel: int = 30
  max_panels: int = 2048

  def __post_init__(self):
    if not self.abs_tol > 0:
      raise ValueError(f'abs_tol must be positive, got {self.abs_tol}')
    if self.nodes_per_panel < 2:
      raise ValueError('nodes_per_panel must be at least 2')
    if self.max_panels < 1:
      raise ValueError('max_panels must be at least 1')


class QuadResult(NamedTuple):
  value: float | complex | np.ndarray
  error: float
  converged: bool


@lru_cache(maxsize=32)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
  """Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1]."""
  nodes, weights = np.polynomial.legendre.leggauss(n)
  nodes.setflags(write=False)
  weights.setflags(write=False)
  return nodes, weights


def map_infinite(u, center: float = 0.0, scale: float = 1.0):
  """Maps u in (-1, 1) onto the real line.

  Returns the image ``center + scale * u / (1 - u**2)`` and the Jacobian
  ``scale * (1 + u**2) / (1 - u**2)**2``. Restricting u to (0, 1) covers the
  half line to the right of ``center``.
  """
  u = np.asarray(u, dtype=float)
  one_minus = 1.0 - u * u
  x = center + scale * u / one_minus
  jac = scale * (1.0 + u * u) / (one_minus * one_minus)
  return x, jac


def _as_columns(values: np.ndarray, n_points: int) -> np.ndarray:
  values = np.asarray(values)
  if values.ndim == 0:
    values = np.full(n_points, values)
  if values.shape[0] != n_points:
    raise ValueError('integrand must return one row per node')
  return values.reshape(n_points, -1)


def _panel_sums(f, lefts: np.ndarray, rights: np.ndarray, n: int):
  """Gauss-Legendre sums of f on each panel plus sums of |f|."""
  xi, w = gauss_legendre(n)
  half = 0.5 * (rights - lefts)
  mid = 0.5 * (rights + lefts)
  nodes = (mid[:, None] + half[:, None] * xi[None, :]).ravel()
  vals = _as_columns(f(nodes), nodes.size)
  if np.isnan(vals).any():
    raise FloatingPointError('integrand returned NaN')
  vals = vals.reshape(lefts.size, n, -1)
  weights = half[:, None] * w[None, :]
  sums = np.einsum('pn,pnm->pm', weights, vals)
  mags = np.einsum('pn,pnm->pm', np.abs(weights), np.abs(vals))
  return sums, mags


def _adaptive(f, edges: np.ndarray, cfg: QuadConfig, control=None) -> QuadResult:
  n = cfg.nodes_per_panel
  total_width = edges[-1] - edges[0]
  lefts, rights = edges[:-1].copy(), edges[1:].copy()
  whole, _ = _panel_sums(f, lefts, rights, n)
  value = np.zeros(whole.shape[1], dtype=whole.dtype)
  error = 0.0
  n_panels = lefts.size
  converged = True
  while lefts.size:
    mids = 0.5 * (lefts + rights)
    left_sum, left_mag = _panel_sums(f, lefts, mids, n)
    right_sum, right_mag = _panel_sums(f, mids, rights, n)
    refined = left_sum + right_sum
    cols = slice(None) if control is None else control
    diff = np.max(np.abs(refined - whole)[:, cols], axis=1)
    floor = 64 * np.finfo(float).eps * np.max((left_mag + right_mag)[:, cols], axis=1)
    local_tol = cfg.abs_tol * (rights - lefts) / total_width
    done = diff <= np.maximum(local_tol, floor)
    value = value + refined[done].sum(axis=0)
    error += float(diff[done].sum())
    todo = ~done
    if not todo.any():
      break
    if n_panels + int(todo.sum()) > cfg.max_panels:
      value = value + refined[todo].sum(axis=0)
      error += float(diff[todo].sum())
      converged = False
      break
    n_panels += int(todo.sum())
    lefts = np.concatenate([lefts[todo], mids[todo]])
    rights = np.concatenate([mids[todo], rights[todo]])
    whole = np.concatenate([left_sum[todo], right_sum[todo]])
  converged = converged and error <= cfg.abs_tol * 10
  return QuadResult(value, error, converged)


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    cfg: QuadConfig = QuadConfig(),
    *,
    scale: float = 1.0,
    initial_panels: int = 1,
    breakpoints=None,
    control=None,
) -> QuadResult:
  """Integrates a vectorised function over [a, b].

  Infinite endpoints are handled with :func:`map_infinite`; ``scale`` sets the
  width of the mapped region. ``f`` receives a 1-d array of nodes and returns
  one value (or one row of values) per node. Vector-valued integrands are
  refined until every component meets the budget.

  Returns:
    A QuadResult. When the panel budget runs out the best value is returned
    with ``converged=False``. ``control`` (an index or slice) limits error
    control to some columns, e.g. when other columns carry error bounds.
  """
  if not (a < b or (math.isinf(a) and math.isinf(b) and a < b)):
    if a == b:
      probe = _as_columns(f(np.array([a], dtype=float)), 1)
      zero = np.zeros(probe.shape[1], dtype=probe.dtype)
      return QuadResult(_squeeze(zero), 0.0, True)
    raise ValueError(f'need a < b, got [{a}, {b}]')

  if math.isinf(a) and math.isinf(b):
    def g(u):
      x, jac = map_infinite(u, 0.0, scale)
      return _as_columns(f(x), u.size) * jac[:, None]
    lo, hi = -1.0, 1.0
  elif math.isinf(b):
    def g(u):
      x, jac = map_infinite(u, a, scale)
      return _as_columns(f(x), u.size) * jac[:, None]
    lo, hi = 0.0, 1.0
  elif math.isinf(a):
    def g(u):
      x, jac = map_infinite(u, b, scale)
      return _as_columns(f(x), u.size) * jac[:, None]
    lo, hi = -1.0, 0.0
  else:
    g, lo, hi = f, a, b

  if breakpoints is not None:
    edges = np.unique(np.concatenate([[lo, hi], np.asarray(breakpoints, float)]))
    edges = edges[(edges >= lo) & (edges <= hi)]
  else:
    edges = np.linspace(lo, hi, max(1, int(initial_panels)) + 1)
  res = _adaptive(g, edges, cfg, control)
  return QuadResult(_squeeze(res.value), res.error, res.converged)


def _squeeze(value: np.ndarray):
  if value.size == 1:
    item = value.reshape(-1)[0]
    return complex(item) if np.iscomplexobj(value) else float(item)
  return value


class _PhiCache:
  """Memo of characteristic-function values keyed by the node value."""

  def __init__(self):
    self.store: dict[float, tuple[complex, float]] = {}

  def lookup(self, t: np.ndarray, compute):
    missing = [v for v in t.tolist() if v not in self.store]
    if missing:
      arr = np.asarray(missing)
      phi, err = compute(arr)
      self.store.update(zip(missing, zip(phi.tolist(), err.tolist())))
    pairs = [self.store[v] for v in t.tolist()]
    phi = np.fromiter((p[0] for p in pairs), dtype=complex, count=len(pairs))
    err = np.fromiter((p[1] for p in pairs), dtype=float, count=len(pairs))
    return phi, err


def _initial_panel_count(mean: float, x: np.ndarray, scale: float) -> int:
  cycles = float(np.max(np.abs(mean - x))) * 10.0 * scale / (2 * math.pi)
  target = max(8.0, 2.0 * cycles)
  return int(min(512, 2 ** math.ceil(math.log2(target))))


def levy_cdf(
    ledger,
    direction: str,
    x,
    cfg: QuadConfig = QuadConfig(),
    *,
    left: bool = False,
    full_output: bool = False,
    cache: dict | None = None,
):
  """CDF of the composed privacy loss at x, by Levy inversion.

  ``ledger`` is a :class:`afa.phi.LogPhiLedger`. The returned CDF covers the
  finite part of the loss only, so it increases towards ``1 - inf_mass``. Any
  purely atomic component of the ledger is resolved by exact enumeration and
  only the remainder is inverted numerically.

  Args:
    ledger: The composed characteristic-function ledger.
    direction: 'P' for the loss under P, 'Q' for the loss under Q.
    x: Scalar or array of evaluation points.
    cfg: Error budget of the outer integral.
    left: Return the left limit F(x-) instead of F(x).
    full_output: Also return the error estimate.
    cache: Optional dict reused across calls on the same ledger.

  Raises:
    QuadratureError: when the integral does not converge.
  """
  if direction not in ('P', 'Q'):
    raise ValueError(f"direction must be 'P' or 'Q', got {direction!r}")
  x_arr = np.atleast_1d(np.asarray(x, dtype=float))
  if np.isnan(x_arr).any():
    raise ValueError('x must not be NaN')
  mass = ledger.finite_mass(direction)
  if len(ledger.terms) == 1 and ledger.terms[0][1] == 1:
    # A single continuous use needs no inversion when its CDF is known.
    exact = ledger.terms[0][0].exact_cdf(x_arr, direction)
    if exact is not None:
      out = float(exact[0]) if np.ndim(x) == 0 else np.asarray(exact, dtype=float)
      return (out, 0.0) if full_output else out
  known = ledger.split(direction)

  values = np.zeros_like(x_arr)
  error = 0.0
  if known is not None:
    values += known.cdf(x_arr, left=left)
  if (known is None or known.has_remainder) and mass > 0:
    rem, err = _levy_remainder(ledger, direction, x_arr, known, mass, cfg, cache)
    values += rem
    error += err
  values = np.clip(values, 0.0, mass)
  out = float(values[0]) if np.ndim(x) == 0 else values
  if full_output:
    return out, error
  return out


def levy_tilted_survival(ledger, direction: str, eps: float, cfg: QuadConfig = QuadConfig(),
                         cache: dict | None = None) -> tuple[float, float]:
  """int_0^inf e^-u P[eps + u < L < inf] du and its error, for ledgers without atoms.

  Swapping the order of integration turns the u-integral into the factor
  1 / (1 + i t) inside a single Levy integral.
  """
  if ledger.split(direction) is not None:
    raise ValueError('the tilted form needs a ledger without atoms')
  mass = ledger.finite_mass(direction)
  value, err = _levy_remainder(ledger, direction, np.array([float(eps)]), None, mass, cfg,
                               cache, tilt=True)
  return float(value[0]), err


def _levy_remainder(ledger, direction, x_arr, known, mass, cfg, cache, tilt=False):
  mean, var = ledger.loss_moments(direction)
  scale = 1.0 / math.sqrt(var) if var > 0 else 1.0
  rem_mass = mass - (known.total_mass if known is not None else 0.0)

  def compute(t):
    phi, err = ledger.phi_with_error(t, direction)
    if known is not None:
      phi = phi - known.phi(t)
    return phi, err

  if cache is not None:
    store = cache.setdefault(('levy', direction), _PhiCache())
    evaluate = lambda t: store.lookup(t, compute)
  else:
    evaluate = compute

  def integrand(u):
    t, jac = map_infinite(u, 0.0, scale)
    phi, err = evaluate(t)
    if np.isnan(phi).any():
      raise FloatingPointError('characteristic function returned NaN')
    if tilt:
      damp = 1.0 / (1.0 + 1j * t)
      phi, err = phi * damp, err * np.abs(damp)
    rot = np.exp(-1j * np.outer(t, x_arr))
    vals = np.imag(rot * phi[:, None]) / t[:, None] * jac[:, None]
    bound = (err / t * jac)[:, None]
    return np.hstack([vals, bound])

  tail = 0.0
  if known is not None and known.has_remainder:
    res, tail = _truncated_remainder(evaluate, x_arr, known, cfg)
  else:
    n0 = _initial_panel_count(mean, x_arr, scale)
    res = integrate(integrand, 0.0, 1.0, cfg, initial_panels=n0,
                    control=slice(0, x_arr.size))
  integral = np.atleast_1d(res.value)
  propagated = float(integral[-1]) / math.pi
  total_err = res.error / math.pi + propagated + tail
  if not res.converged or total_err > max(1e3 * cfg.abs_tol, 1e-9):
    raise QuadratureError(
        f'Levy inversion did not converge (error estimate {total_err:.3g})',
        error=total_err)
  if tilt:
    return 0.5 * rem_mass + integral[:-1] / math.pi, total_err
  return 0.5 * rem_mass - integral[:-1] / math.pi, total_err


def _truncated_remainder(evaluate, x_arr, known, cfg):
  """Integrates a slowly decaying remainder on [0, T] directly in t.

  T is the smallest power of two for which the closed-form envelope puts the
  neglected tail below a tenth of the budget. Panels are sized to the fastest
  oscillation, which is bounded by the support radius plus max |x|.
  """
  def tail_integral(t0):
    res = integrate(lambda t: known.remainder_bound(t) / t, t0, math.inf,
                    QuadConfig(abs_tol=1e-3 * cfg.abs_tol), scale=t0, initial_panels=4)
    return res.value / math.pi

  cut = 16.0
  tail = tail_integral(cut)
  while tail > 0.1 * cfg.abs_tol and cut < 2.0 ** 24:
    cut *= 2
    tail = tail_integral(cut)
  if tail > 0.1 * cfg.abs_tol:
    raise QuadratureError(f'remainder tail {tail:.3g} exceeds budget', error=tail)
  freq = known.support_radius + float(np.max(np.abs(x_arr)))
  n0 = int(min(2 ** 22, max(16, math.ceil(cut * freq / math.pi))))

  def integrand(t):
    phi, err = evaluate(t)
    rot = np.exp(-1j * np.outer(t, x_arr))
    vals = np.imag(rot * phi[:, None]) / t[:, None]
    return np.hstack([vals, (err / t)[:, None]])

  budget = QuadConfig(cfg.abs_tol, cfg.nodes_per_panel, max(cfg.max_panels, 4 * n0))
  return integrate(integrand, 0.0, cut, budget, initial_panels=n0,
                   control=slice(0, x_arr.size)), tail
