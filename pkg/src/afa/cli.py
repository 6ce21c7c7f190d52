"""Command-line front end: ``afa query``, ``afa sweep`` and ``afa convert``.

Exit codes: 0 success, 1 input error, 2 numerical budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace

import numpy as np

from afa.accountant import NoFiniteEpsilon, delta_of_eps, eps_of_delta, gaussian_delta_oracle
from afa.divergence import (PrivacyProfile, TradeoffFn, phi_from_tradeoff,
                            tradeoff_from_profile)
from afa.dominating import AtomBudgetError
from afa.quadrature import QuadratureError
from afa.rdp import (rdp_compose_convert_classical, rdp_tradeoff_fn, tradeoff_to_dp)
from afa.schedule import Mechanism, Schedule, ScheduleError

SCHEMA = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
METHODS = ('afa', 'afa_lo', 'afa_hi', 'rdp_classical', 'rdp_optconv', 'oracle')


def format_float(x: float) -> str:
  if math.isnan(x):
    return 'NaN'
  if math.isinf(x):
    return 'Infinity' if x > 0 else '-Infinity'
  return '%.17g' % x


def dumps(obj) -> str:
  """JSON with every float printed to 17 significant digits."""
  if isinstance(obj, bool) or obj is None:
    return json.dumps(obj)
  if isinstance(obj, (float, np.floating)):
    return format_float(float(obj))
  if isinstance(obj, (int, np.integer)):
    return str(int(obj))
  if isinstance(obj, str):
    return json.dumps(obj)
  if isinstance(obj, dict):
    return '{' + ', '.join(f'{json.dumps(str(k))}: {dumps(v)}' for k, v in obj.items()) + '}'
  if isinstance(obj, (list, tuple)):
    return '[' + ', '.join(dumps(v) for v in obj) + ']'
  raise TypeError(f'cannot serialise {type(obj).__name__}')


def _apply_overrides(schedule: Schedule, args) -> Schedule:
  quad = schedule.quad
  if getattr(args, 'abs_tol', None) is not None:
    quad = replace(quad, abs_tol=args.abs_tol)
  changes = {'quad': quad}
  if getattr(args, 'grid_S', None) is not None:
    changes['grid_S'] = args.grid_S
  if getattr(args, 'grid_N', None) is not None:
    changes['grid_N'] = int(args.grid_N)
  return replace(schedule, **changes)


def _settings(schedule: Schedule, sandwich: bool) -> dict:
  out = {'abs_tol': schedule.quad.abs_tol, 'max_panels': schedule.quad.max_panels,
         'mechanisms': len(schedule.mechanisms), 'sandwich': sandwich}
  if sandwich:
    out.update(grid_S=schedule.grid_S, grid_N=schedule.grid_N)
  return out


def cmd_query(args) -> int:
  schedule = _apply_overrides(Schedule.load(args.schedule), args)
  # A level on the command line replaces the schedule's query.
  if args.eps is not None or args.delta is not None:
    eps, delta = args.eps, args.delta
  else:
    eps, delta = schedule.query.get('eps'), schedule.query.get('delta')
  if (eps is None) == (delta is None):
    raise ScheduleError('give exactly one of --eps and --delta')
  record: dict = {'schema': SCHEMA}
  accts = schedule.accountants()
  record['inf_mass'] = max(a.inf_mass for a in accts)
  if args.sandwich:
    bounds = schedule.sandwich()
    if eps is not None:
      lo, hi = bounds.delta_bounds(float(eps))
      record.update(eps=float(eps), delta_lo=lo, delta_hi=hi, err_estimate=hi - lo)
    else:
      lo, hi = bounds.eps_bounds(float(delta))
      record.update(delta=float(delta), eps_lo=lo, eps_hi=hi, err_estimate=hi - lo)
  elif eps is not None:
    results = [a.delta_of_eps(float(eps), full_output=True) for a in accts]
    record.update(eps=float(eps), delta=max(r.delta for r in results),
                  err_estimate=max(r.error for r in results))
  else:
    value = eps_of_delta(accts, float(delta))
    record.update(delta=float(delta), eps=value, err_estimate=1e-8)
  record['settings'] = _settings(schedule, args.sandwich)
  print(dumps(record))
  return EXIT_OK


def _parse_k_list(text: str) -> list[int]:
  try:
    ks = [int(float(v)) for v in text.split(',') if v.strip()]
  except ValueError as exc:
    raise ScheduleError(f'bad --k list {text!r}') from exc
  if not ks or any(k < 1 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
    raise ScheduleError('--k must be a nonempty increasing list of positive integers')
  return ks


def _sweep_row(schedule: Schedule, k: int, method: str, target: str, level: float):
  """(value, err) of one method at k compositions; value is eps or delta."""
  if method == 'afa':
    accts = schedule.accountants(k)
    if target == 'delta':
      return eps_of_delta(accts, level), 1e-8
    return delta_of_eps(accts, level), schedule.quad.abs_tol
  if method in ('afa_lo', 'afa_hi'):
    bounds = schedule.sandwich(k)
    if target == 'delta':
      pair = bounds.eps_bounds(level)
    else:
      pair = bounds.delta_bounds(level)
    return (pair[0] if method == 'afa_lo' else pair[1]), pair[1] - pair[0]
  if method == 'oracle':
    mu = schedule.gaussian_mu(k)
    if mu is None:
      return math.nan, 0.0
    if target == 'delta':
      from afa.accountant import eps_from_delta_curve
      return eps_from_delta_curve(lambda e: gaussian_delta_oracle(mu, e), level), 1e-8
    return gaussian_delta_oracle(mu, level), 0.0
  curve = schedule.rdp_curve(k)
  if method == 'rdp_classical':
    if target != 'delta':
      return math.nan, 0.0
    return rdp_compose_convert_classical(curve, level), 0.0
  f = rdp_tradeoff_fn(curve)
  if target == 'delta':
    return tradeoff_to_dp(f, delta=level), 0.0
  return tradeoff_to_dp(f, eps=level), 0.0


def cmd_sweep(args) -> int:
  schedule = _apply_overrides(Schedule.load(args.schedule), args)
  ks = _parse_k_list(args.k)
  if args.delta is not None:
    target, level = 'delta', args.delta
  elif args.eps is not None:
    target, level = 'eps', args.eps
  elif 'delta' in schedule.query:
    target, level = 'delta', float(schedule.query['delta'])
  elif 'eps' in schedule.query:
    target, level = 'eps', float(schedule.query['eps'])
  else:
    raise ScheduleError('sweep needs a delta or eps level')
  methods = [m.strip() for m in args.methods.split(',')] if args.methods else None
  if methods is None:
    methods = ['afa', 'rdp_classical', 'rdp_optconv']
    if schedule.gaussian_mu() is not None:
      methods.append('oracle')
    if args.sandwich:
      methods[1:1] = ['afa_lo', 'afa_hi']
  unknown = set(methods) - set(METHODS)
  if unknown:
    raise ScheduleError(f'unknown methods {sorted(unknown)}')
  status = EXIT_OK
  with open(args.out, 'w', newline='') as handle:
    writer = csv.writer(handle)
    writer.writerow(['k', 'method', 'value', 'err'])
    for k in ks:
      for method in methods:
        try:
          value, err = _sweep_row(schedule, k, method, target, level)
        except (QuadratureError, AtomBudgetError, FloatingPointError):
          value, err, status = math.nan, float(EXIT_NUMERIC), EXIT_NUMERIC
        except (NoFiniteEpsilon, ValueError):
          value, err, status = math.nan, float(EXIT_INPUT), max(status, EXIT_INPUT)
        writer.writerow([k, method, format_float(value), format_float(err)])
  return status


def _mechanism(args) -> Mechanism:
  try:
    raw = json.loads(args.mechanism)
  except json.JSONDecodeError as exc:
    raise ScheduleError(f'--mechanism is not JSON: {exc}') from exc
  return Mechanism.from_dict(raw)


def _tradeoff_of(mech: Mechanism, k: int) -> TradeoffFn:
  if mech.sampling is None and mech.kind == 'gaussian':
    return TradeoffFn.gaussian(math.sqrt(k * mech.count) / float(mech.params['sigma']))
  if k * mech.count == 1 and mech.sampling is None and mech.kind in ('rr', 'discrete'):
    return TradeoffFn.of_pair(mech.pair().to_discrete())
  raise ScheduleError('trade-off input supports a Gaussian (any k) or a single rr/discrete')


def cmd_convert(args) -> int:
  mech = _mechanism(args)
  k = args.k
  record: dict = {'schema': SCHEMA, 'from': args.source, 'to': args.target}
  xs = [float(v) for v in args.x.split(',')] if args.x else None
  ts = [float(v) for v in args.t.split(',')] if args.t else None
  if args.source == 'rdp':
    curve = Schedule((mech,)).rdp_curve(k)
    if args.target == 'dp':
      if args.delta is None:
        raise ScheduleError('rdp -> dp needs --delta')
      record.update(delta=args.delta,
                    eps_classical=rdp_compose_convert_classical(curve, args.delta),
                    eps_optconv=tradeoff_to_dp(rdp_tradeoff_fn(curve), delta=args.delta))
    elif args.target == 'tradeoff':
      record.update(x=xs, f=[float(v) for v in rdp_tradeoff_fn(curve)(np.asarray(xs))])
    else:
      raise ScheduleError('rdp converts to dp or tradeoff')
  elif args.source == 'profile':
    pair = mech.pair()
    if k * mech.count != 1:
      raise ScheduleError('profile input describes a single mechanism (k = 1)')
    profile = PrivacyProfile(pair.hockey_stick)
    if args.target == 'dp':
      if args.eps is not None:
        record.update(eps=args.eps, delta=float(profile.at_eps(args.eps)))
      else:
        from afa.accountant import eps_from_delta_curve
        record.update(delta=args.delta, eps=eps_from_delta_curve(
            lambda e: float(profile.at_eps(e)), args.delta))
    elif args.target == 'tradeoff':
      record.update(x=xs, f=[float(tradeoff_from_profile(profile, x)) for x in xs])
    else:
      f = TradeoffFn(lambda x: tradeoff_from_profile(profile, x))
      phi = phi_from_tradeoff(f, np.asarray(ts))
      record.update(t=ts, phi_re=[float(v.real) for v in phi], phi_im=[float(v.imag) for v in phi])
  else:
    f = _tradeoff_of(mech, k)
    if args.target == 'dp':
      if args.eps is not None:
        record.update(eps=args.eps, delta=tradeoff_to_dp(f, eps=args.eps))
      else:
        record.update(delta=args.delta, eps=tradeoff_to_dp(f, delta=args.delta))
    elif args.target == 'phi':
      phi = phi_from_tradeoff(f, np.asarray(ts))
      record.update(t=ts, phi_re=[float(v.real) for v in phi], phi_im=[float(v.imag) for v in phi])
    else:
      record.update(x=xs, f=[float(v) for v in f(np.asarray(xs))])
  print(dumps(record))
  return EXIT_OK


class _Parser(argparse.ArgumentParser):
  """Usage errors are input errors, so they exit 1 rather than argparse's 2."""

  def error(self, message):
    self.print_usage(sys.stderr)
    self.exit(EXIT_INPUT, f'{self.prog}: error: {message}\n')


def build_parser() -> argparse.ArgumentParser:
  parser = _Parser(prog='afa', description='Fourier privacy accountant')
  sub = parser.add_subparsers(dest='command', required=True)

  query = sub.add_parser('query', help='delta(eps) or eps(delta) of a schedule')
  query.add_argument('--schedule', required=True)
  level = query.add_mutually_exclusive_group()
  level.add_argument('--eps', type=float)
  level.add_argument('--delta', type=float)
  query.add_argument('--sandwich', action='store_true', help='certified grid bounds')
  query.add_argument('--abs-tol', type=float, dest='abs_tol')
  query.add_argument('--grid-S', type=float, dest='grid_S')
  query.add_argument('--grid-N', type=float, dest='grid_N')
  query.set_defaults(handler=cmd_query)

  sweep = sub.add_parser('sweep', help='eps (or delta) against composition count')
  sweep.add_argument('--schedule', required=True)
  sweep.add_argument('--k', required=True, help='comma-separated increasing counts')
  sweep.add_argument('--out', required=True)
  level = sweep.add_mutually_exclusive_group()
  level.add_argument('--eps', type=float)
  level.add_argument('--delta', type=float)
  sweep.add_argument('--methods', help=f'comma-separated subset of {",".join(METHODS)}')
  sweep.add_argument('--sandwich', action='store_true')
  sweep.add_argument('--abs-tol', type=float, dest='abs_tol')
  sweep.add_argument('--grid-S', type=float, dest='grid_S')
  sweep.add_argument('--grid-N', type=float, dest='grid_N')
  sweep.set_defaults(handler=cmd_sweep)

  convert = sub.add_parser('convert', help='move between privacy representations')
  convert.add_argument('--from', dest='source', required=True,
                       choices=('rdp', 'profile', 'tradeoff'))
  convert.add_argument('--to', dest='target', required=True, choices=('dp', 'tradeoff', 'phi'))
  convert.add_argument('--mechanism', required=True, help='JSON mechanism entry')
  convert.add_argument('--k', type=int, default=1)
  level = convert.add_mutually_exclusive_group()
  level.add_argument('--eps', type=float)
  level.add_argument('--delta', type=float)
  convert.add_argument('--x', help='comma-separated type I errors')
  convert.add_argument('--t', help='comma-separated characteristic-function arguments')
  convert.set_defaults(handler=cmd_convert)
  return parser


def main(argv=None) -> int:
  parser = build_parser()
  args = parser.parse_args(argv)
  try:
    if args.command == 'convert':
      if args.target == 'dp' and args.eps is None and args.delta is None:
        raise ScheduleError('convert --to dp needs --eps or --delta')
      if args.target == 'tradeoff' and not args.x:
        raise ScheduleError('convert --to tradeoff needs --x')
      if args.target == 'phi' and not args.t:
        raise ScheduleError('convert --to phi needs --t')
    return args.handler(args)
  except (QuadratureError, AtomBudgetError, FloatingPointError) as exc:
    print(f'afa: numerical budget exceeded: {exc}', file=sys.stderr)
    return EXIT_NUMERIC
  except (ScheduleError, NoFiniteEpsilon, ValueError, KeyError, OSError) as exc:
    print(f'afa: {exc}', file=sys.stderr)
    return EXIT_INPUT


if __name__ == '__main__':
  sys.exit(main())
