"""Analytical Fourier accounting for differential privacy.

Privacy losses are tracked through their characteristic functions; delta(eps)
comes from Levy inversion by adaptive Gauss-Legendre quadrature.
"""

from afa.accountant import Accountant, delta_of_eps, eps_of_delta, gaussian_delta_oracle
from afa.discretize import DensityPair, GridPLD, build_grid, delta_sandwich, tail_bound
from afa.divergence import (DiscretePair, LossCDFPair, PrivacyProfile, TradeoffFn,
                            hockey_stick, hs_swap)
from afa.dominating import (DominatingPair, SamplingScheme, amplify, compose_pairs,
                            dominate_full_range, hs_closure, pair_from_profile)
from afa.phi import LogPhiLedger, PhiTerm
from afa.quadrature import QuadConfig, QuadratureError, integrate, levy_cdf
from afa.rdp import RdpCurve, rdp_compose_convert_classical, rdp_tradeoff_fn, tradeoff_to_dp

__all__ = [
    'Accountant', 'DensityPair', 'DiscretePair', 'DominatingPair', 'GridPLD',
    'LogPhiLedger', 'LossCDFPair', 'PhiTerm', 'PrivacyProfile', 'QuadConfig',
    'QuadratureError', 'RdpCurve', 'SamplingScheme', 'TradeoffFn', 'amplify',
    'build_grid', 'compose_pairs', 'delta_of_eps', 'delta_sandwich',
    'dominate_full_range', 'eps_of_delta', 'gaussian_delta_oracle', 'hockey_stick',
    'hs_closure', 'hs_swap', 'integrate', 'levy_cdf', 'pair_from_profile',
    'rdp_compose_convert_classical', 'rdp_tradeoff_fn', 'tail_bound', 'tradeoff_to_dp',
]
