"""Entropy production of linear and Langevin diffusions and of their numerical schemes."""

__version__ = "0.1.0"

from ._core import BACKEND, available_backends
from .estimate import BinGrid, EmpiricalChain, EpEstimate, bin_transitions, ep_binned, ep_binned_generalized, ep_curve
from .exact import ep_closed_form, ep_eps, ep_gaussian_chain, kernel, simulate_exact
from .gaussian import GaussianDist, kl_gaussian
from .integrate import em_kernel_supports, simulate_bbk, simulate_em
from .linalg import NoStationaryStateError, RankCutoff, lyapunov_solve, pseudo_det, pseudo_inverse
from .model import (
    LinearDiffusion,
    NonlinearSDE,
    UnderdampedLangevin,
    helmholtz_pointwise,
    langevin_as_linear,
    linear_from_drift,
    linear_from_parts,
    momentum_flip,
    potential,
    range_condition,
    time_reverse,
)
from .paths import ExplosionError, SamplePaths

__all__ = [
    "BACKEND", "available_backends",
    "BinGrid", "EmpiricalChain", "EpEstimate", "bin_transitions", "ep_binned", "ep_binned_generalized", "ep_curve",
    "ep_closed_form", "ep_eps", "ep_gaussian_chain", "kernel", "simulate_exact",
    "GaussianDist", "kl_gaussian",
    "em_kernel_supports", "simulate_bbk", "simulate_em",
    "NoStationaryStateError", "RankCutoff", "lyapunov_solve", "pseudo_det", "pseudo_inverse",
    "LinearDiffusion", "NonlinearSDE", "UnderdampedLangevin", "helmholtz_pointwise", "langevin_as_linear",
    "linear_from_drift", "linear_from_parts", "momentum_flip", "potential", "range_condition", "time_reverse",
    "ExplosionError", "SamplePaths",
]
