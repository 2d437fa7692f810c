"""Reversible capacity investment with quadratic cost under a one-dimensional demand diffusion."""
from .boundary import BoundarySystem, BoundaryTable, tabulate
from .cost import QuadraticCost, resolvent_coeffs, thresholds, vhat
from .diffusion import DiffusionModel, DomainError, fundamental_pair, green, resolvent
from .simulate import PolicySpec, SimResult, game_value, mc_value, simulate_policy
from .value import ValueFunction, build_value_function, value_at, vi_residual

__all__ = [
    "BoundarySystem", "BoundaryTable", "DiffusionModel", "DomainError", "PolicySpec", "QuadraticCost",
    "SimResult", "ValueFunction", "build_value_function", "fundamental_pair", "game_value", "green",
    "mc_value", "resolvent", "resolvent_coeffs", "simulate_policy", "tabulate", "thresholds", "value_at",
    "vhat", "vi_residual",
]
