"""Reference instances shared by the experiment scripts."""
import math

from revcap.boundary import BoundarySystem
from revcap.cost import QuadraticCost, resolvent_coeffs
from revcap.diffusion import DiffusionModel, fundamental_pair


def reference(q_minus):
    """GBM with mu=0, sigma^2=2, rho=6, alpha0=d^2, beta0=d and q_plus=1."""
    model = DiffusionModel.gbm(0.0, math.sqrt(2.0), 6.0)
    cost = QuadraticCost.from_presets("square", "identity", 1.0, q_minus)
    pair = fundamental_pair(model)
    return model, cost, BoundarySystem(pair, cost, resolvent_coeffs(model, pair, cost))
