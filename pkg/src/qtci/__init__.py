"""Certified numerics for quantum W1 distances, transportation-cost
inequalities and concentration of Gibbs states on small qudit registers."""
from .linalg import DensityState, HermitianOp, RegisterShape
from .states import GibbsState, HypergraphHamiltonian, gibbs, ising_chain
from .w1 import W1Certificate, lip_const, w1_distance, w1_primal

__version__ = "0.1.0"

__all__ = [
    "DensityState", "HermitianOp", "RegisterShape", "GibbsState", "HypergraphHamiltonian",
    "gibbs", "ising_chain", "W1Certificate", "lip_const", "w1_distance", "w1_primal",
]
