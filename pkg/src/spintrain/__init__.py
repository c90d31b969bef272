"""Radical-pair spin dynamics with tensor trains.

Solvers: stochastic matrix-product states, vectorised matrix-product density
operators, locally purified MPS (all propagated by one-site projector-splitting
TDVP with Krylov local integrators), plus dense exact, symmetry-reduced and
semiclassical references.  A CLI drives timeline runs and magnetic-field
anisotropy scans producing spin-selective reaction yields.
"""

from .constants import GAMMA_E, GAMMA_1H, GAMMA_14N, MT_TO_RAD_PER_NS
from .spin_model import (
    ElectronicCouplings,
    FieldSpec,
    Nucleus,
    SpinSystem,
    TwoPairCouplings,
    build_dense_hamiltonian,
    dimensions,
    point_dipole_tensor,
    projection_operators,
    singlet_triplet_rotation,
)

__version__ = "0.1.0"
