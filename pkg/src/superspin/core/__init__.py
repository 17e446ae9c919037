"""Partitions, couplings, operators and the superspin generator."""

from .coupling import (
    CouplingModel,
    build_gamma_waveguide,
    build_hcoh_waveguide,
    eigen_channels,
    ring_gamma_matrix,
    ring_greens,
    ring_reflectivity,
    ring_validity,
    with_hamiltonian,
)
from .layout import BlockLayout
from .lindbladian import SuperspinLindbladian, build_lindbladian
from .operators import CollectiveOps, build_collective_ops, ladder_lowering
from .partition import Spacing, SuperspinPartition, build_partition
from .state import SuperspinState, layout_for

__all__ = [
    "BlockLayout",
    "CollectiveOps",
    "CouplingModel",
    "Spacing",
    "SuperspinLindbladian",
    "SuperspinPartition",
    "SuperspinState",
    "build_collective_ops",
    "build_gamma_waveguide",
    "build_hcoh_waveguide",
    "build_lindbladian",
    "build_partition",
    "eigen_channels",
    "ladder_lowering",
    "layout_for",
    "ring_gamma_matrix",
    "ring_greens",
    "ring_reflectivity",
    "ring_validity",
    "with_hamiltonian",
]
