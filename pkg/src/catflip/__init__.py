"""Bit-flip analysis toolkit for dissipatively stabilized cat qubits."""

from . import fock, harness, liouville, models, semiclassical, ssqt, trajectories, units
from .fock import (
    DensityMatrix,
    HilbertSpace,
    Ket,
    Operator,
    annihilation,
    coherent_state,
    even_cat,
    fock_cutoff,
    fock_state,
    number,
    odd_cat,
    parity,
    partial_trace,
    tensor,
    wigner,
)
from .liouville import (
    SpectralDecomposition,
    SuperOperator,
    bitflip_rate,
    build_liouvillian,
    reflection_symmetry_check,
    restricted_basis,
    spectrum,
    steady_state,
)
from .models import (
    ModelSpec,
    SingleModeParams,
    TwoModeParams,
    adiabatic_map,
    build_effective_operator_model,
    build_single_mode,
    build_two_mode,
    theta_split,
)

__version__ = "0.1.0"
