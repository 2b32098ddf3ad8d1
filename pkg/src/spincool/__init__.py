"""Level structure, coherence transfer and sideband cooling for nuclear-spin qubits in Yb and Sr."""

__version__ = "0.1.0"

from .cooling import (CoolingParams, CoolingTrajectory, TrapParams, lamb_dicke, monte_carlo_cooling,
                      simulate_cooling, steady_state_n)
from .decay import QubitEncoding, evolve, jump_operators, master_equation_transfer, transfer_fidelity
from .errors import SpinCoolError
from .protocol import find_min_field, pair_degeneracy_audit, readout_report, shelving_plan
from .species import SpeciesRegistry, get_species, list_species
from .structure import breit_rabi_energy, build_hamiltonian, diagonalize, eigensystem, zeeman_sweep

__all__ = [
    "CoolingParams", "CoolingTrajectory", "QubitEncoding", "SpeciesRegistry", "SpinCoolError", "TrapParams",
    "breit_rabi_energy", "build_hamiltonian", "diagonalize", "eigensystem", "evolve", "find_min_field",
    "get_species", "jump_operators", "lamb_dicke", "list_species", "master_equation_transfer",
    "monte_carlo_cooling", "pair_degeneracy_audit", "readout_report", "shelving_plan", "simulate_cooling",
    "steady_state_n", "transfer_fidelity", "zeeman_sweep",
]
