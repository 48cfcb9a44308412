"""Simulation toolkit for RF cancellation of quadrupole shifts in trapped-ion clocks."""
from .spin_algebra import SpinSystem, expm_i_hermitian, hermitian_eigendecompose, make_spin_system
from .hamiltonians import DriveParams, interaction_hamiltonian, vh_decomposition
from .sequences import PulseSequence, Segment, ground_echo_times, quad_cancel_sequence, ramsey_sequence
from .propagation import propagate, residual_frequency, residual_phase_scan, u_actual, u_approx
from .shift_models import ChainModel, chain_equilibrium, phase_ledger
from .spectroscopy import fit_fringe, pair_frequencies, simulate_fringe

__version__ = "0.1.0"
