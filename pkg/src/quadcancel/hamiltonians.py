"""Rotating-frame Hamiltonians for an RF-driven spin-j manifold.

Everything is H/hbar in rad/s; hbar = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spin_algebra import SpinSystem


@dataclass(frozen=True)
class DriveParams:
    """Detuning, quadrupole coupling and RF drive, all in rad/s (phase in rad)."""

    delta: float = 0.0
    q_j: float = 0.0
    omega: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        for name in ("delta", "q_j", "omega", "phi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.omega < 0:
            raise ValueError("Rabi frequency omega must be >= 0")


def quadrupole_operator(sys: SpinSystem) -> np.ndarray:
    """J^2 - 3 Jz^2."""
    return sys.jsq - 3 * sys.jz @ sys.jz


def drive_axis(sys: SpinSystem, phi: float) -> np.ndarray:
    """In-plane spin component cos(phi) Jx + sin(phi) Jy."""
    return math.cos(phi) * sys.jx + math.sin(phi) * sys.jy


def free_hamiltonian(sys: SpinSystem, delta: float, q_j: float) -> np.ndarray:
    return delta * sys.jz + q_j * quadrupole_operator(sys)


def interaction_hamiltonian(sys: SpinSystem, p: DriveParams) -> np.ndarray:
    """delta Jz + Q_J (J^2 - 3 Jz^2) + Omega (cos(phi) Jx + sin(phi) Jy)."""
    H = free_hamiltonian(sys, p.delta, p.q_j)
    if p.omega:
        H = H + p.omega * drive_axis(sys, p.phi)
    return H


def secular_drive_generator(sys: SpinSystem, q_j: float, omega: float, phi: float) -> np.ndarray:
    """Generator of a long continuous drive once the non-commuting part is averaged out.

    Only the piece of the quadrupole term that commutes with the drive axis
    survives, ``Q_J (J^2 - 3/2 (Jz^2 + Jperp^2))`` with ``Jperp`` the in-plane
    axis orthogonal to the drive. The detuning term does not commute with the
    drive and is dropped entirely.
    """
    jperp = -math.sin(phi) * sys.jx + math.cos(phi) * sys.jy
    kept = sys.jsq - 1.5 * (sys.jz @ sys.jz + jperp @ jperp)
    return q_j * kept + omega * drive_axis(sys, phi)


def vh_decomposition(sys: SpinSystem, p_delta: float, p_q: float) -> tuple[np.ndarray, np.ndarray]:
    """Split the rotated-frame perturbation into off-diagonal V and diagonal H.

    With ``p_delta = delta/Omega0`` and ``p_q = Q_J/Omega0``::

        V = -p_delta Jy - (3 p_q / 2)(Jy^2 - Jx^2)
        H =  p_q (J^2 - (3/2)(Jy^2 + Jx^2))

    so that ``V + H = -p_delta Jy + p_q (J^2 - 3 Jy^2)``.
    """
    jx2 = sys.jx @ sys.jx
    jy2 = sys.jy @ sys.jy
    V = -p_delta * sys.jy - 1.5 * p_q * (jy2 - jx2)
    H = p_q * (sys.jsq - 1.5 * (jy2 + jx2))
    return V, H
