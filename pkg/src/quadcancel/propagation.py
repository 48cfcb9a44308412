"""Exact piecewise propagation and residual-error analysis of the decoupling drive.

Sign conventions follow :mod:`quadcancel.spin_algebra`: every propagator is
``exp(+i t H)``. :func:`residual_frequency` reports the residual shift as a
physical frequency, i.e. in the ``exp(-i H t)`` convention, which flips its
sign relative to the raw phase slope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hamiltonians import (
    drive_axis,
    free_hamiltonian,
    interaction_hamiltonian,
    secular_drive_generator,
    vh_decomposition,
    DriveParams,
)
from .sequences import Kind, PulseSequence, Segment
from .spin_algebra import SpinSystem, expm_i_hermitian, hermitian_eigendecompose

DRIVE_MODELS = ("exact", "secular")


class UnwrapError(RuntimeError):
    """Phase steps on the T grid stay ambiguous after refinement."""


@dataclass(frozen=True)
class PropagationResult:
    unitary: np.ndarray
    per_m_amplitude: np.ndarray
    per_m_phase: np.ndarray

    @classmethod
    def from_unitary(cls, U: np.ndarray) -> "PropagationResult":
        amp = np.diag(U).copy()
        return cls(U, amp, np.angle(amp))


def segment_unitary(
    sys: SpinSystem,
    seg: Segment,
    delta: float = 0.0,
    q_j: float = 0.0,
    drive_model: str = "exact",
) -> np.ndarray:
    """Propagator of one segment.

    Ideal pulses are bare rotations. Under ``drive_model="secular"`` a finite
    RF segment whose rotation area is below 2 pi is treated as a short pulse
    (bare rotation over its duration), while longer drives use the averaged
    generator in which only the drive-commuting part of the quadrupole term
    survives.
    """
    if drive_model not in DRIVE_MODELS:
        raise ValueError(f"drive_model must be one of {DRIVE_MODELS}")
    if seg.ideal:
        return expm_i_hermitian(drive_axis(sys, seg.phi), seg.area)
    if seg.kind is Kind.FREE:
        return expm_i_hermitian(free_hamiltonian(sys, delta, q_j), seg.duration)
    if drive_model == "exact":
        H = interaction_hamiltonian(sys, DriveParams(delta, q_j, seg.omega, seg.phi))
        return expm_i_hermitian(H, seg.duration)
    if seg.area < 2 * math.pi:
        return expm_i_hermitian(drive_axis(sys, seg.phi), seg.area)
    return expm_i_hermitian(secular_drive_generator(sys, q_j, seg.omega, seg.phi), seg.duration)


def propagate(
    sys: SpinSystem,
    seq: PulseSequence,
    delta: float = 0.0,
    q_j: float = 0.0,
    drive_model: str = "exact",
) -> PropagationResult:
    """Product of segment exponentials, the earliest segment acting first.

    ``delta`` and ``q_j`` are the (constant) detuning and quadrupole coupling
    of the manifold all segments act on.
    """
    manifolds = {s.manifold for s in seq}
    if len(manifolds) > 1:
        raise ValueError("all segments must act on the same manifold")
    U = sys.identity
    for seg in seq:
        Us = segment_unitary(sys, seg, delta, q_j, drive_model)
        if Us.shape != U.shape:
            raise ValueError("segment dimension does not match the spin system")
        U = Us @ U
    return PropagationResult.from_unitary(U)


def free_evolution(sys: SpinSystem, tau: float, delta: float, q_j: float) -> np.ndarray:
    """exp(i tau (delta Jz + Q_J (J^2 - 3 Jz^2)))."""
    return expm_i_hermitian(free_hamiltonian(sys, delta, q_j), tau)


def u_actual(sys: SpinSystem, T: float, delta: float, q_j: float, omega0: float) -> np.ndarray:
    """The x(pi/2), +y, -y, -x(pi/2) block with the full Hamiltonian during the drive."""
    if T < 0:
        raise ValueError("T must be >= 0")
    H0 = free_hamiltonian(sys, delta, q_j)
    return (
        expm_i_hermitian(sys.jx, -math.pi / 2)
        @ expm_i_hermitian(H0 - omega0 * sys.jy, T / 3)
        @ expm_i_hermitian(H0 + omega0 * sys.jy, T / 3)
        @ expm_i_hermitian(sys.jx, math.pi / 2)
    )


def u_approx(sys: SpinSystem, T: float, q_j: float) -> np.ndarray:
    """exp(i (2T/3) Q_J (J^2 - (3/2)(Jx^2 + Jy^2))).

    This is the same block with the drive-averaged generator. The operator in
    the exponent is diagonal in the m basis, so the result is too.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    gen = q_j * (sys.jsq - 1.5 * (sys.jx @ sys.jx + sys.jy @ sys.jy))
    return expm_i_hermitian(gen, 2 * T / 3)


class _RotatedDD:
    """Diagonal amplitudes of U_act(T) and U_app(T) for many T at once.

    In the frame after the first pi/2 rotation the block reads
    ``exp(i tau (V + H - Jz)) exp(i tau (V + H + Jz))`` with
    ``tau = omega0 T / 3``, so two eigendecompositions cover every T.
    """

    def __init__(self, sys: SpinSystem, m: float, omega0: float, p_delta: float, p_q: float):
        V, H = vh_decomposition(sys, p_delta, p_q)
        self.k = sys.index_of(m)
        self.omega0 = omega0
        self.h_m = float(np.real(H[self.k, self.k]))
        self.w_plus, self.U_plus = hermitian_eigendecompose(V + H + sys.jz)
        self.w_minus, self.U_minus = hermitian_eigendecompose(V + H - sys.jz)

    def amplitudes(self, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (<m|U_act|m>, <m|U_act U_app^H|m>) on the grid ``T``."""
        k = self.k
        tau = self.omega0 * np.asarray(T, dtype=float)[:, None] / 3
        # row k of W_minus and column k of W_plus, one row per T
        row = (self.U_minus[k, :] * np.exp(1j * tau * self.w_minus)) @ self.U_minus.conj().T
        col = (np.exp(1j * tau * self.w_plus) * self.U_plus[k, :].conj()) @ self.U_plus.T
        act = np.sum(row * col, axis=1)
        rel = act * np.exp(-2j * tau[:, 0] * self.h_m)
        return act, rel


@dataclass(frozen=True)
class ResidualScan:
    """Residual phase and leakage of the continuous drive on a T grid."""

    j: float
    m: float
    omega0: float
    p_delta: float
    p_q: float
    t_grid: np.ndarray
    phase_diff: np.ndarray
    population_loss: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def residual_frequency(self) -> float:
        return residual_frequency(self)


def _unwrap_checked(phases: np.ndarray, limit: float) -> np.ndarray | None:
    steps = np.angle(np.exp(1j * np.diff(phases)))
    if steps.size and np.max(np.abs(steps)) > limit:
        return None
    return phases[0] + np.concatenate(([0.0], np.cumsum(steps)))


def residual_phase_scan(
    sys: SpinSystem,
    m: float,
    omega0: float,
    p_delta: float,
    p_q: float,
    t_grid,
    max_refinements: int = 3,
    step_limit: float = math.pi / 2,
) -> ResidualScan:
    """Phase of <m|U_act U_app^H|m> and leakage 1 - |<m|U_act|m>|^2 along ``t_grid``.

    The phase is unwrapped along the grid. A step larger than ``step_limit``
    is treated as ambiguous: the grid is halved (up to ``max_refinements``
    times) and the phase is unwrapped on the finer grid and subsampled.
    """
    T = np.asarray(t_grid, dtype=float)
    if T.ndim != 1 or T.size < 2 or np.any(np.diff(T) <= 0):
        raise ValueError("t_grid must be strictly increasing with at least two points")
    if omega0 <= 0:
        raise ValueError("omega0 must be > 0")
    dd = _RotatedDD(sys, m, omega0, p_delta, p_q)
    act, rel = dd.amplitudes(T)
    loss = 1 - np.abs(act) ** 2

    fine, stride = T, 1
    rel_fine = rel
    for _ in range(max_refinements + 1):
        unwrapped = _unwrap_checked(np.angle(rel_fine), step_limit)
        if unwrapped is not None:
            break
        mids = 0.5 * (fine[:-1] + fine[1:])
        fine = np.insert(fine, np.arange(1, fine.size), mids)
        stride *= 2
        rel_fine = dd.amplitudes(fine)[1]
    else:
        raise UnwrapError(
            f"phase steps exceed {step_limit:.3g} rad even after {max_refinements} refinements; use a finer T grid"
        )
    phase = unwrapped[::stride]
    return ResidualScan(sys.j, m, omega0, p_delta, p_q, T, phase, loss)


def residual_frequency(scan: ResidualScan, reference: str = "drive") -> float:
    """Residual angular frequency (rad/s) from a least-squares line through the phase.

    The phase only accrues while the drive is on, i.e. during ``2T/3`` of
    each interrogation. With ``reference="drive"`` the slope is quoted per
    unit of drive time; ``reference="interrogation"`` quotes it per unit of
    ``T``. The sign is that of a physical frequency shift.
    """
    T, ph = scan.t_grid, scan.phase_diff
    if T.size < 10:
        raise ValueError("need at least 10 grid points for the linear fit")
    if np.ptp(T) == 0:
        raise ValueError("degenerate T grid")
    slope = np.polyfit(T, ph, 1)[0]
    if reference == "drive":
        slope /= 2 / 3
    elif reference != "interrogation":
        raise ValueError(f"unknown reference {reference!r}")
    return -slope


def analytic_bound(p: float, omega0: float, T) -> np.ndarray:
    """Closed-form residual-phase estimate for j=5/2, m=5/2, magnitude only.

    ``p^3 (2/5)^3 27 (sin(x) + x)`` with ``x = (5/3) omega0 T``.
    """
    x = 2 * (omega0 * np.asarray(T, dtype=float) / 3) * 2.5
    return np.abs(p**3 * 0.4**3 * 27 * (np.sin(x) + x))


def max_population_loss(sys: SpinSystem, m: float, omega0: float, p_delta: float, p_q: float, t_grid) -> float:
    dd = _RotatedDD(sys, m, omega0, p_delta, p_q)
    act, _ = dd.amplitudes(np.asarray(t_grid, dtype=float))
    return float(np.max(1 - np.abs(act) ** 2))


def three_ion_residual_table(
    cases: dict,
    omega0: float,
    m_values=(2.5, 1.5, 0.5),
    t_grid=None,
    j: float = 2.5,
    reference: str = "drive",
) -> dict:
    """Residual frequency (rad/s) per case, per m, per ion.

    ``cases`` maps a label to ``(q_j_per_ion, delta_per_ion)`` in rad/s.
    Returns ``{label: {m: [f_r ion 1, ion 2, ...]}}``.
    """
    from .spin_algebra import make_spin_system

    sys = make_spin_system(j)
    grid = np.linspace(0.0, 2.0, 401) if t_grid is None else np.asarray(t_grid, dtype=float)
    out = {}
    for label, (qs, ds) in cases.items():
        if len(qs) != len(ds):
            raise ValueError(f"case {label!r}: mismatched per-ion lists")
        out[label] = {
            m: [
                residual_frequency(residual_phase_scan(sys, m, omega0, d / omega0, q / omega0, grid), reference)
                for q, d in zip(qs, ds)
            ]
            for m in m_values
        }
    return out
