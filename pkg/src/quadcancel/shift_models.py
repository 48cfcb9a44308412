"""Analytic phase bookkeeping and per-ion shift profiles along a linear chain.

The clock superposition phase is tracked as ground-minus-excited: the ground
Zeeman term enters with ``+chi_g m_g B`` and the excited one with
``-chi_e m_e B``. The continuous drive occupies the first two thirds of the
interrogation; during that window the excited-state Zeeman phase is averaged
away while the ground state keeps its Zeeman phase and picks up an ac-Stark
phase of ``sign(m_g) * Omega_g^2 / (2 delta)`` per unit time, with
``delta = (chi_e - chi_g) B``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import constants as sc
from scipy.optimize import minimize

GROUND = "ground_S"
EXCITED = "excited_J"

ELEMENTARY_CHARGE = sc.e
EPSILON_0 = sc.epsilon_0
ATOMIC_MASS = sc.atomic_mass
COULOMB_K = 1 / (4 * math.pi * EPSILON_0)
SR88_MASS = 87.9056125 * ATOMIC_MASS

# 88Sr+ magnetic responses, rad/s per gauss
SR88_CHI_G = 2 * math.pi * 2.802e6
SR88_CHI_E = 2 * math.pi * 1.68e6


@dataclass(frozen=True)
class ManifoldResponse:
    chi_g: float
    chi_e: float
    m_g: float
    m_e: float

    def __post_init__(self):
        if not (math.isfinite(self.chi_g) and math.isfinite(self.chi_e)):
            raise ValueError("magnetic responses must be finite")
        if abs(self.m_g) > 0.5 + 1e-12:
            raise ValueError("ground manifold is spin 1/2: |m_g| <= 1/2")


def _manifold_name(m) -> str:
    return str(getattr(m, "value", m))


def phase_ledger(
    resp: ManifoldResponse,
    B: float,
    omega_g: float,
    T: float,
    echoes=(),
) -> float:
    """Superposition phase (rad) accumulated over ``T``, excluding laser terms.

    ``echoes`` is a sequence of ``(time, manifold)``; a ground echo flips the
    sign of all later ground Zeeman and ac-Stark accumulation, an excited echo
    flips later excited Zeeman accumulation. Echoes at the same instant
    compose, so two of them cancel.

    The sum is carried out exactly on the floating-point inputs and rounded
    once, so a phase that should vanish is limited only by how precisely the
    echo times themselves are represented.
    """
    return float(exact_phase_ledger(resp, B, omega_g, T, echoes))


def exact_phase_ledger(resp: ManifoldResponse, B: float, omega_g: float, T: float, echoes=()) -> Fraction:
    """:func:`phase_ledger` as an exact rational in the float inputs."""
    if not T > 0:
        raise ValueError("T must be > 0")
    echoes = [(Fraction(t), _manifold_name(m)) for t, m in echoes]
    times = [t for t, _ in echoes]
    if times != sorted(times):
        raise ValueError("echo times must be sorted")
    T = Fraction(T)
    for t, m in echoes:
        if not 0 < t <= T * (1 + Fraction(1, 10**12)):
            raise ValueError(f"echo time {float(t)} outside (0, T]")
        if m not in (GROUND, EXCITED):
            raise ValueError(f"unknown manifold {m!r}")

    chi_g, chi_e, m_g, m_e, B = (Fraction(v) for v in (resp.chi_g, resp.chi_e, resp.m_g, resp.m_e, B))
    stark_rate = Fraction(0)
    if omega_g:
        detuning = (chi_e - chi_g) * B
        if detuning == 0:
            raise ZeroDivisionError("ac-Stark term needs (chi_e - chi_g) B != 0")
        stark_rate = (1 if m_g > 0 else -1) * Fraction(omega_g) ** 2 / (2 * detuning)
    ground_rate = chi_g * m_g * B
    excited_rate = chi_e * m_e * B
    t_drive = 2 * T / 3

    cuts = sorted({Fraction(0), t_drive, T, *(t for t in times if t < T)})
    phase = Fraction(0)
    sg = se = 1
    k = 0
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        while k < len(echoes) and echoes[k][0] <= t0:
            if echoes[k][1] == GROUND:
                sg = -sg
            else:
                se = -se
            k += 1
        dt = t1 - t0
        phase += sg * ground_rate * dt
        if t1 <= t_drive:
            phase += sg * stark_rate * dt
        else:
            phase -= se * excited_rate * dt
    return phase


def ac_stark_estimate(omega_s: float, delta_s: float) -> float:
    """Level shift Omega_S^2 / delta_S of an off-resonantly driven manifold (rad/s)."""
    if delta_s == 0:
        raise ZeroDivisionError("detuning must be non-zero")
    return omega_s**2 / delta_s


def length_scale(omega_axial: float, mass: float, charge: float = ELEMENTARY_CHARGE) -> float:
    """(q^2 / (4 pi eps0 m w^2))^(1/3), the natural ion spacing unit in metres."""
    return (COULOMB_K * charge**2 / (mass * omega_axial**2)) ** (1 / 3)


def _scaled_forces(u: np.ndarray) -> np.ndarray:
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    return -u + np.sum(np.sign(d) / d**2, axis=1)


def _scaled_jacobian(u: np.ndarray) -> np.ndarray:
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    off = 2 / d**3
    J = off.copy()
    np.fill_diagonal(J, -1 - off.sum(axis=1))
    return J


def _scaled_energy(u: np.ndarray) -> float:
    d = np.abs(u[:, None] - u[None, :])
    iu = np.triu_indices(len(u), 1)
    return 0.5 * float(u @ u) + float(np.sum(1 / d[iu]))


def _descend(u: np.ndarray) -> np.ndarray:
    res = minimize(_scaled_energy, u, jac=lambda x: -_scaled_forces(x), method="BFGS", options={"gtol": 1e-10})
    return np.sort(res.x)


def scaled_equilibrium(n: int, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Equilibrium of ``sum u^2/2 + sum_{i<j} 1/|u_i - u_j|`` by damped Newton steps."""
    if n < 1:
        raise ValueError("need at least one ion")
    if n == 1:
        return np.zeros(1)
    # uniform spacing guess, roughly matched to the chain length
    u = np.linspace(-1, 1, n) * 1.1 * n**0.56
    for _ in range(max_iter):
        F = _scaled_forces(u)
        if np.max(np.abs(F)) < tol:
            break
        step = np.linalg.solve(_scaled_jacobian(u), -F)
        e0 = _scaled_energy(u)
        lam = 1.0
        while lam > 1e-8:
            trial = u + lam * step
            if np.all(np.diff(trial) > 0) and _scaled_energy(trial) <= e0 + 1e-15 * abs(e0):
                break
            lam /= 2
        else:
            # stagnated: let a gradient-based descent get closer, then resume Newton
            trial = _descend(u)
            if _scaled_energy(trial) >= e0:
                raise RuntimeError("chain equilibrium Newton iteration stagnated")
        u = trial
    else:
        raise RuntimeError("chain equilibrium did not converge")
    # reflection symmetry is exact at equilibrium; clean residual asymmetry
    return 0.5 * (u - u[::-1])


def chain_equilibrium(n: int, omega_axial: float, mass: float = SR88_MASS, charge: float = ELEMENTARY_CHARGE) -> np.ndarray:
    """Axial equilibrium positions in metres, ascending and centred on zero."""
    return scaled_equilibrium(n) * length_scale(omega_axial, mass, charge)


def quadrupole_profile(
    positions,
    trap_gradient: float = 0.0,
    coupling: float = 1.0,
    charge: float = ELEMENTARY_CHARGE,
) -> np.ndarray:
    """Per-ion axial field gradient (trap + neighbouring ions) times ``coupling``.

    The neighbour term is ``sum_{j != i} 2 k_e q / |z_i - z_j|^3``.
    """
    z = np.asarray(positions, dtype=float)
    d = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(d, np.inf)
    if np.any(d == 0):
        raise ValueError("coincident ions")
    grad = trap_gradient + np.sum(2 * COULOMB_K * charge / d**3, axis=1)
    return coupling * grad


@dataclass(frozen=True)
class ChainModel:
    """Axial positions (m) with per-ion quadrupole coupling and clock Zeeman shift (rad/s)."""

    positions: np.ndarray
    q_profile: np.ndarray
    zeeman_profile: np.ndarray
    zeeman_gradient: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        q = np.asarray(self.q_profile, dtype=float)
        zm = np.asarray(self.zeeman_profile, dtype=float)
        if not (pos.shape == q.shape == zm.shape) or pos.ndim != 1:
            raise ValueError("profiles must be 1-D and the same length as positions")
        if np.any(np.diff(pos) <= 0):
            raise ValueError("positions must be strictly ascending")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "q_profile", q)
        object.__setattr__(self, "zeeman_profile", zm)

    @property
    def n_ions(self) -> int:
        return len(self.positions)

    def is_symmetric(self, rtol: float = 1e-9) -> bool:
        pos = self.positions - self.positions.mean()
        scale = max(np.max(np.abs(pos)), 1e-300)
        qs = max(np.max(np.abs(self.q_profile)), 1e-300)
        return bool(
            np.max(np.abs(pos + pos[::-1])) <= rtol * scale
            and np.max(np.abs(self.q_profile - self.q_profile[::-1])) <= rtol * qs
        )


def linear_chain(
    positions,
    q_profile,
    zeeman_gradient: float = 0.0,
    zeeman_offset: float = 0.0,
) -> ChainModel:
    """Chain whose clock Zeeman shift is linear in position about the chain centre.

    ``zeeman_gradient`` is in rad/s per metre of the clock transition.
    """
    pos = np.asarray(positions, dtype=float)
    zeeman = zeeman_offset + zeeman_gradient * (pos - pos.mean())
    return ChainModel(pos, np.asarray(q_profile, dtype=float), zeeman, zeeman_gradient)
