"""Piecewise-constant RF schedules and echo-pulse timing."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path

from .shift_models import ManifoldResponse, exact_phase_ledger


class Manifold(str, Enum):
    EXCITED = "excited_J"
    GROUND = "ground_S"


class Kind(str, Enum):
    FREE = "free"
    RF_PULSE = "rf_pulse"


class UnresolvableEchoError(ValueError):
    """No echo time inside the allowed window nulls the phase."""


@dataclass(frozen=True)
class Segment:
    """One constant-Hamiltonian stretch of the schedule.

    An ``ideal`` segment is an instantaneous rotation of area
    ``omega * duration``; it takes no time on the clock (``elapsed == 0``).
    """

    manifold: Manifold = Manifold.EXCITED
    kind: Kind = Kind.FREE
    duration: float = 0.0
    phi: float = 0.0
    omega: float = 0.0
    ideal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "manifold", Manifold(self.manifold))
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.duration >= 0:
            raise ValueError("segment duration must be >= 0")
        if self.omega < 0:
            raise ValueError("segment omega must be >= 0")
        if self.kind is Kind.FREE and self.omega != 0:
            raise ValueError("free segments carry omega = 0")
        if self.ideal and self.kind is not Kind.RF_PULSE:
            raise ValueError("only rf_pulse segments can be ideal")

    @property
    def elapsed(self) -> float:
        return 0.0 if self.ideal else self.duration

    @property
    def area(self) -> float:
        return self.omega * self.duration


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[Segment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def total_time(self) -> float:
        return math.fsum(s.elapsed for s in self.segments)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    def then(self, other: "PulseSequence") -> "PulseSequence":
        """Concatenate, ``self`` first in time."""
        return PulseSequence(self.segments + other.segments)


def ramsey_sequence(T: float) -> PulseSequence:
    if not T > 0:
        raise ValueError("Ramsey time T must be > 0")
    return PulseSequence((Segment(Manifold.EXCITED, Kind.FREE, T),))


def quad_cancel_sequence(T: float, omega0: float, pulse_mode: str = "ideal") -> PulseSequence:
    """Quadrupole-cancelling decoupling schedule, in time order.

    x(pi/2), +y drive for T/3, -y drive for T/3, -x(pi/2), free for the rest.
    In ``finite`` mode each pi/2 pulse lasts pi/(2 omega0) and the closing
    free stretch is shortened so the whole schedule still spans ``T``.
    """
    if not T > 0:
        raise ValueError("T must be > 0")
    if not omega0 > 0:
        raise ValueError("omega0 must be > 0")
    if pulse_mode not in ("ideal", "finite"):
        raise ValueError(f"unknown pulse_mode {pulse_mode!r}")
    ideal = pulse_mode == "ideal"
    t_half_pi = math.pi / (2 * omega0)
    third = T / 3
    free = third if ideal else third - 2 * t_half_pi
    if free < 0:
        raise ValueError(f"pi/2 pulses of {t_half_pi:g} s do not fit in T/3 = {third:g} s")
    ex = Manifold.EXCITED
    segs = (
        Segment(ex, Kind.RF_PULSE, t_half_pi, 0.0, omega0, ideal),
        Segment(ex, Kind.RF_PULSE, third, math.pi / 2, omega0),
        Segment(ex, Kind.RF_PULSE, third, 3 * math.pi / 2, omega0),
        Segment(ex, Kind.RF_PULSE, t_half_pi, math.pi, omega0, ideal),
        Segment(ex, Kind.FREE, free),
    )
    return PulseSequence(segs)


SEQUENCE_FIELDS = ("manifold", "kind", "duration_s", "phi_rad", "omega_rad_s", "ideal")


def _fmt(x: float) -> str:
    return format(x, ".17g")


def dumps_sequence(seq: PulseSequence) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SEQUENCE_FIELDS)
    for s in seq:
        w.writerow([s.manifold.value, s.kind.value, _fmt(s.duration), _fmt(s.phi), _fmt(s.omega), str(s.ideal).lower()])
    return buf.getvalue()


def loads_sequence(text: str) -> PulseSequence:
    rows = csv.DictReader(io.StringIO(text))
    if tuple(rows.fieldnames or ()) != SEQUENCE_FIELDS:
        raise ValueError(f"sequence header must be {','.join(SEQUENCE_FIELDS)}")
    segs = []
    for r in rows:
        if r["ideal"] not in ("true", "false"):
            raise ValueError(f"bad ideal flag {r['ideal']!r}")
        segs.append(
            Segment(
                Manifold(r["manifold"]),
                Kind(r["kind"]),
                float(r["duration_s"]),
                float(r["phi_rad"]),
                float(r["omega_rad_s"]),
                r["ideal"] == "true",
            )
        )
    return PulseSequence(segs)


def write_sequence(seq: PulseSequence, path) -> None:
    Path(path).write_text(dumps_sequence(seq))


def read_sequence(path) -> PulseSequence:
    return loads_sequence(Path(path).read_text())


def _null_linear(phase_of, lo: float, hi: float) -> float | None:
    """Root of a phase that is affine in the echo time on [lo, hi].

    ``phase_of`` returns exact rationals, so the root is solved exactly and
    rounded once to the nearest float.
    """
    f_lo, f_hi = phase_of(lo), phase_of(hi)
    if f_hi == f_lo:
        return None
    t = Fraction(lo) - f_lo * (Fraction(hi) - Fraction(lo)) / (f_hi - f_lo)
    tol = Fraction(1, 10**12) * (Fraction(hi) - Fraction(lo))
    if t < lo - tol or t > hi + tol:
        return None
    return min(max(float(t), lo), hi)


def ground_echo_times(
    chi_g: float,
    chi_e: float,
    m_g: float,
    m_e: float,
    T: float,
    mode: str = "magnetic_only",
) -> list[tuple[float, Manifold]]:
    """Echo pulses that null the superposition phase picked up during ``T``.

    ``magnetic_only`` places one ground-manifold echo in the free-evolution
    window plus a restoring ground pulse at ``T``. ``magnetic_and_stark`` puts
    the first ground echo at ``T/3``, which nulls everything accrued while the
    drive is on, then places a second echo in the free window: on the ground
    manifold if a time in ``[2T/3, T]`` works, otherwise on the excited one.

    Echoes are only placed inside the final free window; if no time there
    nulls the phase an :class:`UnresolvableEchoError` is raised.
    """
    if chi_g * m_g == 0:
        raise ValueError("chi_g * m_g must be non-zero")
    if not T > 0:
        raise ValueError("T must be > 0")
    resp = ManifoldResponse(chi_g, chi_e, m_g, m_e)
    lo, hi = 2 * T / 3, T
    G, E = Manifold.GROUND, Manifold.EXCITED

    if mode == "magnetic_only":
        tau = _null_linear(lambda t: exact_phase_ledger(resp, 1.0, 0.0, T, [(t, G), (T, G)]), lo, hi)
        if tau is None:
            raise UnresolvableEchoError("no ground echo time in the free window nulls the magnetic phase")
        return [(tau, G), (T, G)]

    if mode == "magnetic_and_stark":
        first = (T / 3, G)
        for manifold in (G, E):
            tau = _null_linear(lambda t: exact_phase_ledger(resp, 1.0, 0.0, T, [first, (t, manifold)]), lo, hi)
            if tau is not None:
                return [first, (tau, manifold)]
        raise UnresolvableEchoError("no second echo in the free window nulls the remaining phase")

    raise ValueError(f"unknown echo mode {mode!r}")


def second_echo_closed_form(chi_g: float, chi_e: float, m_g: float, m_e: float, T: float) -> dict[str, float]:
    """Closed-form second echo time for the ``magnetic_and_stark`` scheme.

    With the first ground echo at ``T/3`` and ``a = chi_g m_g``,
    ``b = chi_e m_e``, a second ground echo nulls the phase at
    ``(5 - b/a) T / 6`` and an excited echo at ``(5 - a/b) T / 6``. Either is
    usable only if it falls in ``[2T/3, T]``.
    """
    a, b, T = Fraction(chi_g * m_g), Fraction(chi_e * m_e), Fraction(T)
    out = {}
    if a:
        out[Manifold.GROUND.value] = float((5 - b / a) * T / 6)
    if b:
        out[Manifold.EXCITED.value] = float((5 - a / b) * T / 6)
    return out


def magnetic_echo_closed_form(chi_g: float, chi_e: float, m_g: float, m_e: float, T: float) -> float:
    """Ground echo time ``(1 + b/(3a)) T / 2`` of the ``magnetic_only`` scheme."""
    a, b = Fraction(chi_g * m_g), Fraction(chi_e * m_e)
    return float((1 + b / (3 * a)) * Fraction(T) / 2)
