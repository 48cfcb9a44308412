"""Two-ion correlation spectroscopy: parity signals, pair frequencies and fringe fits."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lombscargle

from .shift_models import ChainModel

CORRELATION_CONTRAST_MAX = 0.5
A_BOUNDS = (0.0, 0.6)


class FitError(RuntimeError):
    pass


def parity(p_dd: float, p_ss: float, p_sd: float, p_ds: float, tol: float = 1e-9) -> float:
    """P(DD) + P(SS) - P(SD) - P(DS)."""
    probs = (p_dd, p_ss, p_sd, p_ds)
    if any(p < 0 for p in probs):
        raise ValueError("probabilities must be non-negative")
    if abs(math.fsum(probs) - 1) > tol:
        raise ValueError("probabilities must sum to 1")
    return p_dd + p_ss - p_sd - p_ds


def quadrupole_sensitivity(j: float, m_e: float) -> float:
    """Clock shift per unit Q_J of the excited |j, m_e> level: j(j+1) - 3 m_e^2."""
    return j * (j + 1) - 3 * m_e**2


@dataclass(frozen=True)
class PairFringe:
    i: int
    j: int
    omega_q: float
    omega_m: float

    @property
    def omega(self) -> float:
        return abs(self.omega_q + self.omega_m)

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.i, self.j), max(self.i, self.j))


def pair_frequencies(chain: ChainModel, j: float = 2.5, m_e: float = -1.5) -> dict[tuple[int, int], PairFringe]:
    """All pair fringes ``(i, j)`` with ``i < j``, 1-based ion indices."""
    sens = quadrupole_sensitivity(j, m_e)
    wq = sens * chain.q_profile
    wm = chain.zeeman_profile
    return {
        (a + 1, b + 1): PairFringe(a + 1, b + 1, wq[a] - wq[b], wm[a] - wm[b])
        for a, b in combinations(range(chain.n_ions), 2)
    }


def _omega(freqs: dict, a: int, b: int) -> float:
    v = freqs[(min(a, b), max(a, b))]
    return v.omega if isinstance(v, PairFringe) else float(v)


def relative_quadrupole(freqs: dict, n_ions: int, ref: int | None = None) -> dict[int, float]:
    """Quadrupole shift of each ion relative to the reference ion.

    ``(1/2) | |w_{i,ref}| - |w_{N+1-i,ref}| |``; valid while the magnetic part
    of every pair dominates its quadrupole part. ``freqs`` maps pair keys to
    either :class:`PairFringe` or measured fringe frequencies.
    """
    ref = (n_ions + 1) // 2 if ref is None else ref
    out = {}
    for i in range(1, n_ions + 1):
        mirror = n_ions + 1 - i
        if i == ref or mirror == ref:
            continue
        out[i] = 0.5 * abs(abs(_omega(freqs, i, ref)) - abs(_omega(freqs, mirror, ref)))
    return out


def magnetic_components(freqs: dict, n_ions: int) -> dict[tuple[int, int], float]:
    """``(1/2) | |w_{i,j}| + |w_{N+1-i,N+1-j}| |`` for every pair."""
    out = {}
    for a, b in combinations(range(1, n_ions + 1), 2):
        ma, mb = n_ions + 1 - a, n_ions + 1 - b
        out[(a, b)] = 0.5 * abs(abs(_omega(freqs, a, b)) + abs(_omega(freqs, ma, mb)))
    return out


def gradient_extract(freqs: dict, positions) -> tuple[float, float]:
    """Least-squares slope (rad/s per m) and intercept of the magnetic component vs ion separation."""
    pos = np.asarray(positions, dtype=float)
    comps = magnetic_components(freqs, len(pos))
    sep = np.array([abs(pos[b - 1] - pos[a - 1]) for a, b in comps])
    val = np.array(list(comps.values()))
    if np.unique(np.round(sep / max(sep.max(), 1e-300), 12)).size < 2:
        raise ValueError("need at least two distinct ion separations")
    slope, intercept = np.polyfit(sep, val, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class IonShifts:
    """Per-ion shifts in rad/s.

    ``delta`` is the excited-manifold detuning per unit m from the RF drive,
    ``q_j`` the quadrupole coupling and ``ground_zeeman`` the ground-manifold
    Zeeman shift per unit m.
    """

    q_j: float = 0.0
    delta: float = 0.0
    ground_zeeman: float = 0.0


def clock_shift(env: IonShifts, mode: str, j: float = 2.5, m_e: float = -1.5, m_g: float = -0.5) -> float:
    """Mean clock-transition shift over the interrogation (rad/s).

    ``ramsey``: quadrupole + excited Zeeman - ground Zeeman. ``quad_cancel``:
    the quadrupole term drops out and the excited Zeeman term only acts in
    the final third; the undriven ground manifold keeps its full Zeeman phase.
    """
    excited_zeeman = env.delta * m_e
    ground = env.ground_zeeman * m_g
    if mode == "ramsey":
        return env.q_j * quadrupole_sensitivity(j, m_e) + excited_zeeman - ground
    if mode == "quad_cancel":
        return excited_zeeman / 3 - ground
    raise ValueError(f"unknown mode {mode!r}")


def dd_fringe_frequency(env_i: IonShifts, env_j: IonShifts, mode: str, j: float = 2.5, m_e: float = -1.5, m_g: float = -0.5) -> float:
    """Parity fringe angular frequency of an ion pair under the given sequence."""
    return abs(clock_shift(env_i, mode, j, m_e, m_g) - clock_shift(env_j, mode, j, m_e, m_g))


@dataclass
class FitResult:
    a: float
    b: float
    c: float
    a_err: float
    b_err: float
    c_err: float
    objective: float
    iterations: int
    converged: bool = True

    def as_dict(self) -> dict:
        return {
            "estimates": {"a": self.a, "b_s": self.b, "c_hz": self.c},
            "standard_errors": {"a": self.a_err, "b_s": self.b_err, "c_hz": self.c_err},
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass
class FringeDataset:
    times: np.ndarray
    parity: np.ndarray
    shots: np.ndarray
    fit: FitResult | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.parity = np.asarray(self.parity, dtype=float)
        self.shots = np.asarray(self.shots, dtype=int)
        if not (self.times.shape == self.parity.shape == self.shots.shape):
            raise ValueError("times, parity and shots must have equal length")
        if np.any(np.abs(self.parity) > 1 + 1e-12):
            raise ValueError("parity values must lie in [-1, 1]")
        if np.any(self.shots < 1):
            raise ValueError("shots must be >= 1")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("time_s", "parity", "shots"))
        for t, p, n in zip(self.times, self.parity, self.shots):
            w.writerow((format(t, ".17g"), format(p, ".17g"), int(n)))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FringeDataset":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or set(rows[0]) != {"time_s", "parity", "shots"}:
            raise ValueError("fringe CSV needs columns time_s, parity, shots")
        return cls(
            [float(r["time_s"]) for r in rows],
            [float(r["parity"]) for r in rows],
            [int(r["shots"]) for r in rows],
        )

    @classmethod
    def read(cls, path) -> "FringeDataset":
        return cls.from_csv(Path(path).read_text())


def fringe_model(t, a: float, b: float, c: float):
    """a exp(-t/b) cos(2 pi c t)."""
    t = np.asarray(t, dtype=float)
    return a * np.exp(-t / b) * np.cos(2 * np.pi * c * t)


def simulate_fringe(
    omega: float,
    contrast: float,
    decay: float,
    times,
    shots: int,
    seed=None,
    mode: str = "correlation",
) -> FringeDataset:
    """Shot-sampled parity fringe of frequency ``omega`` (rad/s).

    In ``correlation`` mode each shot draws a fresh common laser phase and
    two independent single-ion outcomes whose Ramsey contrast is chosen so
    the averaged parity is ``contrast * exp(-t/decay) * cos(omega t)``; this
    caps ``contrast`` at 1/2. ``direct`` mode draws +/-1 parity outcomes with
    that mean and no cap. ``decay=inf`` disables the envelope.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if not 0 <= contrast <= 1:
        raise ValueError("contrast must lie in [0, 1]")
    if mode == "correlation" and contrast > CORRELATION_CONTRAST_MAX:
        raise ValueError("correlation spectroscopy contrast cannot exceed 1/2")
    if mode not in ("correlation", "direct"):
        raise ValueError(f"unknown mode {mode!r}")
    if not decay > 0:
        raise ValueError("decay must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t = np.asarray(times, dtype=float)
    envelope = contrast * np.exp(-t / decay)
    values = np.empty_like(t)
    for k, (tk, env) in enumerate(zip(t, envelope)):
        if mode == "direct":
            mean = env * math.cos(omega * tk)
            ups = rng.binomial(shots, 0.5 * (1 + mean))
            values[k] = (2 * ups - shots) / shots
            continue
        c1 = math.sqrt(2 * env)
        theta = rng.uniform(0, 2 * np.pi, shots)
        p1 = 0.5 * (1 + c1 * np.cos(theta))
        p2 = 0.5 * (1 + c1 * np.cos(theta + omega * tk))
        s1 = np.where(rng.random(shots) < p1, 1, -1)
        s2 = np.where(rng.random(shots) < p2, 1, -1)
        values[k] = np.mean(s1 * s2)
    return FringeDataset(t, values, np.full(t.shape, shots), meta={"omega": omega, "contrast": contrast, "decay": decay})


def periodogram_peak(times, values, f_max: float | None = None, oversample: int = 10) -> float:
    """Frequency (Hz) of the Lomb-Scargle periodogram maximum."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    span = np.ptp(t)
    if span <= 0:
        raise ValueError("times must span a non-zero interval")
    if f_max is None:
        f_max = 0.5 * (t.size - 1) / span
    df = 1 / (oversample * span)
    freqs = np.arange(df, f_max + df, df)
    power = lombscargle(t, y - y.mean(), 2 * np.pi * freqs)
    return float(freqs[np.argmax(power)])


def _sigma(shots: np.ndarray, mu: np.ndarray | None, weighting: str) -> np.ndarray:
    if weighting == "conservative" or mu is None:
        return 1 / np.sqrt(shots)
    if weighting == "binomial":
        return np.sqrt(np.clip(1 - mu**2, 1e-3, 1) / shots)
    raise ValueError(f"unknown weighting {weighting!r}")


def fit_fringe(data: FringeDataset, weighting: str = "conservative", max_nfev: int = 2000) -> FitResult:
    """Weighted least-squares fit of ``a exp(-t/b) cos(2 pi c t)``.

    The frequency is seeded from the periodogram peak and the amplitude and
    decay from the envelope of the data. Points are weighted by the parity
    shot noise, ``1/shots`` per point (``conservative``) or
    ``(1 - model^2)/shots`` (``binomial``, refined once around the first
    fit). Standard errors come from the Gauss-Newton curvature of the
    objective at the optimum.
    """
    t, y, n = data.times, data.parity, data.shots
    if t.size < 8:
        raise FitError("need at least 8 points")
    c0 = periodogram_peak(t, y)
    if np.ptp(t) * c0 < 1.5:
        raise FitError("data span fewer than 1.5 fringe periods")
    early = t <= t.min() + 0.25 * np.ptp(t)
    a0 = float(np.clip(np.sqrt(2 * np.mean(y[early] ** 2)), 0.05, A_BOUNDS[1] * 0.99))
    late_rms = np.sqrt(2 * np.mean(y[~early] ** 2)) if np.any(~early) else a0
    ratio = np.clip(late_rms / a0, 0.05, 0.95)
    t_mid = np.mean(t[~early]) - np.mean(t[early]) if np.any(~early) else np.ptp(t)
    b0 = float(max(t_mid / -np.log(ratio), 1e-3 * np.ptp(t)))

    lower = [A_BOUNDS[0], 1e-9, 0.0]
    upper = [A_BOUNDS[1], np.inf, np.inf]
    x0 = np.clip([a0, b0, c0], np.array(lower) + 1e-12, np.array(upper) - 1e-12)

    sigma = _sigma(n, None, weighting)
    total_nfev = 0
    for _ in range(2 if weighting == "binomial" else 1):
        def resid(x, sigma=sigma):
            return (fringe_model(t, *x) - y) / sigma

        sol = least_squares(resid, x0, bounds=(lower, upper), method="trf", x_scale="jac", max_nfev=max_nfev,
                            ftol=1e-12, xtol=1e-12, gtol=1e-12)
        total_nfev += sol.nfev
        x0 = sol.x
        sigma = _sigma(n, fringe_model(t, *sol.x), weighting)
    if not sol.success:
        raise FitError(f"fit did not converge: {sol.message}")
    J = sol.jac
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular curvature at the optimum") from exc
    err = np.sqrt(np.clip(np.diag(cov), 0, np.inf))
    a, b, c = (float(v) for v in sol.x)
    return FitResult(a, b, c, float(err[0]), float(err[1]), float(err[2]), float(2 * sol.cost), total_nfev)


def fit_dataset(data: FringeDataset, **kw) -> FringeDataset:
    """Return a copy of ``data`` with its ``fit`` filled in."""
    return replace(data, fit=fit_fringe(data, **kw))
