"""Command-line entry point.

Every subcommand reads one JSON config, computes everything in memory and
writes its files at the end. Exit codes: 0 success, 2 config error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import TWO_PI, ConfigError, RunConfig
from .propagation import UnwrapError, residual_frequency, residual_phase_scan
from .sequences import (
    UnresolvableEchoError,
    dumps_sequence,
    ground_echo_times,
    magnetic_echo_closed_form,
    quad_cancel_sequence,
    second_echo_closed_form,
)
from .shift_models import (
    ATOMIC_MASS,
    ELEMENTARY_CHARGE,
    SR88_MASS,
    ManifoldResponse,
    chain_equilibrium,
    phase_ledger,
    quadrupole_profile,
)
from .spectroscopy import (
    FitError,
    FringeDataset,
    IonShifts,
    dd_fringe_frequency,
    fit_fringe,
    magnetic_components,
    relative_quadrupole,
    gradient_extract,
    quadrupole_sensitivity,
    simulate_fringe,
)
from .spin_algebra import EigenConvergenceError, make_spin_system

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


# ---------------------------------------------------------------- formatting

def fmt(x) -> str:
    return format(float(x), ".17g")


def _json_value(v, indent: int) -> str:
    pad, inner = " " * indent, " " * (indent + 2)
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_json_value(x, indent + 2)}" for k, x in v.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        if len(v) == 0:
            return "[]"
        items = [inner + _json_value(x, indent + 2) for x in v]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v) if math.isfinite(v) else "null"
    if v is None:
        return "null"
    return json.dumps(str(v))


def dumps_json(obj) -> str:
    """JSON with floats at 17 significant digits and insertion-ordered keys."""
    return _json_value(obj, 0) + "\n"


def dumps_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def dumps_dat(x, y, comment: str = "") -> str:
    lines = [f"# {comment}"] if comment else []
    lines += [f"{fmt(a)} {fmt(b)}" for a, b in zip(x, y)]
    return "\n".join(lines) + "\n"


def _hz(x: float) -> float:
    # keep an exact zero positive so outputs never show "-0"
    return x / TWO_PI + 0.0


# ---------------------------------------------------------------- commands

def _time_grid(cfg: RunConfig) -> np.ndarray:
    t_max = float(cfg.require("t_max_s"))
    n_t = cfg.require("n_t")
    if not isinstance(n_t, int) or n_t < 10:
        raise ConfigError("n_t: need an integer of at least 10 grid points")
    if not t_max > 0:
        raise ConfigError("t_max_s: must be > 0")
    return np.linspace(0.0, t_max, n_t)


def cmd_scan_residual(cfg: RunConfig) -> dict[str, str]:
    j = cfg.get("j", default=2.5)
    sys_ = make_spin_system(j)
    omega0 = float(cfg.require("omega0_rad"))
    if not omega0 > 0:
        raise ConfigError("omega0_hz: must be > 0")
    grid = _time_grid(cfg)
    m_values = [float(m) for m in cfg.get("m_values", default=[m for m in sys_.m_values if m > 0])]
    reference = cfg.get("reference", default="drive")
    if reference not in ("drive", "interrogation"):
        raise ConfigError("reference: must be 'drive' or 'interrogation'")

    points = []
    for k, pt in enumerate(cfg.get("points", default=[])):
        if "q_rad" not in pt or "delta_rad" not in pt:
            raise ConfigError(f"missing config field: points[{k}].{'q_hz' if 'q_rad' not in pt else 'delta_hz'}")
        points.append((pt.get("label", f"point{k + 1}"), pt["delta_rad"] / omega0, pt["q_rad"] / omega0))
    p_values = [float(p) for p in cfg.get("p_values", default=[])]
    points += [(f"p={fmt(p)}", p, p) for p in p_values]
    if not points:
        raise ConfigError("missing config field: p_values (or points)")

    scan_rows, freq_rows, loss = [], [], {}
    f_r = {}
    for label, pd, pq in points:
        for m in m_values:
            scan = residual_phase_scan(sys_, m, omega0, pd, pq, grid)
            f = _hz(residual_frequency(scan, reference))
            f_r[(label, m)] = f
            loss[(label, m)] = float(np.max(scan.population_loss))
            freq_rows.append((label, float(pd), float(pq), float(m), f))
            scan_rows += [
                (float(pd), float(pq), float(m), float(t), float(ph) + 0.0, float(pl) + 0.0, f)
                for t, ph, pl in zip(grid, scan.phase_diff, scan.population_loss)
            ]

    files = {
        "scan.csv": dumps_csv(("p_delta", "p_q", "m", "T_s", "phase_diff_rad", "pop_loss", "f_r_hz"), scan_rows),
        "residual_frequencies.csv": dumps_csv(("label", "p_delta", "p_q", "m", "f_r_hz"), freq_rows),
    }

    tables: dict = {}
    for label, _, _ in points:
        if "/" in label:
            case, ion = label.split("/", 1)
            for m in m_values:
                tables.setdefault(case, {}).setdefault(fmt(m), {})[ion] = 1e3 * f_r[(label, m)]

    cubic = {}
    for m in m_values:
        ps = np.array([p for p in p_values if p > 0])
        fs = np.array([abs(f_r[(f"p={fmt(p)}", m)]) for p in ps])
        if ps.size < 2 or np.any(fs == 0):
            continue
        slope, icpt = np.polyfit(np.log(ps), np.log(fs), 1)
        coeff = float(np.sum(fs * ps**3) / np.sum(ps**6))
        cubic[fmt(m)] = {"log_log_slope": float(slope), "log_log_intercept": float(icpt),
                         "cubic_coefficient_hz": coeff, "n_points": int(ps.size)}
        files[f"f_r_vs_p_m{fmt(m)}.dat"] = dumps_dat(ps, fs, f"p |f_r|/Hz for m={fmt(m)}")

    files["summary.json"] = dumps_json({
        "command": "scan-residual",
        "j": float(j),
        "omega0_hz": _hz(omega0),
        "reference": reference,
        "t_grid": {"t_max_s": float(grid[-1]), "n_t": int(grid.size)},
        "residual_tables_mhz": tables,
        "cubic_fit": cubic,
        "max_population_loss": {f"{label} m={fmt(m)}": v for (label, m), v in loss.items()},
    })
    return files


def _chain_block(cfg: RunConfig, block: str = "chain"):
    """Positions (m), quadrupole couplings and clock Zeeman shifts (rad/s) of a chain config."""
    n = cfg.require(block, "n_ions")
    if not isinstance(n, int) or n < 2:
        raise ConfigError(f"{block}.n_ions: need an integer >= 2")
    axial = float(cfg.require(block, "axial_rad"))
    mass = cfg.get(block, "mass_amu", default=None)
    mass = SR88_MASS if mass is None else float(mass) * ATOMIC_MASS
    charge = float(cfg.get(block, "charge_e", default=1.0)) * ELEMENTARY_CHARGE
    pos = chain_equilibrium(n, axial, mass, charge)
    q = cfg.get(block, "q_rad")
    if q is None:
        coupling = cfg.get(block, "q_coupling_rad_per_v_per_m2")
        if coupling is None:
            raise ConfigError(f"missing config field: {block}.q_hz")
        q = quadrupole_profile(pos, float(cfg.get(block, "trap_gradient_v_per_m2", default=0.0)), coupling, charge)
    q = np.asarray(q, dtype=float)
    if q.shape != (n,):
        raise ConfigError(f"{block}.q_hz: need one value per ion ({n})")
    grad = float(cfg.require(block, "zeeman_gradient_rad_per_um")) * 1e6
    zeeman = grad * pos
    return pos, q, zeeman, grad


def cmd_chain(cfg: RunConfig) -> dict[str, str]:
    pos, q, zeeman, _ = _chain_block(cfg)
    rows = [(k + 1, float(z), _hz(qk), _hz(zk)) for k, (z, qk, zk) in enumerate(zip(pos, q, zeeman))]
    return {"chain.csv": dumps_csv(("ion_index", "position_m", "q_hz", "zeeman_hz"), rows)}


def _fit_entry(data: FringeDataset, truth_hz):
    fit = fit_fringe(data)
    entry = {"truth_hz": truth_hz, **fit.as_dict()}
    if truth_hz is not None:
        entry["truth_within_errors"] = {
            "1_sigma": bool(abs(fit.c - truth_hz) <= fit.c_err),
            "2_sigma": bool(abs(fit.c - truth_hz) <= 2 * fit.c_err),
        }
    return fit, entry


def _fringe_fit_only(cfg: RunConfig) -> dict[str, str]:
    inputs = cfg.get("inputs")
    if inputs is None:
        inputs = {"input": cfg.require("input")}
    files, fits = {}, {}
    for label, path in inputs.items():
        try:
            data = FringeDataset.read(path)
        except FileNotFoundError:
            raise ConfigError(f"input: file not found: {path}") from None
        _, fits[label] = _fit_entry(data, None)
        files[f"fringe_{label}.dat"] = dumps_dat(data.times, data.parity, "time_s parity")
    files["fits.json"] = dumps_json({"command": "fringe", "mode": "fit", "fits": fits})
    return files


def cmd_fringe(cfg: RunConfig) -> dict[str, str]:
    mode = cfg.get("mode", default="simulate")
    if mode == "fit":
        return _fringe_fit_only(cfg)
    if mode != "simulate":
        raise ConfigError("mode: must be 'simulate' or 'fit'")

    pos, q, zeeman, grad = _chain_block(cfg)
    n = len(pos)
    j = float(cfg.get("chain", "j", default=2.5))
    m_e = float(cfg.get("chain", "m_e", default=-1.5))
    m_g = float(cfg.get("chain", "m_g", default=-0.5))
    chi_g = float(cfg.get("chain", "chi_g_rad_per_gauss", default=TWO_PI * 2.802e6))
    chi_e = float(cfg.get("chain", "chi_e_rad_per_gauss", default=TWO_PI * 1.68e6))
    clock_per_gauss = chi_e * m_e - chi_g * m_g
    if clock_per_gauss == 0:
        raise ConfigError("chain: clock transition has no linear Zeeman response")
    field = zeeman / clock_per_gauss
    ions = [IonShifts(q[k], chi_e * field[k], chi_g * field[k]) for k in range(n)]

    contrast = float(cfg.require("contrast"))
    decay = float(cfg.require("decay_s"))
    shots = int(cfg.require("shots"))
    times = _time_grid(cfg)
    sequences = cfg.get("sequences", default=["ramsey"])

    files, report = {}, {}
    for seq in sequences:
        if seq not in ("ramsey", "quad_cancel"):
            raise ConfigError(f"sequences: unknown sequence {seq!r}")
        fits, fitted = {}, {}
        for a in range(n):
            for b in range(a + 1, n):
                key = f"{a + 1}-{b + 1}"
                omega = dd_fringe_frequency(ions[a], ions[b], seq, j, m_e, m_g)
                data = simulate_fringe(omega, contrast, decay, times, shots, cfg.rng(f"fringe/{seq}/{key}"))
                fit, fits[key] = _fit_entry(data, _hz(omega))
                fitted[(a + 1, b + 1)] = TWO_PI * fit.c
                files[f"{seq}/fringe_{key}.csv"] = data.to_csv()
                files[f"{seq}/fringe_{key}.dat"] = dumps_dat(data.times, data.parity, f"pair {key} time_s parity")
        report[seq] = {"pairs": fits}
        if seq == "ramsey" and n >= 3:
            report[seq]["extraction"] = _extraction(fitted, pos, q, j, m_e, grad)

    files["fits.json"] = dumps_json({
        "command": "fringe",
        "mode": "simulate",
        "seed": cfg.seed,
        "n_ions": n,
        "positions_m": pos,
        "results": report,
    })
    return files


def _extraction(fitted: dict, pos, q, j, m_e, grad) -> dict:
    n = len(pos)
    ref = (n + 1) // 2
    sens = quadrupole_sensitivity(j, m_e)
    rel = relative_quadrupole(fitted, n, ref)
    slope, _ = gradient_extract(fitted, pos)
    return {
        "reference_ion": ref,
        "relative_quadrupole_hz": {str(i): _hz(v) for i, v in rel.items()},
        "injected_relative_quadrupole_hz": {str(i): _hz(abs(sens * (q[i - 1] - q[ref - 1]))) for i in rel},
        "magnetic_components_hz": {f"{a}-{b}": _hz(v) for (a, b), v in magnetic_components(fitted, n).items()},
        "zeeman_gradient_hz_per_um": _hz(slope) * 1e-6,
        "injected_zeeman_gradient_hz_per_um": _hz(grad) * 1e-6,
    }


def _echo_report(cfg: RunConfig, T: float) -> dict:
    chi_g = float(cfg.require("echo", "chi_g_rad_per_gauss"))
    chi_e = float(cfg.require("echo", "chi_e_rad_per_gauss"))
    m_g = float(cfg.require("echo", "m_g"))
    m_e = float(cfg.require("echo", "m_e"))
    B = float(cfg.get("echo", "b_gauss", default=1.0))
    omega_g = float(cfg.get("echo", "omega_g_rad", default=0.0))
    modes = cfg.get("echo", "modes", default=["magnetic_only", "magnetic_and_stark"])
    resp = ManifoldResponse(chi_g, chi_e, m_g, m_e)

    report = {"T_s": T, "b_gauss": B, "omega_g_hz": _hz(omega_g), "modes": {}}
    for mode in modes:
        echoes = ground_echo_times(chi_g, chi_e, m_g, m_e, T, mode)
        with_stark = mode == "magnetic_and_stark"
        entry = {
            "echoes": [{"time_s": t, "time_over_T": t / T, "manifold": m.value} for t, m in echoes],
            "ledger_residual_rad": phase_ledger(resp, B, omega_g if with_stark else 0.0, T, echoes),
            "ledger_includes_stark": with_stark,
            "unechoed_phase_rad": phase_ledger(resp, B, omega_g if with_stark else 0.0, T, []),
        }
        if mode == "magnetic_only":
            entry["closed_form_tau_over_T"] = magnetic_echo_closed_form(chi_g, chi_e, m_g, m_e, T) / T
            expected = cfg.get("echo", "expected_tau_over_T")
            if expected is not None:
                got = echoes[0][0] / T
                entry["tau_check"] = {"expected": float(expected), "value": got, "abs_error": abs(got - expected),
                                      "within_1e-3": abs(got - expected) <= 1e-3}
        else:
            entry["closed_form_second_echo_over_T"] = {
                k: v / T for k, v in second_echo_closed_form(chi_g, chi_e, m_g, m_e, T).items()
            }
        report["modes"][mode] = entry
    return report


def cmd_sequence(cfg: RunConfig) -> dict[str, str]:
    T = float(cfg.require("T_s"))
    omega0 = float(cfg.require("omega0_rad"))
    if not omega0 > 0:
        raise ConfigError("omega0_hz: must be > 0")
    files = {}
    for mode in cfg.get("pulse_modes", default=["ideal", "finite"]):
        files[f"quad_cancel_{mode}.csv"] = dumps_sequence(quad_cancel_sequence(T, omega0, mode))
    if cfg.get("echo") is not None:
        files["echo.json"] = dumps_json(_echo_report(cfg, T))
    return files


def cmd_echo(cfg: RunConfig) -> dict[str, str]:
    T = float(cfg.require("T_s"))
    return {"echo.json": dumps_json(_echo_report(cfg, T))}


COMMANDS = {
    "scan-residual": cmd_scan_residual,
    "fringe": cmd_fringe,
    "sequence": cmd_sequence,
    "chain": cmd_chain,
    "echo": cmd_echo,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadcancel", description="Quadrupole-cancellation simulation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed (unsigned 64-bit)")
    return parser


def run(command: str, cfg: RunConfig, out: Path) -> list[Path]:
    files = COMMANDS[command](cfg)
    written = []
    for name, text in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        written.append(path)
    return written


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed: must be an unsigned 64-bit integer")
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        written = run(args.command, cfg, Path(args.out))
    except (ConfigError, UnresolvableEchoError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnwrapError, FitError, EigenConvergenceError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
