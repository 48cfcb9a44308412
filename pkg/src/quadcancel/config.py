"""Run configuration: JSON files, presets, Hz -> rad/s conversion and seeding."""
from __future__ import annotations

import copy
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONFIG_VERSION = 1
TWO_PI = 2 * math.pi


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


PRESETS: dict[str, dict] = {
    "paper-residual-tables": {
        "j": 2.5,
        "omega0_hz": 50e3,
        "t_max_s": 2.0,
        "n_t": 401,
        "m_values": [2.5, 1.5, 0.5],
        "reference": "drive",
        "points": [
            {"label": f"{case}/ion{k + 1}", "q_hz": q, "delta_hz": d}
            for case, deltas in (("experiment", (-33.0, 10.0, 53.0)), ("typical", (5.0, 5.0, 5.0)))
            for k, (q, d) in enumerate(zip((28.0, 42.0, 28.0), deltas))
        ],
        "p_values": [1e-4, 1.778279410038923e-4, 3.1622776601683794e-4, 5.623413251903491e-4, 1e-3,
                     1.778279410038923e-3, 3.1622776601683794e-3, 5.623413251903491e-3, 1e-2],
    },
    "paper-3ion": {
        "mode": "simulate",
        "chain": {
            "n_ions": 3,
            "axial_hz": 1.5e6,
            "q_hz": [28.0, 28.9, 28.0],
            "zeeman_gradient_hz_per_um": 8.0,
            "j": 2.5,
            "m_e": -1.5,
            "m_g": -0.5,
        },
        "sequences": ["ramsey", "quad_cancel"],
        "contrast": 0.5,
        "decay_s": 2.0,
        "t_max_s": 0.4,
        "n_t": 81,
        "shots": 250,
    },
    "paper-7ion": {
        "mode": "simulate",
        "chain": {
            "n_ions": 7,
            "axial_hz": 1.5e6,
            "q_hz": [30.0, 31.2, 31.9, 32.1, 31.9, 31.2, 30.0],
            "zeeman_gradient_hz_per_um": 16.4,
            "j": 2.5,
            "m_e": -1.5,
            "m_g": -0.5,
        },
        "sequences": ["ramsey"],
        "contrast": 0.5,
        "decay_s": 0.5,
        "t_max_s": 0.1,
        "n_t": 801,
        "shots": 250,
    },
    "sr88-echo": {
        "T_s": 0.3,
        "omega0_hz": 50e3,
        "pulse_modes": ["ideal", "finite"],
        "echo": {
            "chi_g_hz_per_gauss": 2.802e6,
            "chi_e_hz_per_gauss": 1.68e6,
            "m_g": -0.5,
            "m_e": -1.5,
            "modes": ["magnetic_only", "magnetic_and_stark"],
            "b_gauss": 3.0,
            "omega_g_hz": 5e3,
            "expected_tau_over_T": 0.8,
        },
    },
}


def _to_rad(obj):
    """Copy of ``obj`` with every ``*_hz*`` key converted to rad/s under a ``*_rad*`` key."""
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            if "_hz" in k and not isinstance(v, (dict, str, bool)):
                arr = np.asarray(v, dtype=float) * TWO_PI
                out[k.replace("_hz", "_rad")] = arr.tolist() if arr.ndim else float(arr)
            else:
                out[k] = _to_rad(v)
        return out
    if isinstance(obj, list):
        return [_to_rad(v) for v in obj]
    return obj


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    """A parsed run configuration.

    ``raw`` keeps the file contents verbatim (frequencies in Hz) so that
    serialisation round-trips exactly; ``params`` is the preset-merged view
    with every frequency converted once to rad/s.
    """

    raw: dict
    params: dict = field(init=False)
    seed: int = field(init=False)

    def __post_init__(self):
        raw = self.raw
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        version = raw.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        merged = {}
        preset = raw.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"preset: unknown preset {preset!r} (known: {', '.join(PRESETS)})")
            merged = PRESETS[preset]
        merged = _merge(merged, {k: v for k, v in raw.items() if k not in ("preset", "version")})
        seed = merged.pop("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed: must be a non-negative integer")
        self.seed = seed
        self.params = _to_rad(merged)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        return cls(raw)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "RunConfig":
        return cls({"version": CONFIG_VERSION, "preset": name, **overrides})

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    def require(self, *path: str):
        """Fetch a nested parameter, raising a :class:`ConfigError` naming it if absent."""
        node = self.params
        for i, key in enumerate(path):
            if not isinstance(node, dict) or key not in node:
                name = ".".join(path[: i + 1]).replace("_rad", "_hz")
                raise ConfigError(f"missing config field: {name}")
            node = node[key]
        return node

    def get(self, *path: str, default=None):
        try:
            return self.require(*path)
        except ConfigError:
            return default

    def rng(self, label: str) -> np.random.Generator:
        return derive_rng(self.seed, label)


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``label``, reproducible from the run seed."""
    return np.random.default_rng([seed, zlib.crc32(label.encode())])
