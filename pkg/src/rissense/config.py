"""Scenario configuration: defaults, TOML loading and validation."""

from __future__ import annotations

import dataclasses
import math
import re
import sys
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import Pose, UEState
from .scenario import Scenario

RIS_MODES = ("random", "direct")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending line when known."""


@dataclass
class ScenarioConfig:
    """Every tunable of the simulator, with the reference defaults."""

    # Monte Carlo
    seed: int = 0
    runs: int = 50
    n_epochs: int = 15
    # UE trajectory (constant turn)
    initial_state: list = field(default_factory=lambda: [50.0, -30.0, 0.0, math.pi / 2, 11.11])
    dt: float = 0.5
    turn_rate: float = 0.05
    # arrays and RIS pose
    ris_position: list = field(default_factory=lambda: [30.0, 0.0, 20.0])
    ue_shape: list = field(default_factory=lambda: [4, 4])
    ris_shape: list = field(default_factory=lambda: [50, 50])
    # OFDM numerology and power budget
    carrier_frequency: float = 30e9
    bandwidth: float = 200e6
    subcarrier_spacing: float = 120e3
    n_subcarriers: int = 1600
    n_transmissions: int = 40
    tx_power_dbm: float = 37.0
    noise_psd_dbm_hz: float = -166.0
    rcs: float = 50.0
    q0: float = 0.285
    # scattering points
    n_sps: int = 8
    sp_box_low: list = field(default_factory=lambda: [30.0, -30.0, 2.0])
    sp_box_high: list = field(default_factory=lambda: [50.0, 50.0, 10.0])
    # detection and measurements
    p_fa: float = 1e-3
    merge_threshold: float = 36.0
    ris_profile_mode: str = "random"
    split_ratio: float = 1.0
    clutter_mean: float = 1.0
    synthesize_signals: bool = False
    # filters and fusion
    p_survival: float = 0.99
    birth_mean: float = 0.1
    initial_mean: float = 8.0
    p_detect_intensity: float = 0.95
    fusion_weight_ris: float = 0.5
    estimate_threshold: float = 0.5
    estimate_dedup_gate: float = 11.34
    # GOSPA
    gospa_p: float = 2.0
    gospa_c: float = 20.0
    gospa_alpha: float = 2.0
    # outputs
    dump_posteriors: bool = False
    # detection-probability map
    dp_map_tx_power_dbm: float = 20.0
    dp_map_transmissions: int = 20
    dp_map_ue: list = field(default_factory=lambda: [50.0, 0.0, 0.0])
    dp_map_ris: list = field(default_factory=lambda: [30.0, 0.0, 0.0])
    dp_map_focus: list = field(default_factory=lambda: [50.0, 15.0, 0.0])
    dp_map_x: list = field(default_factory=lambda: [31.0, 70.0])
    dp_map_y: list = field(default_factory=lambda: [-20.0, 30.0])
    dp_map_step: float = 1.0
    # link budget
    link_distance: float = 30.0
    link_points: int = 99

    def __post_init__(self):
        self.validate()

    # -- validation --------------------------------------------------------

    def validate(self, lines: dict | None = None) -> None:
        def fail(name, msg):
            where = f" (line {lines[name]})" if lines and name in lines else ""
            raise ConfigError(f"{name}{where}: {msg}")

        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                fail(f.name, "must be finite")
            if isinstance(v, list) and not all(isinstance(x, (int, float)) and math.isfinite(x) for x in v):
                fail(f.name, "must be a list of finite numbers")
        for name, n in (("initial_state", 5), ("ris_position", 3), ("ue_shape", 2), ("ris_shape", 2),
                        ("sp_box_low", 3), ("sp_box_high", 3), ("dp_map_ue", 3), ("dp_map_ris", 3),
                        ("dp_map_focus", 3), ("dp_map_x", 2), ("dp_map_y", 2)):
            if len(getattr(self, name)) != n:
                fail(name, f"expects {n} values")
        positive = ("runs", "n_epochs", "dt", "carrier_frequency", "bandwidth", "subcarrier_spacing",
                    "n_subcarriers", "n_transmissions", "rcs", "merge_threshold", "split_ratio",
                    "gospa_p", "gospa_c", "estimate_dedup_gate", "dp_map_step", "link_distance", "link_points",
                    "dp_map_transmissions")
        for name in positive:
            if getattr(self, name) <= 0:
                fail(name, "must be positive")
        for name in ("n_sps", "clutter_mean", "birth_mean", "initial_mean", "seed"):
            if getattr(self, name) < 0:
                fail(name, "must be nonnegative")
        if self.n_transmissions % 2 or self.n_transmissions < 4:
            fail("n_transmissions", "must be even and at least 4")
        if self.dp_map_transmissions % 2 or self.dp_map_transmissions < 4:
            fail("dp_map_transmissions", "must be even and at least 4")
        for name in ("p_fa", "p_survival", "p_detect_intensity", "fusion_weight_ris", "estimate_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0 and not (name == "p_survival" and v == 1.0):
                fail(name, "must lie in (0, 1)")
        if self.ris_profile_mode not in RIS_MODES:
            fail("ris_profile_mode", f"must be one of {RIS_MODES}")
        if any(lo >= hi for lo, hi in zip(self.sp_box_low, self.sp_box_high)):
            fail("sp_box_high", "must exceed sp_box_low in every coordinate")
        if min(self.ue_shape) < 1 or min(self.ris_shape) < 1:
            fail("ue_shape", "array dimensions must be >= 1")
        if not 0 < self.gospa_alpha <= 2:
            fail("gospa_alpha", "must lie in (0, 2]")
        if self.initial_state[4] < 0:
            fail("initial_state", "speed must be nonnegative")
        nominal = self.n_subcarriers * self.subcarrier_spacing
        if abs(nominal - self.bandwidth) > 1e-6 * self.bandwidth:
            warnings.warn(f"bandwidth {self.bandwidth:g} Hz differs from n_subcarriers * subcarrier_spacing "
                          f"= {nominal:g} Hz; the signal model uses the latter", stacklevel=3)

    # -- derived objects -----------------------------------------------------

    def scenario(self) -> Scenario:
        return Scenario(
            ris=Pose.at(self.ris_position),
            ue_shape=tuple(int(v) for v in self.ue_shape),
            ris_shape=tuple(int(v) for v in self.ris_shape),
            carrier_frequency=self.carrier_frequency,
            n_transmissions=self.n_transmissions,
            subcarrier_spacing=self.subcarrier_spacing,
            n_subcarriers=self.n_subcarriers,
            tx_power_dbm=self.tx_power_dbm,
            noise_psd_dbm_hz=self.noise_psd_dbm_hz,
            rcs=self.rcs,
            q0=self.q0,
        )

    def initial_ue(self) -> UEState:
        s = self.initial_state
        return UEState(s[:3], s[3], s[4])

    def dp_map_scenario(self) -> tuple[Scenario, UEState]:
        sc = self.scenario().with_(ris=Pose.at(self.dp_map_ris), tx_power_dbm=self.dp_map_tx_power_dbm,
                                   n_transmissions=self.dp_map_transmissions)
        ue_pos = np.asarray(self.dp_map_ue, dtype=float)
        to_ris = np.asarray(self.dp_map_ris, dtype=float) - ue_pos
        return sc, UEState(ue_pos, math.atan2(to_ris[1], to_ris[0]), 0.0)

    def with_(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def _key_lines(text: str) -> dict:
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([A-Za-z_][A-Za-z0-9_\-]*)\s*=", line)
        if m:
            out.setdefault(m.group(1), no)
    return out


def _coerce(name, value, default, lines):
    where = f" (line {lines[name]})" if name in lines else ""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name}{where}: expected an array, got {value!r}")
        return list(value)
    return value


def config_from_mapping(data: dict, lines: dict | None = None) -> ScenarioConfig:
    lines = lines or {}
    # nested tables are flattened: [ris] position = ... -> ris_position
    flat = {}
    for k, v in data.items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                flat[f"{k}_{kk}".replace("-", "_")] = vv
                if kk in lines:
                    lines.setdefault(f"{k}_{kk}".replace("-", "_"), lines[kk])
        else:
            flat[k.replace("-", "_")] = v
            if k in lines:
                lines.setdefault(k.replace("-", "_"), lines[k])
    known = {f.name: f for f in fields(ScenarioConfig)}
    kwargs = {}
    for k, v in flat.items():
        if k not in known:
            where = f" (line {lines[k]})" if k in lines else ""
            raise ConfigError(f"unknown configuration key {k!r}{where}")
        f = known[k]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        kwargs[k] = _coerce(k, v, default, lines)
    cfg = ScenarioConfig.__new__(ScenarioConfig)
    for f in fields(ScenarioConfig):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        setattr(cfg, f.name, kwargs.get(f.name, default))
    cfg.validate(lines)
    return cfg


def load_config(path) -> ScenarioConfig:
    """Read a TOML configuration; missing keys keep their defaults."""
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8", errors="replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return config_from_mapping(data, _key_lines(text))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def dump_config(cfg: ScenarioConfig) -> str:
    """TOML text of ``cfg`` (flat keys)."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, str):
            s = f'"{v}"'
        elif isinstance(v, list):
            s = "[" + ", ".join(repr(x) for x in v) + "]"
        else:
            s = repr(v)
        out.append(f"{f.name} = {s}")
    return "\n".join(out) + "\n"
