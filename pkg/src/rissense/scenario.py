"""Physical scenario constants (arrays, OFDM numerology, power budget)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import UpaConfig
from .geometry import SPEED_OF_LIGHT, Pose


def dbm_to_watt(dbm: float) -> float:
    return 10 ** ((dbm - 30) / 10)


@dataclass(frozen=True)
class Scenario:
    """Everything the signal model needs besides UE state and SP positions.

    Defaults reproduce the reference simulation setup: 50x50 RIS at lambda/4,
    4x4 UE at lambda/2, T = 40, 30 GHz carrier, 1600 subcarriers at 120 kHz,
    37 dBm transmit power and -166 dBm/Hz noise.
    """

    ris: Pose = field(default_factory=lambda: Pose.at([30.0, 0.0, 20.0]))
    ue_shape: tuple = (4, 4)
    ris_shape: tuple = (50, 50)
    carrier_frequency: float = 30e9
    n_transmissions: int = 40
    subcarrier_spacing: float = 120e3
    n_subcarriers: int = 1600
    tx_power_dbm: float = 37.0
    noise_psd_dbm_hz: float = -166.0
    rcs: float = 50.0
    q0: float = 0.285

    def __post_init__(self):
        if self.n_transmissions % 2:
            raise ValueError("number of transmissions must be even")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def ue_array(self) -> UpaConfig:
        return UpaConfig(self.ue_shape[0], self.ue_shape[1], self.wavelength / 2)

    @property
    def ris_array(self) -> UpaConfig:
        return UpaConfig(self.ris_shape[0], self.ris_shape[1], self.wavelength / 4)

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def energy_per_subcarrier(self) -> float:
        """E_s such that E_s * N_SC * df equals the transmit power."""
        return dbm_to_watt(self.tx_power_dbm) / (self.n_subcarriers * self.subcarrier_spacing)

    @property
    def noise_psd(self) -> float:
        return dbm_to_watt(self.noise_psd_dbm_hz)

    @property
    def ris_normal(self) -> np.ndarray:
        return self.ris.normal

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)
