"""Per-epoch quantities shared by detection, measurement and the filters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import RisProfileSchedule, steering_vector
from .geometry import ChannelParams, UEState, channel_params
from .scenario import Scenario
from .separation import Combiner, PrecoderPlan, build_combiner, build_precoder_plan


@dataclass
class EpochSetup:
    """UE state plus the transmit/receive configuration of one epoch."""

    scenario: Scenario
    ue: UEState
    params0: ChannelParams      # UE-RIS-UE path only
    a_u0: np.ndarray            # a_U(theta_0)
    a_r0: np.ndarray            # a_R(phi_0)
    combiner: Combiner
    plan: PrecoderPlan
    schedule: RisProfileSchedule

    @property
    def theta_0(self) -> np.ndarray:
        return self.params0.aod_ue[0]

    @property
    def phi_0(self) -> np.ndarray:
        return self.params0.aod_ris[0]

    @property
    def precoders(self) -> np.ndarray:
        """Per-pair precoders (T/2, N_U)."""
        return self.plan.base()

    @property
    def tx_gain_ris(self) -> np.ndarray:
        """``a_U(theta_0)^T f_t`` per pair, the beam gain towards the RIS."""
        return self.precoders @ self.a_u0

    def nu(self, aod_ris) -> np.ndarray:
        """RIS responses for every pair and path, shape (T/2, L)."""
        sc = self.scenario
        a_l = steering_vector(sc.ris_array, np.atleast_2d(aod_ris), sc.wavelength)
        return self.schedule.base @ (a_l * self.a_r0).T

    def params(self, sps) -> ChannelParams:
        return channel_params(self.ue, self.scenario.ris, sps)


def make_epoch(scenario: Scenario, ue: UEState, rng, ris_mode: str = "random",
               focus=None, t1_mode: str = "directional", split_ratio: float = 1.0,
               schedule: RisProfileSchedule | None = None) -> EpochSetup:
    """Draw precoders and RIS profiles for one epoch.

    ``ris_mode`` is ``"random"`` (i.i.d. uniform phases per pair) or
    ``"direct"`` (phase-conjugate towards the point ``focus``).
    """
    p0 = channel_params(ue, scenario.ris)
    lam = scenario.wavelength
    a_u0 = steering_vector(scenario.ue_array, p0.aod_ue[0], lam)
    a_r0 = steering_vector(scenario.ris_array, p0.aod_ris[0], lam)
    plan = build_precoder_plan(p0.aod_ue[0], scenario.ue_array, scenario.n_transmissions, lam,
                               split_ratio=split_ratio, rng=rng, t1_mode=t1_mode)
    n_pairs = scenario.n_transmissions // 2
    if schedule is None:
        if ris_mode == "random":
            schedule = RisProfileSchedule.random(n_pairs, scenario.ris_array.size, rng)
        elif ris_mode == "direct":
            if focus is None:
                raise ValueError("directional RIS profile needs a focus point")
            phi_t = channel_params(ue, scenario.ris, focus).aod_ris[1]
            schedule = RisProfileSchedule.directional(n_pairs, p0.aod_ris[0], phi_t,
                                                      scenario.ris_array, lam)
        else:
            raise ValueError(f"unknown RIS profile mode {ris_mode!r}")
    return EpochSetup(scenario=scenario, ue=ue, params0=p0, a_u0=a_u0, a_r0=a_r0,
                      combiner=build_combiner(a_u0), plan=plan, schedule=schedule)

