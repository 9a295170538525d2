"""Monte Carlo campaign: trajectory, measurements, filters, fusion and GOSPA."""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import path_gains, synthesize_rx
from .config import ScenarioConfig
from .detection import DetectionConfig, empirical_ccdf, epoch_dps, path_detection_stats
from .epoch import EpochSetup, make_epoch
from .geometry import DegenerateGeometryError, trajectory
from .measurement import (ClutterModel, SingularFIMError, generate_measurements,
                          clutter_bounds, merge_double_bounce, reference_covariances)
from .metrics import GospaConfig, gospa
from .separation import PrecoderPlan, separate
from .tracking.fusion import gci_fuse
from .tracking.pmb import PMBConfig, PMBFilter

VARIANTS = ("ris", "nris", "fusion", "ris_random_precoders")
CCDF_COLUMNS = ("N", "D_random", "O_random", "D_direct", "O_direct")
WORKERS_ENV = "RISSENSE_WORKERS"

# independent random streams of one run
_SPS, _EPOCH, _MEAS, _RAND_T1, _MEAS_RAND, _CCDF, _SIGNAL = range(7)


def run_rng(seed: int, run: int, stream: int) -> np.random.Generator:
    """Counter-based generator: identical for a given (seed, run, stream)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(run, stream)))


@dataclass
class RunResult:
    run: int
    gospa: dict                       # variant -> (K + 1,) array
    sps: np.ndarray
    detections: list = field(default_factory=list)
    posteriors: list = field(default_factory=list)
    dp_pool: dict = field(default_factory=dict)
    dropped: int = 0


def draw_sps(cfg: ScenarioConfig, rng) -> np.ndarray:
    return rng.uniform(cfg.sp_box_low, cfg.sp_box_high, size=(cfg.n_sps, 3))


def safe_dps(setup: EpochSetup, points, det: DetectionConfig) -> dict:
    """Branch detection probabilities at arbitrary positions (degenerate points get 0)."""
    points = np.atleast_2d(points)
    out = {b: np.zeros(len(points)) for b in ("D", "O", "N")}
    if not len(points):
        return out
    try:
        st = path_detection_stats(setup, points, det)
        return {b: st[b].dp for b in out}
    except DegenerateGeometryError:
        pass
    for k, p in enumerate(points):
        try:
            st = path_detection_stats(setup, p, det)
        except DegenerateGeometryError:
            continue
        for b in out:
            out[b][k] = st[b].dp[0]
    return out


def _pmb_config(cfg: ScenarioConfig) -> PMBConfig:
    return PMBConfig(p_survival=cfg.p_survival, birth_mean=cfg.birth_mean, initial_mean=cfg.initial_mean,
                     p_detect_intensity=cfg.p_detect_intensity)


def _clutter(setup: EpochSetup, cfg: ScenarioConfig):
    models, covs = {}, {}
    for br in ("D", "O", "N"):
        lo, hi = clutter_bounds(setup, cfg.sp_box_low, cfg.sp_box_high, br)
        models[br] = ClutterModel(cfg.clutter_mean, lo, hi)
    center = 0.5 * (np.asarray(cfg.sp_box_low) + np.asarray(cfg.sp_box_high))
    try:
        covs = reference_covariances(setup, center)
    except (SingularFIMError, np.linalg.LinAlgError):
        # fall back to a tenth of the box extent as standard deviation
        covs = {br: np.diag(((m.high - m.low) / 10) ** 2) for br, m in models.items()}
    return models, covs


class _Pipeline:
    """R and N filters fed by one precoder configuration."""

    def __init__(self, cfg: ScenarioConfig, with_n: bool):
        pc = _pmb_config(cfg)
        self.r = PMBFilter("R", cfg.sp_box_low, cfg.sp_box_high, pc)
        self.n = PMBFilter("N", cfg.sp_box_low, cfg.sp_box_high, pc) if with_n else None

    def step(self, cfg, setup, meas, clutter, det):
        ris = setup.scenario.ris
        z_r = merge_double_bounce(meas.sets["D"], meas.sets["O"], cfg.merge_threshold)

        def dp_r(x):
            d = safe_dps(setup, x, det)
            return np.maximum(d["D"], d["O"])

        self.r.predict()
        c_r = (clutter["D"].mean + clutter["O"].mean) / clutter["D"].volume
        self.r.update(setup.ue, ris, z_r, dp_r, c_r)
        if self.n is not None:
            self.n.predict()
            self.n.update(setup.ue, ris, meas.sets["N"], lambda x: safe_dps(setup, x, det)["N"],
                          clutter["N"].intensity)
        return z_r


def run_single(cfg: ScenarioConfig, run: int) -> RunResult:
    """One Monte Carlo run of every filter variant over the trajectory."""
    sc = cfg.scenario()
    det = DetectionConfig(cfg.p_fa)
    gcfg = GospaConfig(cfg.gospa_p, cfg.gospa_c, cfg.gospa_alpha)
    sps = draw_sps(cfg, run_rng(cfg.seed, run, _SPS))
    rng_epoch = run_rng(cfg.seed, run, _EPOCH)
    rng_meas = run_rng(cfg.seed, run, _MEAS)
    rng_t1 = run_rng(cfg.seed, run, _RAND_T1)
    rng_meas_rand = run_rng(cfg.seed, run, _MEAS_RAND)
    rng_sig = run_rng(cfg.seed, run, _SIGNAL)

    states = trajectory(cfg.initial_ue(), cfg.turn_rate, cfg.dt, cfg.n_epochs)
    main = _Pipeline(cfg, with_n=True)
    rand = _Pipeline(cfg, with_n=False)
    res = RunResult(run=run, gospa={v: np.empty(cfg.n_epochs + 1) for v in VARIANTS}, sps=sps)
    empty = gospa([], sps, gcfg).total
    for v in VARIANTS:
        res.gospa[v][0] = empty
    w_r = cfg.fusion_weight_ris

    for k in range(1, cfg.n_epochs + 1):
        ue = states[k]
        setup = make_epoch(sc, ue, rng_epoch, ris_mode=cfg.ris_profile_mode,
                           focus=sps.mean(axis=0), split_ratio=cfg.split_ratio)
        gains = path_gains(sc, ue, sps, rng_epoch)
        # same RIS profiles and T2 precoders, random T1 precoders
        rand_t1 = rng_t1.standard_normal(setup.plan.t1.shape) + 1j * rng_t1.standard_normal(setup.plan.t1.shape)
        rand_t1 /= np.linalg.norm(rand_t1, axis=1, keepdims=True)
        setup_rand = dataclasses.replace(setup, plan=PrecoderPlan(rand_t1, setup.plan.t2))

        if cfg.synthesize_signals:
            rx = synthesize_rx(sc, ue, sps, gains, setup.schedule, setup.plan.expanded(), rng_sig)
            separate(rx, setup.plan, setup.combiner)

        clutter, clutter_cov = _clutter(setup, cfg)
        st = path_detection_stats(setup, sps, det)
        dps = {b: st[b].dp for b in ("D", "O", "N")}
        meas = generate_measurements(setup, sps, gains, dps, rng_meas, clutter, clutter_cov=clutter_cov)
        z_r = main.step(cfg, setup, meas, clutter, det)

        st_rand = path_detection_stats(setup_rand, sps, det)
        dps_rand = {b: st_rand[b].dp for b in ("D", "O", "N")}
        clutter_rand = {b: clutter[b] for b in ("D", "O")}
        meas_rand = generate_measurements(setup_rand, sps, gains, dps_rand, rng_meas_rand, clutter_rand,
                                          clutter_cov=clutter_cov)
        meas_rand.sets["N"] = []
        rand.step(cfg, setup_rand, meas_rand, clutter, det)
        res.dropped += meas.dropped + meas_rand.dropped

        fused = gci_fuse(main.r.posterior, main.n.posterior, w_r, 1.0 - w_r)
        thr, gate = cfg.estimate_threshold, cfg.estimate_dedup_gate
        for v, post in (("ris", main.r.posterior), ("nris", main.n.posterior), ("fusion", fused),
                        ("ris_random_precoders", rand.r.posterior)):
            res.gospa[v][k] = gospa(post.estimates(thr, gate), sps, gcfg).total

        res.detections.append({
            "run": run, "epoch": k, "ue": ue.as_vector().tolist(),
            "dp": {b: v.tolist() for b, v in dps.items()},
            "sets": {**{b: [m.to_dict() for m in meas.sets[b]] for b in ("D", "O", "N")},
                     "R": [m.to_dict() for m in z_r]},
        })
        if cfg.dump_posteriors:
            res.posteriors.append({"run": run, "epoch": k, "ris": main.r.posterior.to_dict(),
                                   "nris": main.n.posterior.to_dict(), "fusion": fused.to_dict(),
                                   "ris_random_precoders": rand.r.posterior.to_dict()})

    res.dp_pool = dp_pool(cfg, run, sps, states[1:])
    return res


def dp_pool(cfg: ScenarioConfig, run: int, sps=None, states=None) -> dict:
    """Per-path detection probabilities of one run's SPs along the trajectory.

    Random and directional RIS profiles are compared on the same epochs,
    drawn from a stream of their own.
    """
    sc = cfg.scenario()
    det = DetectionConfig(cfg.p_fa)
    if sps is None:
        sps = draw_sps(cfg, run_rng(cfg.seed, run, _SPS))
    if states is None:
        states = trajectory(cfg.initial_ue(), cfg.turn_rate, cfg.dt, cfg.n_epochs)[1:]
    rng = run_rng(cfg.seed, run, _CCDF)
    pools = {k: [] for k in CCDF_COLUMNS}
    for ue in states:
        try:
            setup = make_epoch(sc, ue, rng, ris_mode="random", split_ratio=cfg.split_ratio)
            d, o, n = epoch_dps(setup, sps, "random", det)
            dd, od, _ = epoch_dps(setup, sps, "direct", det)
        except DegenerateGeometryError:
            continue
        for key, val in zip(CCDF_COLUMNS, (n, d, o, dd, od)):
            pools[key].append(val)
    return {k: np.concatenate(v) if v else np.zeros(0) for k, v in pools.items()}


def pooled_ccdf(pools: list, thresholds=None) -> dict:
    """CCDF columns over the union of several runs' pools."""
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, 101)
    out = {"threshold": np.asarray(thresholds, dtype=float)}
    for k in CCDF_COLUMNS:
        out[k] = empirical_ccdf(np.concatenate([p[k] for p in pools]), thresholds)
    return out


def _run_star(args):
    return run_single(*args)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_runs(cfg: ScenarioConfig, workers: int | None = None) -> list[RunResult]:
    """All runs, in run order regardless of the worker count."""
    workers = worker_count() if workers is None else workers
    jobs = [(cfg, r) for r in range(cfg.runs)]
    if workers <= 1 or cfg.runs == 1:
        return [run_single(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_star, jobs))


def summarize_gospa(results: list[RunResult]) -> dict:
    """Mean and standard deviation per epoch and variant."""
    out = {}
    for v in VARIANTS:
        arr = np.array([r.gospa[v] for r in results])
        out[v] = (arr.mean(axis=0), arr.std(axis=0))
    return out
