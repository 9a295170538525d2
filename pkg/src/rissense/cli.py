"""Command-line entry point: campaign, dp-map, link-budget and ccdf."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, config_from_mapping, dump_config, load_config
from .detection import DetectionConfig, dp_grid, dp_map, link_budget_sweep
from .simulation import VARIANTS, dp_pool, pooled_ccdf, run_runs, summarize_gospa

log = logging.getLogger("rissense")

GOSPA_HEADER = ["k"] + [f"{v}_{s}" for v in VARIANTS for s in ("mean", "std")]
CCDF_HEADER = ["threshold", "N", "D_random", "O_random", "D_direct", "O_direct"]
DP_MAP_HEADER = ["x", "y", "dp_D", "dp_O"]
LINK_HEADER = ["rho", "PL_R", "PL_D", "PL_N"]

# seeds of the single-shot subcommands, kept apart from the per-run streams
_DP_MAP_STREAM = {"random": 101, "direct": 102}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, header: list, columns: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration overrides")
    for f in dataclasses.fields(ScenarioConfig):
        if f.name in ("seed", "runs"):
            continue
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"set_{f.name}", metavar="VALUE",
                           type=_parse_value, default=None,
                           help=f"override {f.name} (JSON literal, e.g. 3, 0.5, true, [1, 2])")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rissense", description="RIS-aided monostatic sensing simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "campaign": "Monte Carlo mapping campaign (GOSPA time series, DP CCDF, detections)",
        "dp-map": "detection-probability maps for random and directional RIS profiles",
        "link-budget": "collinear path-loss sweeps for both geometries and RIS modes",
        "ccdf": "CCDF of per-path detection probabilities along the trajectory",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="TOML configuration file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--runs", type=int, help="number of Monte Carlo runs")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        _add_overrides(p)
    return parser


def resolve_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    data = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    for f in dataclasses.fields(ScenarioConfig):
        v = getattr(args, f"set_{f.name}", None)
        if v is not None:
            data[f.name] = v
    if args.seed is not None:
        data["seed"] = args.seed
    if args.runs is not None:
        data["runs"] = args.runs
    return config_from_mapping(data)


def cmd_campaign(cfg: ScenarioConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    results = run_runs(cfg)
    summary = summarize_gospa(results)
    ks = np.arange(cfg.n_epochs + 1)
    cols = [ks]
    for v in VARIANTS:
        cols += [summary[v][0], summary[v][1]]
    write_csv(out / "gospa_timeseries.csv", GOSPA_HEADER, cols)
    ccdf = pooled_ccdf([r.dp_pool for r in results])
    write_csv(out / "dp_ccdf.csv", CCDF_HEADER, [ccdf[k] for k in CCDF_HEADER])
    with open(out / "detections.jsonl", "w") as fh:
        for r in results:
            for rec in r.detections:
                fh.write(json.dumps(rec) + "\n")
    if cfg.dump_posteriors:
        with open(out / "posteriors.jsonl", "w") as fh:
            for r in results:
                for rec in r.posteriors:
                    fh.write(json.dumps(rec) + "\n")
    final = {v: float(summary[v][0][-1]) for v in VARIANTS}
    log.info("campaign: %d runs in %.1f s", cfg.runs, time.perf_counter() - t0)
    print("mean GOSPA at k = %d: " % cfg.n_epochs + ", ".join(f"{v} {g:.3f}" for v, g in final.items()))
    return final


def cmd_dp_map(cfg: ScenarioConfig, out: Path) -> dict:
    sc, ue = cfg.dp_map_scenario()
    pts = dp_grid(cfg.dp_map_x, cfg.dp_map_y, cfg.dp_map_step, z=cfg.dp_map_ue[2])
    det = DetectionConfig(cfg.p_fa)
    areas = {}
    for mode in ("random", "direct"):
        rng = np.random.default_rng([cfg.seed, _DP_MAP_STREAM[mode]])
        dp_d, dp_o = dp_map(sc, ue, pts, rng, mode, focus=cfg.dp_map_focus, cfg=det)
        write_csv(out / f"dp_map_{mode}.csv", DP_MAP_HEADER, [pts[:, 0], pts[:, 1], dp_d, dp_o])
        areas[mode] = float(np.nansum(dp_d > 0.5) * cfg.dp_map_step**2)
    print(", ".join(f"{m}: dp_D > 0.5 over {a:g} m^2" for m, a in areas.items()))
    return areas


def cmd_link_budget(cfg: ScenarioConfig, out: Path) -> None:
    rho = np.linspace(0.0, 1.0, cfg.link_points + 2)[1:-1]
    sc = cfg.scenario()
    for case in ("a", "b"):
        for mode in ("random", "direct"):
            lb = link_budget_sweep(case, rho, mode, cfg.link_distance, sc.ris_array.size,
                                   sc.wavelength, cfg.rcs)
            write_csv(out / f"link_budget_{case}_{mode}.csv", LINK_HEADER, [lb[k] for k in LINK_HEADER])


def cmd_ccdf(cfg: ScenarioConfig, out: Path) -> dict:
    ccdf = pooled_ccdf([dp_pool(cfg, r) for r in range(cfg.runs)])
    write_csv(out / "dp_ccdf.csv", CCDF_HEADER, [ccdf[k] for k in CCDF_HEADER])
    return ccdf


COMMANDS = {"campaign": cmd_campaign, "dp-map": cmd_dp_map, "link-budget": cmd_link_budget, "ccdf": cmd_ccdf}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = resolve_config(args)
        for msg in dict.fromkeys(str(w.message) for w in caught):
            print(f"warning: {msg}", file=sys.stderr)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.toml").write_text(dump_config(cfg))
    COMMANDS[args.command](cfg, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
