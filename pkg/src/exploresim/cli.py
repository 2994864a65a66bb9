"""Experiment harness: config parsing, the ablation matrix, seeded
Monte-Carlo runs, and CSV/JSONL result emission.

Config files are flat key=value text with [section] headers. Seeds run
as independent worker tasks (EXPLORESIM_WORKERS controls the pool size);
all files for a seed are written by its worker, the summary by a single
collector after sorting, so outputs are byte-identical across worker
counts. Exit codes: 0 ok, 2 config error, 3 map I/O error, 4 seed
failure(s).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .entropy import EntropySpec
from .explore import (
    AblationModes,
    DecisionConfig,
    ExplorationState,
    bootstrap,
    explore_step,
)
from .grid_map import MapFormatError, OccupancyGrid, load_map, save_map
from .localization import PoseBelief
from .mapping import MapUpdateParams
from .sensor import SensorSpec
from .sim import NoiseSpec, SimWorld, metrics_uncertainty_reduction
from .worlds import get_world, sample_spawn

SCHEMA = "exploresim-csv-v1"

ABLATIONS = ("A1", "A2", "A3", "A4", "A5", "B1", "B2", "B3", "custom")


class ConfigError(ValueError):
    pass


def expand_ablation(tag: str) -> AblationModes:
    """Map an ablation tag to its estimator/decision mode triple."""
    table = {
        "A1": AblationModes("odom", "inverse", "odom", "inverse", False),
        "A2": AblationModes("decoupled", "inverse", "decoupled", "inverse", False),
        "A3": AblationModes("coupled", "inverse", "coupled", "inverse", False),
        "A4": AblationModes("decoupled", "tempered", "decoupled", "tempered", False),
        "A5": AblationModes("coupled", "tempered", "coupled", "tempered", False),
        "B1": AblationModes("coupled", "tempered", "odom", "inverse", True),
        "B2": AblationModes("coupled", "tempered", "odom", "tempered_nocov", True),
        "B3": AblationModes("coupled", "tempered", "coupled", "tempered", False),
        "custom": AblationModes(),
    }
    try:
        return table[tag]
    except KeyError:
        raise ConfigError(f"unknown ablation tag {tag!r}; have {ABLATIONS}") from None


@dataclass
class RunConfig:
    """One experiment: a map, a seed list, an ablation, and the knobs."""

    map_path: str = "builtin:corridor"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    ablation: str = "A5"
    entropy_family: str = "behavioral"
    alpha: float = 1.0
    gamma: float = 1.2
    n_max: int = 3
    pass_cell_weighting: str = "as_stored"
    sensor: SensorSpec = field(default_factory=lambda: SensorSpec(n_beams=60))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    max_steps: int = 2000
    out_dir: str = "runs/exp"
    snapshot_every: int = 10        # decisions between map snapshots
    heading_align: bool = False
    min_cluster_size: int = 3
    free_threshold: float = 0.35
    occ_threshold: float = 0.65
    h_max: int = 400
    rollout_scan_stride: int = 5
    inflation_radius: float = 0.3
    replan_interval: int = 50
    v_nom: float = 1.0
    spawn_clearance: float = 2.0

    def entropy_spec(self) -> EntropySpec:
        return EntropySpec(self.entropy_family, self.alpha)

    def decision_config(self) -> DecisionConfig:
        return DecisionConfig(
            entropy=self.entropy_spec(),
            gamma=self.gamma,
            min_cluster_size=self.min_cluster_size,
            free_threshold=self.free_threshold,
            occ_threshold=self.occ_threshold,
            H_max=self.h_max,
            rollout_scan_stride=self.rollout_scan_stride,
            inflation_radius=self.inflation_radius,
            map_params=MapUpdateParams(N_max=self.n_max,
                                       pass_cell_weighting=self.pass_cell_weighting),
            motion_noise=self.noise,
            v_nom=self.v_nom,
            replan_interval=self.replan_interval,
        )

    def load_truth(self) -> OccupancyGrid:
        if self.map_path.startswith("builtin:"):
            try:
                return get_world(self.map_path.split(":", 1)[1])
            except KeyError as e:
                raise ConfigError(str(e)) from e
        fmt = "ascii" if self.map_path.endswith((".txt", ".asc")) else "pgm"
        return load_map(self.map_path, format=fmt, resolution=0.2)


def parse_config(path: str) -> RunConfig:
    """Read a [section] key=value config file into a RunConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = RunConfig()
    try:
        if parser.has_section("run"):
            run = parser["run"]
            cfg.map_path = run.get("map", cfg.map_path)
            if "seeds" in run:
                cfg.seeds = tuple(int(s) for s in run["seeds"].replace(",", " ").split())
            cfg.ablation = run.get("ablation", cfg.ablation)
            cfg.max_steps = run.getint("max_steps", cfg.max_steps)
            cfg.out_dir = run.get("out_dir", cfg.out_dir)
            cfg.snapshot_every = run.getint("snapshot_every", cfg.snapshot_every)
            cfg.heading_align = run.getboolean("heading_align", cfg.heading_align)
            cfg.spawn_clearance = run.getfloat("spawn_clearance", cfg.spawn_clearance)
        if parser.has_section("entropy"):
            ent = parser["entropy"]
            cfg.entropy_family = ent.get("family", cfg.entropy_family)
            cfg.alpha = ent.getfloat("alpha", cfg.alpha)
        if parser.has_section("sensor"):
            sen = parser["sensor"]
            cfg.sensor = SensorSpec(
                n_beams=sen.getint("n_beams", cfg.sensor.n_beams),
                fov=sen.getfloat("fov", cfg.sensor.fov),
                z_max=sen.getfloat("z_max", cfg.sensor.z_max),
                R_o=sen.getfloat("r_o", cfg.sensor.R_o),
                R_u=sen.getfloat("r_u", cfg.sensor.R_u),
                beam_noise_std=sen.getfloat("beam_noise_std", cfg.sensor.beam_noise_std),
            )
        if parser.has_section("noise"):
            noi = parser["noise"]
            cfg.noise = NoiseSpec(
                trans_std=noi.getfloat("trans_std", cfg.noise.trans_std),
                rot_std=noi.getfloat("rot_std", cfg.noise.rot_std),
                heading_extra_std=noi.getfloat("heading_extra_std",
                                               cfg.noise.heading_extra_std),
            )
        if parser.has_section("decision"):
            dec = parser["decision"]
            cfg.gamma = dec.getfloat("gamma", cfg.gamma)
            cfg.n_max = dec.getint("n_max", cfg.n_max)
            cfg.pass_cell_weighting = dec.get("pass_cell_weighting",
                                              cfg.pass_cell_weighting)
            cfg.min_cluster_size = dec.getint("min_cluster_size", cfg.min_cluster_size)
            cfg.free_threshold = dec.getfloat("free_threshold", cfg.free_threshold)
            cfg.occ_threshold = dec.getfloat("occ_threshold", cfg.occ_threshold)
            cfg.h_max = dec.getint("h_max", cfg.h_max)
            cfg.rollout_scan_stride = dec.getint("rollout_scan_stride",
                                                 cfg.rollout_scan_stride)
            cfg.inflation_radius = dec.getfloat("inflation_radius", cfg.inflation_radius)
            cfg.replan_interval = dec.getint("replan_interval", cfg.replan_interval)
            cfg.v_nom = dec.getfloat("v_nom", cfg.v_nom)
    except (ValueError, configparser.Error) as e:
        raise ConfigError(f"{path}: {e}") from e
    if cfg.ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation tag {cfg.ablation!r}")
    return cfg


# --- per-seed run -----------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".10g")
    return str(v)


def run_seed(config: RunConfig, seed: int, seed_dir: Path) -> dict:
    """Run one seeded exploration to completion or max_steps; write the
    per-seed metrics.csv, decisions.jsonl, and snapshots; return the
    summary row."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    truth = config.load_truth()
    rng = np.random.default_rng(seed)
    spawn = sample_spawn(truth, rng, config.spawn_clearance)
    world = SimWorld(truth=truth, true_pose=np.array(spawn), rng=rng,
                     spec=config.sensor, noise=config.noise)
    modes = expand_ablation(config.ablation)
    cfg = config.decision_config()
    cfg = replace(cfg, dt=world.dt)

    belief = PoseBelief(np.array(spawn),
                        np.diag([0.05 ** 2, 0.05 ** 2, 0.02 ** 2]))
    grid = OccupancyGrid.unknown(truth.width, truth.height, truth.resolution,
                                 truth.origin)
    state = ExplorationState(belief=belief, grid=grid, modes=modes,
                             use_heading_align=config.heading_align)
    if modes.separate_decision_map:
        state.decision_grid = OccupancyGrid.unknown(truth.width, truth.height,
                                                    truth.resolution, truth.origin)

    snapshots = seed_dir / "snapshots"
    snapshots.mkdir(exist_ok=True)
    bootstrap(state, world, cfg)
    completed = False
    while world.step < config.max_steps:
        report = explore_step(state, cfg, config.sensor, world, config.max_steps)
        if report.status == "complete":
            completed = True
            break
        if state.decision_count % config.snapshot_every == 0:
            save_map(state.grid, str(snapshots / f"decision_{state.decision_count:04d}.pgm"))
        if report.steps_executed == 0 and report.status == "ok":
            continue
    save_map(state.grid, str(snapshots / "final.pgm"))

    metrics_path = seed_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as f:
        f.write(f"#schema={SCHEMA}\n")
        writer = csv.writer(f)
        cols = ["step", "rmse", "mae", "map_error", "map_entropy_nats",
                "trace_cov", "decisions"]
        writer.writerow(cols)
        for row in state.metrics_rows:
            writer.writerow([_fmt(row[c]) for c in cols])

    with open(seed_dir / "decisions.jsonl", "w") as f:
        for rec in state.decisions:
            f.write(json.dumps(rec, sort_keys=True) + "\n")

    last = state.metrics_rows[-1] if state.metrics_rows else {}
    reduction = metrics_uncertainty_reduction(state.entropy_series)
    return {
        "seed": seed,
        "steps": world.step,
        "decisions": state.decision_count,
        "completed": int(completed),
        "rmse": last.get("rmse", float("nan")),
        "mae": last.get("mae", float("nan")),
        "map_error": last.get("map_error", float("nan")),
        "map_entropy_nats": last.get("map_entropy_nats", float("nan")),
        "uncertainty_reduction_bits": reduction,
        "collisions": state.collisions,
    }


def _seed_task(args):
    config, seed, seed_dir = args
    try:
        return seed, run_seed(config, seed, Path(seed_dir)), None
    except Exception as e:  # per-seed failure is recorded, run continues
        return seed, None, f"{type(e).__name__}: {e}"


SUMMARY_COLS = ["seed", "steps", "decisions", "completed", "rmse", "mae",
                "map_error", "map_entropy_nats", "uncertainty_reduction_bits",
                "collisions"]


def run_experiment(config: RunConfig, out_dir: str | None = None) -> Path:
    """Run every seed of the experiment; returns the run directory.

    Writes per-seed subdirectories plus summary.csv with one row per seed
    and mean/std aggregate rows. Per-seed failures are recorded in
    failures.txt and do not abort the remaining seeds.
    """
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(config, seed, str(out / f"seed_{seed:04d}")) for seed in config.seeds]
    workers = int(os.environ.get("EXPLORESIM_WORKERS", "1"))
    results = []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_seed_task, tasks))
    else:
        results = [_seed_task(t) for t in tasks]

    results.sort(key=lambda r: r[0])
    rows = [r[1] for r in results if r[1] is not None]
    failures = [(r[0], r[2]) for r in results if r[2] is not None]

    with open(out / "summary.csv", "w", newline="") as f:
        f.write(f"#schema={SCHEMA}\n")
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in SUMMARY_COLS])
        if rows:
            for stat, fn in (("mean", np.mean), ("std", np.std)):
                agg = [stat] + [
                    _fmt(float(fn([row[c] for row in rows])))
                    for c in SUMMARY_COLS[1:]
                ]
                writer.writerow(agg)

    if failures:
        with open(out / "failures.txt", "w") as f:
            for seed, msg in failures:
                f.write(f"seed {seed}: {msg}\n")
    return out


def summarize(run_dir: Path) -> dict:
    """Aggregate stats (mean row) parsed back from summary.csv."""
    rows = read_csv(run_dir / "summary.csv")
    means = [r for r in rows if r[0] == "mean"]
    if not means:
        return {}
    return dict(zip(SUMMARY_COLS[1:], map(float, means[0][1:])))


def read_csv(path: Path) -> list[list[str]]:
    with open(path) as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.reader(lines))


# --- alpha sweep ------------------------------------------------------------


def _chosen_goals(run_dir: Path, seed: int) -> list[tuple]:
    path = run_dir / f"seed_{seed:04d}" / "decisions.jsonl"
    goals = []
    if path.exists():
        with open(path) as f:
            for line in f:
                rec = json.loads(line)
                goals.append(tuple(rec["candidates"][rec["chosen"]]["goal"]))
    return goals


def sweep_alpha(config: RunConfig, alphas: list[float],
                out_dir: str | None = None) -> Path:
    """Run the experiment once per alpha and emit a comparison report.

    sweep.csv carries per-alpha aggregate metrics plus the fraction of
    decisions whose chosen goal differs from the first alpha's run
    (matched by seed and decision index).
    """
    if len(alphas) < 2:
        raise ConfigError("sweep needs at least two alphas")
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for i, alpha in enumerate(alphas):
        sub = replace(config, alpha=alpha, out_dir=str(out / f"alpha_{i}_{alpha:g}"))
        runs.append((alpha, run_experiment(sub)))

    ref_goals = {seed: _chosen_goals(runs[0][1], seed) for seed in config.seeds}
    with open(out / "sweep.csv", "w", newline="") as f:
        f.write(f"#schema={SCHEMA}\n")
        writer = csv.writer(f)
        writer.writerow(["alpha", "family", "rmse", "mae", "map_error",
                         "uncertainty_reduction_bits", "decisions",
                         "choice_divergence_vs_first"])
        for alpha, run_dir in runs:
            agg = summarize(run_dir)
            diffs, total = 0, 0
            for seed in config.seeds:
                goals = _chosen_goals(run_dir, seed)
                ref = ref_goals[seed]
                n = min(len(goals), len(ref))
                total += n
                diffs += sum(1 for a, b in zip(goals[:n], ref[:n]) if a != b)
            divergence = diffs / total if total else 0.0
            writer.writerow([
                _fmt(float(alpha)), config.entropy_family,
                _fmt(agg.get("rmse", float("nan"))),
                _fmt(agg.get("mae", float("nan"))),
                _fmt(agg.get("map_error", float("nan"))),
                _fmt(agg.get("uncertainty_reduction_bits", float("nan"))),
                _fmt(agg.get("decisions", float("nan"))),
                _fmt(divergence),
            ])
    return out


# --- entry point ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exploresim",
                                     description="Active-exploration experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed-count", type=int, default=None)
    run.add_argument("--ablation", default=None, choices=ABLATIONS)
    run.add_argument("--alpha", type=float, default=None)
    run.add_argument("--out", default=None)

    sweep = sub.add_parser("sweep", help="run an alpha sweep")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--alphas", default="0.2,1.0,3.0")
    sweep.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        if getattr(args, "seed_count", None):
            config.seeds = tuple(range(args.seed_count))
        if getattr(args, "ablation", None):
            config.ablation = args.ablation
        if getattr(args, "alpha", None) is not None:
            config.alpha = args.alpha
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    try:
        config.load_truth()
    except (OSError, MapFormatError) as e:
        print(f"map error: {e}", file=sys.stderr)
        return 3

    if args.command == "run":
        out = run_experiment(config, args.out)
        print(f"run complete: {out}")
        return 4 if (out / "failures.txt").exists() else 0
    if args.command == "sweep":
        try:
            alphas = [float(a) for a in args.alphas.split(",")]
        except ValueError as e:
            print(f"config error: bad --alphas: {e}", file=sys.stderr)
            return 2
        out = sweep_alpha(config, alphas, args.out)
        print(f"sweep complete: {out}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
