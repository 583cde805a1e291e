"""sweep subcommand: noise type x gSDE interval grid, aggregated into a Pareto CSV."""
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from commands.train import make_config_env, run_seed
from core.envs import horizon as env_horizon
from core.errors import ConfigError
from extensions import output_root, settings
from models import NOISE_TYPES, load_config, parse_config, serialize_config
from utils.helpers import perf_timer
from utils.metrics import RunSummary, aggregate_pareto
from utils.runlog import read_runlog, write_pareto

logger = logging.getLogger(__name__)

EPISODIC = "episodic"


def parse_interval(text):
    if str(text).strip().lower() == EPISODIC:
        return EPISODIC
    try:
        value = int(text)
    except ValueError:
        raise ConfigError("noise.gsde_interval", f"{text!r} is neither an integer nor 'episodic'") from None
    if value < 1:
        raise ConfigError("noise.gsde_interval", f"gsde interval must be >= 1, got {value}")
    return value


def sweep_cells(config, noise_types, intervals):
    """(label, interval, config) per grid cell, in noise-type order with gSDE intervals ascending."""
    if not noise_types:
        raise ConfigError("noise.type", "a sweep needs at least one noise type")
    horizon = env_horizon(make_config_env(config))
    cells = []
    for noise in noise_types:
        if noise not in NOISE_TYPES:
            raise ConfigError("noise.type", f"{noise!r} is not one of {list(NOISE_TYPES)}")
        if noise != "gsde":
            if intervals:
                logger.info("noise type %s has no sampling interval; running a single cell", noise)
            cells.append((noise, None, config.with_overrides(**{"noise.type": noise})))
            continue
        resolved = sorted({horizon if n == EPISODIC else n for n in (intervals or [None])},
                          key=lambda n: (n is None, n))
        for n in resolved:
            overrides = {"noise.type": "gsde"}
            if n is not None:
                overrides["noise.gsde_interval"] = n
            cell = config.with_overrides(**overrides)
            cells.append(("gsde", cell.noise.gsde_interval, cell))
    return cells


def summarize_run(path) -> RunSummary:
    """Final eval return and mean train-time continuity cost of one progress.csv."""
    log = read_runlog(path)
    final = log.last
    if final is None or not final.has_eval or not math.isfinite(final.eval_return):
        raise ValueError(f"{path} has no final evaluation")
    costs = [r.episode_continuity_cost for r in log.rows if r.episode_continuity_cost is not None]
    return RunSummary(final.eval_return, float(np.mean(costs)) if costs else float("nan"))


def _run_cell(config_text, seed, run_dir):
    # module-level so the process pool can pickle it
    return run_seed(parse_config(config_text), seed, run_dir)


def cmd_sweep(config, noise_types, intervals=(), jobs=None, root=None) -> int:
    root = Path(root or output_root(config.run.output_dir))
    sweep_dir = root / config.run_name
    cells = sweep_cells(config, noise_types, intervals)
    tasks = []
    for label, interval, cell in cells:
        cell_name = label if interval is None else f"{label}-{interval}"
        for seed in config.run.seeds:
            tasks.append(((label, interval), seed, sweep_dir / cell_name / f"seed_{seed}", cell))

    jobs = jobs or settings["JOBS"]
    statuses = {}
    with perf_timer(f"sweep {config.run_name} ({len(tasks)} runs, {jobs} jobs)"):
        if jobs <= 1:
            for key, seed, run_dir, cell in tasks:
                statuses[run_dir] = _safe_status(lambda: run_seed(cell, seed, run_dir), run_dir)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                futures = {
                    executor.submit(_run_cell, serialize_config(cell), seed, str(run_dir)): run_dir
                    for _, seed, run_dir, cell in tasks
                }
                for future in as_completed(futures):
                    statuses[futures[future]] = _safe_status(future.result, futures[future])

    groups, warnings = {}, []
    for key, seed, run_dir, _ in tasks:
        groups.setdefault(key, [])
        if statuses[run_dir] != 0:
            warnings.append(f"{run_dir.relative_to(root)} failed with status {statuses[run_dir]}")
            continue
        try:
            groups[key].append(summarize_run(run_dir / "progress.csv"))
        except (OSError, ValueError) as e:
            warnings.append(f"{run_dir.relative_to(root)}: {e}")
    empty = [key for key, runs in groups.items() if not runs]
    for label, interval in empty:
        warnings.append(f"{label} interval {interval} has no completed runs")
        del groups[(label, interval)]

    points = aggregate_pareto(groups) if groups else []
    sweep_dir.mkdir(parents=True, exist_ok=True)
    write_pareto(sweep_dir / "pareto.csv", points, warnings)
    for message in warnings:
        logger.warning("partial sweep: %s", message)
    return max(statuses.values(), default=0)


def _safe_status(fn, run_dir):
    try:
        return fn()
    except Exception as e:
        logger.error("run %s failed: %s", run_dir, e)
        return 1


def _sweep_handler(args):
    intervals = [parse_interval(n) for n in args.intervals]
    return cmd_sweep(load_config(args.config), args.noise, intervals, args.jobs, args.output)


def register(subparsers):
    parser = subparsers.add_parser("sweep", help="run a noise-type x sampling-interval grid and aggregate a Pareto CSV")
    parser.add_argument("config", help="base experiment YAML")
    parser.add_argument("--noise", nargs="+", default=["gsde"], help=f"noise types from {list(NOISE_TYPES)}")
    parser.add_argument("--intervals", nargs="*", default=[], help="gSDE sampling intervals; 'episodic' = horizon")
    parser.add_argument("--jobs", type=int, default=None, help="parallel processes (default: GSDE_JOBS)")
    parser.add_argument("-o", "--output", default=None, help="output root (default: GSDE_OUTPUT_ROOT or run.output_dir)")
    parser.set_defaults(func=_sweep_handler)
