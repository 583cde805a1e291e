"""plot subcommand: learning curves from RunLog CSVs, Pareto panels from sweep CSVs."""
import logging
from pathlib import Path

from utils.helpers import perf_timer
from utils.plotting import plot_curves, plot_pareto
from utils.runlog import read_pareto, read_runlog

logger = logging.getLogger(__name__)

PLOT_KINDS = ("curve", "pareto")


def curve_group(path):
    """Seeds of one configuration share the directory above their seed_<s> folder."""
    parent = Path(path).resolve().parent
    return parent.parent.name if parent.name.startswith("seed_") else parent.name


def cmd_plot(kind, paths, out) -> int:
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}, expected one of {list(PLOT_KINDS)}")
    with perf_timer(f"plot {kind} ({len(paths)} files)"):
        if kind == "curve":
            groups = {}
            for path in paths:
                groups.setdefault(curve_group(path), []).append(read_runlog(path))
            plot_curves(groups, out)
        else:
            panels = {}
            for path in paths:
                panels.setdefault(Path(path).resolve().parent.name, []).extend(read_pareto(path))
            plot_pareto(panels, out)
    return 0


def _plot_handler(args):
    return cmd_plot(args.kind, args.csv, args.output)


def register(subparsers):
    parser = subparsers.add_parser("plot", help="render SVG learning curves or Pareto panels")
    parser.add_argument("kind", choices=PLOT_KINDS)
    parser.add_argument("csv", nargs="+", help="progress.csv files (curve) or pareto.csv files (pareto)")
    parser.add_argument("-o", "--output", required=True, help="SVG file to write")
    parser.set_defaults(func=_plot_handler)
