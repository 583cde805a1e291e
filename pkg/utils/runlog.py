"""RunLog and Pareto CSV files.

Both formats are byte-stable: UTF-8, LF line endings, '.' decimals written with repr() so a
value reads back to the identical float.
"""
import csv
import math
import numbers
from dataclasses import astuple, dataclass
from typing import List, Optional

from core.errors import CsvSchemaError

RUNLOG_COLUMNS = (
    "timestep",
    "episode",
    "episode_return",
    "episode_continuity_cost",
    "eval_return",
    "eval_std_error",
    "eval_continuity_cost",
    "wall_clock_seconds",
)

PARETO_COLUMNS = ("label", "interval", "mean_return", "se_return", "mean_ctrain", "se_ctrain", "n_seeds")
COLUMN_KINDS = (int, int) + (float,) * 6


@dataclass
class RunLogRow:
    timestep: int
    episode: Optional[int] = None
    episode_return: Optional[float] = None
    episode_continuity_cost: Optional[float] = None
    eval_return: Optional[float] = None
    eval_std_error: Optional[float] = None
    eval_continuity_cost: Optional[float] = None
    wall_clock_seconds: Optional[float] = None

    @property
    def has_eval(self):
        return self.eval_return is not None

    def attach_eval(self, report):
        self.eval_return = report.mean_return
        self.eval_std_error = report.std_error
        self.eval_continuity_cost = report.mean_continuity_cost

    def mark_diverged(self):
        self.eval_return = self.eval_std_error = self.eval_continuity_cost = math.nan


def format_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        raise TypeError("booleans have no CSV cell format")
    if isinstance(value, numbers.Integral):
        return str(value)
    return repr(float(value))


def _parse_cell(text, kind, column, line):
    if text == "":
        return None
    try:
        return kind(text)
    except ValueError:
        raise CsvSchemaError(f"line {line}: column {column!r} holds {text!r}") from None


class RunLog:
    """Rows with strictly increasing timesteps, written once at the end of a run."""

    def __init__(self):
        self.rows: List[RunLogRow] = []

    def __len__(self):
        return len(self.rows)

    @property
    def last(self):
        return self.rows[-1] if self.rows else None

    def append(self, row: RunLogRow):
        if self.rows and row.timestep <= self.rows[-1].timestep:
            raise ValueError(f"timestep {row.timestep} does not follow {self.rows[-1].timestep}")
        self.rows.append(row)

    def row_at(self, timestep, episode=None):
        """The row for ``timestep``, appending an empty one when the last row is older."""
        if self.last is not None and self.last.timestep == timestep:
            return self.last
        self.append(RunLogRow(timestep, episode))
        return self.last

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(RUNLOG_COLUMNS)
            for row in self.rows:
                writer.writerow([format_cell(v) for v in astuple(row)])


def read_runlog(path) -> RunLog:
    """Parse a RunLog CSV; any header drift or malformed cell raises CsvSchemaError."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != RUNLOG_COLUMNS:
            raise CsvSchemaError(f"{path}: header {header} does not match {list(RUNLOG_COLUMNS)}")
        log = RunLog()
        for line, cells in enumerate(reader, start=2):
            if len(cells) != len(RUNLOG_COLUMNS):
                raise CsvSchemaError(f"{path}: line {line} has {len(cells)} cells, expected {len(RUNLOG_COLUMNS)}")
            values = [_parse_cell(c, k, name, line) for c, k, name in zip(cells, COLUMN_KINDS, RUNLOG_COLUMNS)]
            if values[0] is None:
                raise CsvSchemaError(f"{path}: line {line} has no timestep")
            try:
                log.append(RunLogRow(*values))
            except ValueError as e:
                raise CsvSchemaError(f"{path}: line {line}: {e}") from None
    return log


def write_pareto(path, points, warnings=()):
    """One row per ParetoPoint; each warning becomes a trailing row with only the label filled."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PARETO_COLUMNS)
        for p in points:
            writer.writerow([
                p.label, format_cell(p.interval), format_cell(p.mean_return), format_cell(p.se_return),
                format_cell(p.mean_ctrain), format_cell(p.se_ctrain), format_cell(p.n_seeds),
            ])
        for message in warnings:
            writer.writerow([f"WARNING: {message}", "", "", "", "", "", ""])


def read_pareto(path):
    """Rows of a Pareto CSV as dicts, warning rows skipped."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != PARETO_COLUMNS:
            raise CsvSchemaError(f"{path}: header {header} does not match {list(PARETO_COLUMNS)}")
        rows = []
        for line, cells in enumerate(reader, start=2):
            if len(cells) != len(PARETO_COLUMNS):
                raise CsvSchemaError(f"{path}: line {line} has {len(cells)} cells, expected {len(PARETO_COLUMNS)}")
            if cells[0].startswith("WARNING:"):
                continue
            row = {"label": cells[0], "interval": _parse_cell(cells[1], int, "interval", line)}
            for name, text in zip(PARETO_COLUMNS[2:6], cells[2:6]):
                row[name] = _parse_cell(text, float, name, line)
                if row[name] is None:
                    raise CsvSchemaError(f"{path}: line {line} is missing {name}")
            row["n_seeds"] = _parse_cell(cells[6], int, "n_seeds", line)
            rows.append(row)
    return rows
