import math

import numpy as np
import pytest

from core.errors import CsvSchemaError
from utils.metrics import EvalReport
from utils.plotting import curve_series, macro_average, normalize_panel, plot_curves, plot_pareto
from utils.runlog import RunLog


def eval_log(returns, start=1000):
    log = RunLog()
    for k, value in enumerate(returns):
        row = log.row_at(start * (k + 1), k + 1)
        row.attach_eval(EvalReport(value, 1.0, 5.0, episodes=2))
    return log


def pareto_row(label, interval, mean_return, mean_ctrain):
    return {"label": label, "interval": interval, "mean_return": mean_return, "se_return": 2.0,
            "mean_ctrain": mean_ctrain, "se_ctrain": 0.5, "n_seeds": 3}


PANELS = {
    "pendulum": [pareto_row("gaussian", None, -500.0, 30.0), pareto_row("gsde", 8, -200.0, 6.0)],
    "double_integrator": [pareto_row("gaussian", None, -50.0, 20.0), pareto_row("gsde", 8, -25.0, 4.0)],
}


class TestCurveSeries:
    def test_mean_and_error_per_timestep(self):
        steps, means, errors = curve_series([eval_log([-10.0, -4.0]), eval_log([-30.0, -6.0])])
        np.testing.assert_array_equal(steps, [1000, 2000])
        np.testing.assert_allclose(means, [-20.0, -5.0])
        np.testing.assert_allclose(errors, [10.0, 1.0])

    def test_diverged_and_train_only_rows_are_skipped(self):
        log = eval_log([-10.0])
        log.row_at(1500, 2).episode_return = -3.0
        log.row_at(2000, 3).mark_diverged()
        steps, _, _ = curve_series([log])
        np.testing.assert_array_equal(steps, [1000])


class TestNormalisation:
    def test_best_is_one(self):
        rows = normalize_panel(PANELS["pendulum"])
        assert [r["normalized"] for r in rows] == [pytest.approx(-0.5), 1.0]
        assert rows[0]["normalized_se"] == pytest.approx(0.01)

    def test_macro_average_pools_tasks(self):
        normalized = {task: normalize_panel(rows) for task, rows in PANELS.items()}
        macro = {r["label"]: r for r in macro_average(normalized)}
        assert macro["gsde-8"]["normalized"] == 1.0
        assert macro["gaussian"]["normalized"] == pytest.approx(-0.25)
        assert macro["gsde-8"]["mean_ctrain"] == 5.0
        assert math.isclose(macro["gaussian"]["se_ctrain"], 5.0)


class TestFigures:
    def test_curves_are_byte_identical(self, tmp_path):
        groups = {"gsde-8": [eval_log([-10.0, -4.0]), eval_log([-12.0, -3.0])], "gaussian": [eval_log([-30.0, -20.0])]}
        first, second = tmp_path / "a.svg", tmp_path / "b.svg"
        plot_curves(groups, first)
        plot_curves(groups, second)
        assert first.read_bytes() == second.read_bytes()
        text = first.read_text(encoding="utf-8")
        assert text.lstrip().startswith("<?xml") and "<svg" in text
        assert "gsde-8" in text

    def test_pareto_is_byte_identical(self, tmp_path):
        first, second = tmp_path / "a.svg", tmp_path / "b.svg"
        plot_pareto(PANELS, first)
        plot_pareto(PANELS, second)
        assert first.read_bytes() == second.read_bytes()
        assert "macro average over tasks" in first.read_text(encoding="utf-8")

    def test_single_task_has_no_macro_panel(self, tmp_path):
        path = tmp_path / "p.svg"
        plot_pareto({"pendulum": PANELS["pendulum"]}, path)
        assert "macro average" not in path.read_text(encoding="utf-8")

    def test_nothing_to_plot(self, tmp_path):
        with pytest.raises(CsvSchemaError):
            plot_curves({"gsde-8": [RunLog()]}, tmp_path / "a.svg")
        with pytest.raises(CsvSchemaError):
            plot_pareto({"pendulum": []}, tmp_path / "b.svg")
