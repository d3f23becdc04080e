import pytest

from export import PLOT_COLUMNS, emit_plot_data, read_plot_data
from utils.harness import RunReport
from utils.processor import Processor


def report(scheduler, scenario, convergence, be_series):
    mean = sum(be_series) / len(be_series) if be_series else 0.0
    return RunReport(scenario, scheduler, 0, convergence, 1.2, mean, be_series, {}, [], 0, 10)


def test_no_input_gives_an_empty_file(tmp_path):
    path = tmp_path / "plots" / "out.jsonl"
    assert emit_plot_data(str(path)) == 0
    assert path.read_text() == ""
    frame = read_plot_data(str(path))
    assert frame.empty
    assert list(frame.columns) == PLOT_COLUMNS


def test_reports_become_series(tmp_path):
    path = tmp_path / "out.jsonl"
    reports = [report("heuristic", "lc3be-00", None, [0.4, 0.6]), report("bo", "churn", 1500, [])]
    assert emit_plot_data(str(path), reports) == 3
    frame = read_plot_data(str(path))
    conv = frame[frame["series"] == "convergence"].set_index("scheduler")
    assert bool(conv.loc["heuristic", "failed"]) is True
    assert conv.loc["bo", "value"] == 1500
    assert frame["scheduler"].tolist()[:2] == ["bo", "heuristic"]
    tp = frame[frame["series"] == "be_throughput"]
    assert len(tp) == 1
    assert tp.iloc[0]["n_lc"] == 3
    assert tp.iloc[0]["value"] == pytest.approx(0.5)


def test_reward_rows(tmp_path):
    path = tmp_path / "out.jsonl"
    assert emit_plot_data(str(path), episode_rewards={"server1": [1.0, 3.0, 2.0]}, window=2) == 3
    frame = read_plot_data(str(path))
    assert frame["episode"].tolist() == [1, 2, 3]
    assert frame["value"].tolist() == [1.0, 3.0, 2.0]
    assert frame["moving_average"].tolist() == pytest.approx([1.0, 2.0, 2.5])
    assert set(frame["label"]) == {"server1"}


def test_grouping_and_lc_count():
    reports = [report("bo", "b", 1, []), report("bo", "a", 1, []), report("heuristic", "x", 1, [])]
    grouped = Processor.organize_reports(reports)
    assert list(grouped) == ["bo", "heuristic"]
    assert [r.scenario for r in grouped["bo"]] == ["a", "b"]
    assert Processor.lc_count(report("bo", "lc5be-03", 1, [])) == 5
    assert Processor.lc_count(report("bo", "churn", 1, [])) is None
