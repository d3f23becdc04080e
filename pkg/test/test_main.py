import json

import pytest

from main import main
from model import RunRecord, TrainingRecord, add_records, init_db, list_runs, list_trainings

SCENARIO = """
name: tiny
duration_ms: 2000
services:
  - id: web
    preset: xapian
    load_schedule: [[0, 0.3]]
  - id: batch
    kind: BE
    preset: bodytrack
"""


@pytest.fixture
def workspace(tmp_path):
    env = tmp_path / "test.env"
    env.write_text(
        f"RUNS_DB=sqlite:///{tmp_path / 'runs.db'}\n"
        f"RESULTS_DIR={tmp_path / 'results'}\n"
        f"MODEL_DIR={tmp_path / 'models'}\n"
        "LOG_LEVEL=WARNING\n"
    )
    scenario = tmp_path / "tiny.yaml"
    scenario.write_text(SCENARIO)
    return tmp_path, str(env), str(scenario)


def test_run_is_stored_and_reported(workspace, capsys):
    root, env, scenario = workspace
    assert main(["--env", env, "run", scenario, "--scheduler", "heuristic"]) == 0
    assert "heuristic on tiny" in capsys.readouterr().out
    assert (root / "results" / "tiny" / "heuristic-seed0" / "decisions.jsonl").exists()

    runs = list_runs(init_db(f"sqlite:///{root / 'runs.db'}"))
    assert [(r.scenario, r.scheduler) for r in runs] == [("tiny", "heuristic")]
    assert json.loads(runs[0].report)["ticks"] == 20

    assert main(["--env", env, "report"]) == 0
    assert "heuristic" in capsys.readouterr().out
    out = root / "plots.jsonl"
    assert main(["--env", env, "emit-plots", "--out", str(out)]) == 0
    assert len(out.read_text().strip().splitlines()) == 2


def test_exit_codes(workspace, capsys):
    root, env, scenario = workspace
    assert main(["--env", env, "run", str(root / "absent.yaml")]) == 2
    assert main(["--env", env, "run", scenario]) == 5
    err = capsys.readouterr().err
    assert "python main.py train a" in err
    assert main(["--env", env, "train", "c"]) == 5
    assert main(["--env", env, "train", "a", "--platform", "server7"]) == 2

    bad_env = root / "bad.env"
    bad_env.write_text("TICK_MS=fast\n")
    assert main(["--env", str(bad_env), "report"]) == 2


def test_records_round_trip(tmp_path):
    engine = init_db(f"sqlite:///{tmp_path / 'db.sqlite'}")
    add_records(
        engine,
        [
            RunRecord(scenario="a", scheduler="bo", suite="lc3"),
            RunRecord(scenario="b", scheduler="osml+"),
            TrainingRecord(model="C", platform="server1", data=json.dumps({"episode_rewards": [1.0]})),
        ],
    )
    assert [r.scenario for r in list_runs(engine)] == ["a", "b"]
    assert [r.scenario for r in list_runs(engine, suite="lc3")] == ["a"]
    assert list_runs(engine, scenario="c") == []
    assert [t.model for t in list_trainings(engine, "C")] == ["C"]
    assert list_trainings(engine, "A") == []
