import os

import pytest
import torch

from model.schemas import ScenarioFile, ServiceEntry
from utils.agent import ShepherdAgent
from utils.config import Settings
from utils.decision_log import DecisionLog, read_jsonl
from utils.errors import ConfigError, MissingModelError
from utils.features import NormalizationSpec
from utils.harness import (
    ModelBundle,
    RunReport,
    build_scenario,
    churn_scenario,
    compute_metrics,
    fits,
    infeasible_scenario,
    load_report,
    load_scenario,
    make_scheduler,
    run_scenario,
    save_scenario,
    summarize,
    three_lc_suite,
)
from utils.networks import flat_parameters
from utils.predictor import OaaPredictor, QosPredictor
from utils.simenv import Allocation, Grant, SimServer
from utils.surfaces import be_service

SCENARIO_YAML = """
name: pair
platform: server1
seed: 3
duration_ms: 2000
services:
  - id: web
    preset: xapian
    load_schedule: [[0, 0.3], [1000, 0.5]]
  - id: batch
    kind: BE
    preset: bodytrack
"""


def lc(t, load, met, sid="a"):
    return {"timestamp_ms": t, "service_id": sid, "kind": "LC", "load": load, "qos_met": met, "be_throughput": 0.0}


def be(t, throughput):
    return {"timestamp_ms": t, "service_id": "be0", "kind": "BE", "load": 0.0, "qos_met": True, "be_throughput": throughput}


def small_doc(name="small", duration_ms=3000):
    return ScenarioFile(
        name=name,
        seed=2,
        duration_ms=duration_ms,
        services=[
            ServiceEntry(id="a", preset="xapian", load_schedule=[(0, 0.3)]),
            ServiceEntry(id="b", preset="login", load_schedule=[(0, 0.3)], arrival_ms=1000),
            ServiceEntry(id="be0", kind="BE", preset="bodytrack"),
        ],
    )


def test_load_scenario(tmp_path):
    path = tmp_path / "pair.yaml"
    path.write_text(SCENARIO_YAML)
    scenario = load_scenario(str(path))
    assert scenario.name == "pair" and scenario.seed == 3
    web, batch = scenario.services
    assert web.load_schedule == ((0, 0.3), (1000, 0.5))
    assert web.qos_target_ms > 0
    assert batch.kind.value == "BE"


@pytest.mark.parametrize(
    "text",
    [
        SCENARIO_YAML.replace("name: pair", "name: pair\nschema_version: 2"),
        SCENARIO_YAML.replace("preset: xapian", "preset: nosuch"),
        SCENARIO_YAML.replace("platform: server1", "platform: server9"),
        SCENARIO_YAML.replace("id: batch", "id: web"),
        "name: empty\n",
        "services: [",
    ],
)
def test_bad_scenarios(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_scenario(str(path))


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(str(tmp_path / "absent.yaml"))


def test_saved_scenario_loads_back(tmp_path):
    path = save_scenario(str(tmp_path / "churn.yaml"), churn_scenario(duration_ms=30_000))
    scenario = load_scenario(path)
    assert [s.service_id for s in scenario.services] == ["img-dnn", "xapian", "bodytrack", "login"]
    assert scenario.services[3].arrival_ms == 20_000
    assert scenario.services[0].load_schedule == ((0, 0.3), (10_000, 0.6))


def test_convergence_is_the_start_of_the_first_sustained_window():
    settings = Settings(tick_ms=100, sustain_ms=1000)
    telemetry = [lc(t, 0.4, t >= 300) for t in range(100, 3100, 100)]
    metrics = compute_metrics([], telemetry, settings, 3000)
    assert metrics["convergence_time_ms"] == 300
    assert metrics["ticks"] == 30
    assert metrics["partial"] is False
    assert metrics["emu"] == pytest.approx(0.4)

    late = compute_metrics([], telemetry, Settings(tick_ms=100, sustain_ms=1000, cutoff_ms=200), 3000)
    assert late["convergence_time_ms"] is None


def test_window_shorter_than_sustain_does_not_count():
    settings = Settings(tick_ms=100, sustain_ms=1000)
    telemetry = [lc(t, 0.4, t < 800) for t in range(100, 2100, 100)]
    assert compute_metrics([], telemetry, settings, 2000)["convergence_time_ms"] is None


def test_recovery_after_a_load_change():
    settings = Settings(tick_ms=100, sustain_ms=1000)
    telemetry = [lc(t, 0.3 if t < 500 else 0.6, not 500 <= t < 800) for t in range(100, 3100, 100)]
    metrics = compute_metrics([], telemetry, settings, 3000)
    assert metrics["recovery_times_ms"] == [300]
    assert metrics["convergence_time_ms"] == 800
    assert metrics["emu"] == pytest.approx(0.6)


def test_be_throughput_and_partial_runs(server):
    settings = Settings(tick_ms=100)
    telemetry = [rec for t in range(100, 600, 100) for rec in (lc(t, 0.5, True), be(t, 0.5 if t < 300 else 1.0))]
    metrics = compute_metrics([], telemetry, settings, 1000)
    assert metrics["be_series"] == [0.5, 0.5, 1.0, 1.0, 1.0]
    assert metrics["be_throughput"] == pytest.approx(0.8)
    assert metrics["partial"] is True

    env = SimServer(server, [be_service("be0", "bodytrack")])
    env.install(Allocation({}, server.full_grant, ("be0",)))
    solo = compute_metrics([], env.step(100).to_records(), settings, 100)
    assert solo["be_throughput"] == pytest.approx(1.0)
    env.install(Allocation({}, Grant(), ("be0",)))
    starved = compute_metrics([], env.step(100).to_records(), settings, 200)
    assert starved["be_throughput"] == 0.0


def test_action_counts():
    decisions = [
        {"algorithm": "heuristic", "action": "cores_up"},
        {"algorithm": "heuristic", "action": "cores_up"},
        {"algorithm": "heuristic", "action": "ways_up"},
    ]
    counts = compute_metrics(decisions, [], Settings(), 0)["action_counts"]
    assert counts == {"heuristic:cores_up": 2, "heuristic:ways_up": 1}


def test_heuristic_run_writes_logs_and_replays(tmp_path):
    settings = Settings(results_dir=str(tmp_path))
    scenario = build_scenario(small_doc())
    out = tmp_path / "run"
    report = run_scenario(scenario, "heuristic", settings, out_dir=str(out))
    assert report.ticks == 30 and not report.partial
    files = {name: (out / name).read_bytes() for name in ("decisions.jsonl", "telemetry.jsonl", "report.json")}
    assert read_jsonl(str(out / "decisions.jsonl"))[0]["scheduler"] == "heuristic"
    assert load_report(str(out / "report.json")) == report

    again = run_scenario(scenario, "heuristic", settings, out_dir=str(out))
    assert again == report
    for name, data in files.items():
        assert (out / name).read_bytes() == data


def test_bo_run_completes(tmp_path):
    settings = Settings(bo_interval_ms=200, bo_max_samples=4, bo_candidates=32)
    report = run_scenario(build_scenario(small_doc()), "bo", settings, out_dir=str(tmp_path))
    assert report.ticks == 30
    assert any(key.startswith("bo:") for key in report.action_counts)


def test_models_must_exist(server, settings, tmp_path):
    with pytest.raises(MissingModelError, match="python main.py train a"):
        ModelBundle.load(str(tmp_path), server, settings)
    env = SimServer(server, [])
    with pytest.raises(MissingModelError):
        make_scheduler("osml+", env, settings, DecisionLog("osml+"))
    with pytest.raises(ConfigError):
        make_scheduler("random", env, settings, DecisionLog("random"))


def test_model_bundle_round_trip(server, settings, tmp_path):
    norm = NormalizationSpec.for_server(server)
    bundle = ModelBundle(OaaPredictor(server, norm, seed=1), QosPredictor(server, norm, seed=2), ShepherdAgent(seed=3), norm)
    bundle.save(str(tmp_path))
    loaded = ModelBundle.load(str(tmp_path), server, settings)
    assert torch.equal(flat_parameters(loaded.oaa.model), flat_parameters(bundle.oaa.model))
    assert torch.equal(flat_parameters(loaded.qos.model), flat_parameters(bundle.qos.model))
    assert torch.equal(flat_parameters(loaded.agent.actor), flat_parameters(bundle.agent.actor))


def test_infeasible_workload_fails(server, tmp_path):
    doc = infeasible_scenario(duration_ms=6000)
    assert not fits(doc, server)
    report = run_scenario(build_scenario(doc), "heuristic", Settings(cutoff_ms=5000), out_dir=str(tmp_path))
    assert report.failed
    assert report.to_dict()["failed"] is True


def test_suite_workloads_fit(server):
    docs = three_lc_suite(n=4, seed=1)
    assert len(docs) == 4
    assert len({d.name for d in docs}) == 4
    for doc in docs:
        assert fits(doc, server)
        assert sum(s.kind == "LC" for s in doc.services) == 3
    assert [d.model_dump() for d in docs] == [d.model_dump() for d in three_lc_suite(n=4, seed=1)]


def make_report(scheduler, convergence, be_throughput=0.5):
    return RunReport("w", scheduler, 0, convergence, 1.0, be_throughput, [be_throughput], {}, [], 0, 10)


def test_summary_counts_failures_at_the_cutoff():
    reports = [make_report("bo", None, 0.2), make_report("bo", 1000, 0.4), make_report("heuristic", 500)]
    bo, heuristic = summarize(reports, cutoff_ms=5000)
    assert (bo.scheduler, bo.runs, bo.failed) == ("bo", 2, 1)
    assert bo.mean_convergence_ms == 3000.0
    assert bo.mean_be_throughput == pytest.approx(0.3)
    assert heuristic.mean_convergence_ms == 500.0
    record = reports[0].to_record("lc3")
    assert record.converged is False and record.suite == "lc3"


def test_multi_model_run_with_exact_models(server, oracle_models, tmp_path):
    doc = ScenarioFile(
        name="moses-solo",
        duration_ms=5000,
        services=[
            ServiceEntry(id="moses", preset="moses", load_schedule=[(0, 0.7)]),
            ServiceEntry(id="be0", kind="BE", preset="bodytrack"),
        ],
    )
    scenario = build_scenario(doc)
    oaa, qos = oracle_models(SimServer(scenario.server, scenario.services))
    bundle = ModelBundle(oaa, qos, ShepherdAgent(), NormalizationSpec.for_server(server))
    report = run_scenario(scenario, "osml+", Settings(), bundle, out_dir=str(tmp_path))
    assert not report.failed
    assert report.convergence_time_ms <= 1000
    placed = [r for r in read_jsonl(report.decision_log) if r["event"] == "NewLC"]
    assert placed[0]["service_id"] == "moses"
    assert placed[0]["after"][:2] == [6, 10]
    # the bundle's agent is not trained by the run
    assert len(bundle.agent.pool) == 0


@pytest.mark.parametrize("name", ["moses-solo", "churn", "infeasible"])
def test_shipped_scenarios_load(name):
    path = os.path.join(os.path.dirname(__file__), "..", "scenarios", f"{name}.yaml")
    scenario = load_scenario(path)
    assert scenario.name == name
    assert scenario.server.platform_id == "server1"
