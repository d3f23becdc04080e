"""
Scenario execution and run metrics.

A run drives one scheduler against the simulator tick by tick and keeps two
line-delimited logs: the scheduler's decisions and the telemetry seen after
every step. Metrics are computed from those logs alone.
"""
import copy
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import yaml
from pydantic import ValidationError

from model import RunRecord
from model.schemas import SCENARIO_SCHEMA_VERSION, ScenarioFile, ServiceEntry

from .agent import ShepherdAgent
from .baselines import BoScheduler, HeuristicScheduler
from .config import Settings
from .decision_log import DecisionLog, dumps_record, run_output_dir, write_jsonl
from .errors import ConfigError, MissingModelError, ParamsFileError, SchedSimError, ScenarioFailure
from .features import NormalizationSpec
from .oracle import oracle_oaa_rcliff
from .params import load_params, save_params
from .predictor import OaaPredictor, QosPredictor
from .scheduler import BaseScheduler, MultiModelScheduler
from .simenv import Grant, ServerSpec, ServiceInstance, ServiceKind, SimServer
from .surfaces import BE_PROFILES, LC_PRESETS, PLATFORMS, be_preset, lc_preset

logger = logging.getLogger(__name__)

SCHEDULERS = ("osml+", "heuristic", "bo")
SUITE_DURATION_MS = 60_000


@dataclass(frozen=True)
class Scenario:
    name: str
    server: ServerSpec
    services: tuple[ServiceInstance, ...]
    seed: int
    duration_ms: int


@dataclass
class RunReport:
    scenario: str
    scheduler: str
    seed: int
    convergence_time_ms: Optional[int]
    emu: float
    be_throughput: float
    be_series: list[float]
    action_counts: dict[str, int]
    recovery_times_ms: list[Optional[int]]
    rollbacks: int
    ticks: int
    partial: bool = False
    decision_log: str = ""
    telemetry_log: str = ""

    @property
    def failed(self) -> bool:
        return self.convergence_time_ms is None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["failed"] = self.failed
        return out

    def to_record(self, suite: str = "") -> RunRecord:
        return RunRecord(
            scenario=self.scenario,
            scheduler=self.scheduler,
            seed=self.seed,
            suite=suite,
            converged=not self.failed,
            convergence_time_ms=self.convergence_time_ms,
            emu=self.emu,
            be_throughput=self.be_throughput,
            rollbacks=self.rollbacks,
            partial=self.partial,
            report=dumps_record(self.to_dict()),
            output_dir=os.path.dirname(self.decision_log),
        )


# -- scenario files -----------------------------------------------------------


def build_scenario(doc: ScenarioFile) -> Scenario:
    if doc.schema_version != SCENARIO_SCHEMA_VERSION:
        raise ConfigError(f"scenario {doc.name}: schema version {doc.schema_version}, expected {SCENARIO_SCHEMA_VERSION}")
    if doc.server is not None:
        server = ServerSpec(
            doc.server.n_cores,
            doc.server.n_llc_ways,
            doc.platform,
            way_size_mb=doc.server.way_size_mb,
            core_ghz=doc.server.core_ghz,
            mem_bw_gbps=doc.server.mem_bw_gbps,
        )
    elif doc.platform in PLATFORMS:
        server = PLATFORMS[doc.platform]
    else:
        raise ConfigError(f"scenario {doc.name}: unknown platform {doc.platform}")
    ids = [s.id for s in doc.services]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"scenario {doc.name}: duplicate service ids")
    try:
        services = tuple(_build_service(entry) for entry in doc.services)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"scenario {doc.name}: {e}")
    return Scenario(doc.name, server, services, doc.seed, doc.duration_ms)


def _build_service(entry: ServiceEntry) -> ServiceInstance:
    if entry.kind == "BE":
        return ServiceInstance(entry.id, ServiceKind.BE, (), entry.arrival_ms, be_profile=be_preset(entry.preset))
    surface, target = lc_preset(entry.preset)
    if entry.surface is not None:
        surface = replace(surface, **entry.surface.model_dump(exclude_none=True))
    return ServiceInstance(
        entry.id,
        ServiceKind.LC,
        tuple((int(start), float(load)) for start, load in entry.load_schedule),
        entry.arrival_ms,
        surface=surface,
        qos_target_ms=entry.qos_target_ms or target,
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
        doc = ScenarioFile.model_validate(raw)
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise ConfigError(f"cannot read scenario {path}: {e}")
    return build_scenario(doc)


def save_scenario(path: str, doc: ScenarioFile) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(json.loads(doc.model_dump_json()), f, sort_keys=False)
    return path


# -- models -------------------------------------------------------------------


def model_paths(model_dir: str, platform_id: str) -> dict[str, str]:
    return {
        "A": os.path.join(model_dir, f"{platform_id}-model_a.params"),
        "B": os.path.join(model_dir, f"{platform_id}-model_b.params"),
        "C": os.path.join(model_dir, f"{platform_id}-model_c.params"),
    }


def train_command(model: str, platform_id: str) -> str:
    return f"python main.py train {model.lower()} --platform {platform_id}"


@dataclass
class ModelBundle:
    oaa: OaaPredictor
    qos: QosPredictor
    agent: ShepherdAgent
    norm: NormalizationSpec

    @classmethod
    def load(cls, model_dir: str, server: ServerSpec, settings: Settings) -> "ModelBundle":
        """MissingModelError names the training command for every absent file."""
        paths = model_paths(model_dir, server.platform_id)
        missing = [m for m, p in paths.items() if not os.path.exists(p)]
        if missing:
            commands = "; ".join(train_command(m, server.platform_id) for m in missing)
            raise MissingModelError(f"no trained Model-{', Model-'.join(missing)} in {model_dir}; run: {commands}")
        norm = NormalizationSpec.for_server(server)
        norm_path = os.path.join(model_dir, f"{server.platform_id}-normalization.yaml")
        if os.path.exists(norm_path):
            norm = NormalizationSpec.load(norm_path)
        agent = ShepherdAgent.from_settings(settings)
        try:
            agent.load_networks(load_params(paths["C"]))
        except KeyError as e:
            raise ParamsFileError(f"{paths['C']} lacks network {e}")
        return cls(
            oaa=OaaPredictor(server, norm, model_path=paths["A"]),
            qos=QosPredictor(server, norm, model_path=paths["B"]),
            agent=agent,
            norm=norm,
        )

    def save(self, model_dir: str) -> None:
        os.makedirs(model_dir, exist_ok=True)
        paths = model_paths(model_dir, self.norm.platform_id)
        self.oaa.save(paths["A"])
        self.qos.save(paths["B"])
        save_params(paths["C"], self.agent.networks())


def make_scheduler(
    name: str,
    env: SimServer,
    settings: Settings,
    log: DecisionLog,
    bundle: Optional[ModelBundle] = None,
    seed: int = 0,
) -> BaseScheduler:
    if name == "heuristic":
        return HeuristicScheduler(env, settings, log)
    if name == "bo":
        return BoScheduler(env, settings, log, seed=seed)
    if name == "osml+":
        if bundle is None:
            raise MissingModelError(
                f"osml+ needs trained models; run: {train_command('a', env.spec.platform_id)}, then b and c"
            )
        # online learning must not leak between runs
        agent = copy.deepcopy(bundle.agent)
        return MultiModelScheduler(env, settings, bundle.oaa, bundle.qos, agent, bundle.norm, log)
    raise ConfigError(f"unknown scheduler {name}; choose one of {', '.join(SCHEDULERS)}")


# -- running ------------------------------------------------------------------


def run_scenario(
    scenario: Scenario,
    scheduler_name: str,
    settings: Settings,
    bundle: Optional[ModelBundle] = None,
    out_dir: Optional[str] = None,
) -> RunReport:
    """Run to the scenario's end, write both logs and the report; ScenarioFailure after writing a partial run."""
    out_dir = out_dir or run_output_dir(settings.results_dir, scenario.name, scheduler_name, scenario.seed)
    env = SimServer(scenario.server, scenario.services, seed=scenario.seed, share_efficiency=settings.share_efficiency)
    log = DecisionLog(scheduler_name)
    scheduler = make_scheduler(scheduler_name, env, settings, log, bundle, scenario.seed)
    telemetry: list[dict] = []
    failure: Optional[SchedSimError] = None
    n_ticks = scenario.duration_ms // settings.tick_ms
    for _ in range(n_ticks):
        try:
            scheduler.on_tick(env.snapshot())
        except SchedSimError as e:
            failure = e
            logger.error("%s on %s stopped at %d ms: %s", scheduler_name, scenario.name, env.clock_ms, e)
            break
        telemetry.extend(env.step(settings.tick_ms).to_records())

    decisions_path = log.write(os.path.join(out_dir, "decisions.jsonl"))
    telemetry_path = write_jsonl(os.path.join(out_dir, "telemetry.jsonl"), telemetry)
    metrics = compute_metrics(log.records, telemetry, settings, scenario.duration_ms)
    report = RunReport(
        scenario=scenario.name,
        scheduler=scheduler_name,
        seed=scenario.seed,
        rollbacks=getattr(scheduler, "rollbacks", 0),
        decision_log=decisions_path,
        telemetry_log=telemetry_path,
        **metrics,
    )
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        f.write(dumps_record(report.to_dict()) + "\n")
    if failure is not None:
        raise ScenarioFailure(f"{scenario.name} with {scheduler_name}: {failure}") from failure
    logger.info(
        "%s on %s: convergence %s, EMU %.2f, BE throughput %.3f",
        scheduler_name,
        scenario.name,
        "FAILED" if report.failed else f"{report.convergence_time_ms} ms",
        report.emu,
        report.be_throughput,
    )
    return report


def report_from_dict(data: dict) -> RunReport:
    data = {k: v for k, v in data.items() if k != "failed"}
    return RunReport(**data)


def load_report(path: str) -> RunReport:
    with open(path) as f:
        return report_from_dict(json.load(f))


# -- metrics ------------------------------------------------------------------


def _ticks(telemetry: Sequence[dict]) -> dict[int, list[dict]]:
    ticks: dict[int, list[dict]] = {}
    for record in telemetry:
        ticks.setdefault(record["timestamp_ms"], []).append(record)
    return dict(sorted(ticks.items()))


def _all_met(records: Sequence[dict]) -> bool:
    lcs = [r for r in records if r["kind"] == ServiceKind.LC.value]
    return bool(lcs) and all(r["qos_met"] for r in lcs)


def sustained_start(times: Sequence[int], met: Sequence[bool], since: int, sustain_ms: int) -> Optional[int]:
    """First time >= ``since`` from which every tick is all-met for at least ``sustain_ms``."""
    start = None
    for t, ok in zip(times, met):
        if t < since:
            continue
        if not ok:
            start = None
            continue
        if start is None:
            start = t
        if t - start >= sustain_ms:
            return start
    return None


def disturbances(ticks: dict[int, list[dict]]) -> list[int]:
    """Times after the first tick where an LC service appears or its load changes."""
    seen: dict[str, float] = {}
    out = []
    for i, (t, records) in enumerate(ticks.items()):
        changed = False
        for r in records:
            if r["kind"] != ServiceKind.LC.value:
                continue
            if r["service_id"] not in seen or seen[r["service_id"]] != r["load"]:
                changed = True
            seen[r["service_id"]] = r["load"]
        if changed and i > 0:
            out.append(t)
    return out


def compute_metrics(
    decisions: Sequence[dict],
    telemetry: Sequence[dict],
    settings: Settings,
    duration_ms: int,
) -> dict:
    """
    Report fields from the logs of one run.

    Convergence: start of the first all-met window lasting ``sustain_ms``,
    FAILED (None) when it starts after the cutoff or never. EMU: the largest
    summed LC load fraction at any all-met tick. BE throughput: mean over
    ticks and BE services, each already normalized to a solo full-server run.
    """
    ticks = _ticks(telemetry)
    times = list(ticks)
    met = [_all_met(records) for records in ticks.values()]
    expected = duration_ms // settings.tick_ms
    partial = len(times) < expected or (bool(times) and times[-1] < duration_ms)

    start = sustained_start(times, met, 0, settings.sustain_ms)
    convergence = start if start is not None and start <= settings.cutoff_ms else None

    emu = 0.0
    be_series = []
    for ok, records in zip(met, ticks.values()):
        if ok:
            emu = max(emu, float(sum(r["load"] for r in records if r["kind"] == ServiceKind.LC.value)))
        bes = [r["be_throughput"] for r in records if r["kind"] == ServiceKind.BE.value]
        if bes:
            be_series.append(float(np.mean(bes)))

    recovery = []
    for d in disturbances(ticks):
        s = sustained_start(times, met, d, settings.sustain_ms)
        recovery.append(None if s is None else s - d)

    actions = Counter(f"{r['algorithm']}:{r['action']}" for r in decisions)
    return {
        "convergence_time_ms": convergence,
        "emu": emu,
        "be_throughput": float(np.mean(be_series)) if be_series else 0.0,
        "be_series": be_series,
        "action_counts": dict(sorted(actions.items())),
        "recovery_times_ms": recovery,
        "ticks": len(times),
        "partial": partial,
    }


# -- workloads ----------------------------------------------------------------


def oaa_total(doc: ScenarioFile, server: ServerSpec) -> Optional[Grant]:
    """Summed oracle OAA of the LC services at their peak loads; None when one of them cannot meet QoS."""
    total = Grant()
    for entry in doc.services:
        if entry.kind != "LC":
            continue
        surface, target = lc_preset(entry.preset)
        peak = max(load for _, load in entry.load_schedule)
        result = oracle_oaa_rcliff(surface, server, peak, entry.qos_target_ms or target)
        if not result.feasible:
            return None
        total = total + result.oaa
    return total


def fits(doc: ScenarioFile, server: ServerSpec) -> bool:
    total = oaa_total(doc, server)
    return total is not None and server.full_grant.dominates(total)


def random_workload(
    name: str,
    n_lc: int,
    rng: np.random.Generator,
    platform: str = "server1",
    with_be: bool = False,
    duration_ms: int = SUITE_DURATION_MS,
    max_tries: int = 200,
) -> ScenarioFile:
    """``n_lc`` distinct preset LC services at random constant loads whose OAAs fit together."""
    server = PLATFORMS[platform]
    for _ in range(max_tries):
        presets = rng.choice(LC_PRESETS, size=n_lc, replace=False)
        loads = rng.uniform(0.2, 0.8, n_lc) / max(1.0, n_lc / 3.0)
        services = [
            ServiceEntry(id=f"lc{i}", preset=str(p), load_schedule=[(0, round(float(l), 3))])
            for i, (p, l) in enumerate(zip(presets, loads))
        ]
        if with_be:
            services.append(ServiceEntry(id="be0", kind="BE", preset=str(rng.choice(sorted(BE_PROFILES)))))
        doc = ScenarioFile(
            name=name,
            platform=platform,
            seed=int(rng.integers(0, 2**31)),
            duration_ms=duration_ms,
            services=services,
        )
        if fits(doc, server):
            return doc
    raise ConfigError(f"no fitting {n_lc}-LC workload found on {platform} in {max_tries} draws")


def three_lc_suite(n: int = 20, seed: int = 0, platform: str = "server1") -> list[ScenarioFile]:
    rng = np.random.default_rng([seed, 3])
    return [random_workload(f"lc3-{i:02d}", 3, rng, platform) for i in range(n)]


def colocation_suite(per_level: int = 20, seed: int = 0, platform: str = "server1", levels=range(2, 7)) -> list[ScenarioFile]:
    """2 to 6 LC services plus one BE job per workload."""
    rng = np.random.default_rng([seed, 6])
    return [
        random_workload(f"lc{k}be-{i:02d}", k, rng, platform, with_be=True)
        for k in levels
        for i in range(per_level)
    ]


def churn_scenario(seed: int = 0, platform: str = "server1", duration_ms: int = 60_000) -> ScenarioFile:
    """Two LC services and a BE job at start, a load step on one of them, then a late arrival."""
    third = duration_ms * 2 // 3
    return ScenarioFile(
        name="churn",
        platform=platform,
        seed=seed,
        duration_ms=duration_ms,
        services=[
            ServiceEntry(id="img-dnn", preset="img-dnn", load_schedule=[(0, 0.3), (third // 2, 0.6)]),
            ServiceEntry(id="xapian", preset="xapian", load_schedule=[(0, 0.4)]),
            ServiceEntry(id="bodytrack", kind="BE", preset="bodytrack"),
            ServiceEntry(id="login", preset="login", arrival_ms=third, load_schedule=[(0, 0.4)]),
        ],
    )


def infeasible_scenario(seed: int = 0, platform: str = "server1", duration_ms: int = 185_000) -> ScenarioFile:
    """Three heavy services at peak load; their OAAs together exceed the server."""
    return ScenarioFile(
        name="infeasible",
        platform=platform,
        seed=seed,
        duration_ms=duration_ms,
        services=[ServiceEntry(id=f"specjbb{i}", preset="specjbb", load_schedule=[(0, 1.0)]) for i in range(3)],
    )


# -- suites -------------------------------------------------------------------


def _run_one(args) -> RunReport:
    doc, name, settings, bundle = args
    return run_scenario(build_scenario(doc), name, settings, bundle)


def run_suite(
    docs: Sequence[ScenarioFile],
    settings: Settings,
    schedulers: Sequence[str] = SCHEDULERS,
    bundle: Optional[ModelBundle] = None,
    workers: int = 1,
) -> list[RunReport]:
    """Every scheduler on every workload; runs share nothing, so they may go to worker processes."""
    jobs = [(doc, name, settings, bundle if name == "osml+" else None) for doc in docs for name in schedulers]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


@dataclass
class SuiteSummary:
    scheduler: str
    runs: int
    failed: int
    mean_convergence_ms: float
    mean_be_throughput: float
    mean_emu: float
    extra: dict = field(default_factory=dict)


def summarize(reports: Sequence[RunReport], cutoff_ms: int) -> list[SuiteSummary]:
    """Per-scheduler means; a FAILED run counts as converging at the cutoff."""
    out = []
    for name in sorted({r.scheduler for r in reports}):
        mine = [r for r in reports if r.scheduler == name]
        conv = [cutoff_ms if r.failed else r.convergence_time_ms for r in mine]
        out.append(
            SuiteSummary(
                scheduler=name,
                runs=len(mine),
                failed=sum(r.failed for r in mine),
                mean_convergence_ms=float(np.mean(conv)),
                mean_be_throughput=float(np.mean([r.be_throughput for r in mine])),
                mean_emu=float(np.mean([r.emu for r in mine])),
            )
        )
    return out
