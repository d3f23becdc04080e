import logging

import numpy as np
import pytest

from utils.config import Settings
from utils.features import NormalizationSpec
from utils.oracle import oracle_oaa_rcliff
from utils.predictor import MAX_QOS_RATIO, OAAPrediction, OaaPredictor, QosPrediction, QosPredictor
from utils.simenv import ServiceInstance, SimServer, latency_ms
from utils.surfaces import PLATFORMS


def pytest_addoption(parser):
    parser.addoption("--bench", action="store_true", default=False, help="run the long acceptance benchmarks")


def pytest_configure(config):
    config.addinivalue_line("markers", "bench: long acceptance run, needs --bench")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--bench"):
        return
    skip = pytest.mark.skip(reason="needs --bench")
    for item in items:
        if "bench" in item.keywords:
            item.add_marker(skip)


class OracleOaaModel(OaaPredictor):
    """Model-A answering with the brute-force oracle of the service's own surface."""

    def __init__(self, server, services: dict[str, ServiceInstance]):
        super().__init__(server, NormalizationSpec.for_server(server))
        self.services = services

    def predict_telemetry(self, telemetry) -> OAAPrediction:
        service = self.services[telemetry.service_id]
        result = oracle_oaa_rcliff(service.surface, self.server, telemetry.load, service.qos_target_ms)
        if not result.feasible:
            full = self.server.full_grant
            return OAAPrediction(full.cores, full.ways, full.bw_units, full.cores, full.ways)
        return OAAPrediction(*(float(v) for v in result.labels()))


class SimulatedQosModel(QosPredictor):
    """Model-B reading the latency ratio straight off the simulator."""

    def __init__(self, server, services: dict[str, ServiceInstance]):
        super().__init__(server, NormalizationSpec.for_server(server))
        self.services = services

    def predict_after(self, telemetry, expected_cores, expected_ways) -> QosPrediction:
        service = self.services[telemetry.service_id]
        lat = latency_ms(
            service.surface,
            self.server,
            expected_cores,
            expected_ways,
            telemetry.bw_units,
            telemetry.load,
            telemetry.queue_len,
        )
        return QosPrediction(float(np.clip(lat / service.qos_target_ms, 0.0, MAX_QOS_RATIO)))


@pytest.fixture
def server():
    return PLATFORMS["server1"]


@pytest.fixture
def settings():
    return Settings()


@pytest.fixture
def norm(server):
    return NormalizationSpec.for_server(server)


@pytest.fixture
def oracle_models():
    """Factory: (Model-A double, Model-B double) for the services of an environment."""

    def build(env: SimServer):
        return OracleOaaModel(env.spec, env.services), SimulatedQosModel(env.spec, env.services)

    return build


@pytest.fixture(autouse=True)
def quiet_logs(caplog):
    caplog.set_level(logging.WARNING)


def check_rollbacks(env, scheduler) -> list:
    """Wraps the scheduler so every rollback is compared with the allocation seen before its action."""
    seen_before = {}
    restored = []
    shepherd, roll_back = scheduler.shepherd, scheduler._roll_back

    def spy_shepherd(service_id, snapshot, *args):
        before, n = env.allocation, len(scheduler.log.records)
        action = shepherd(service_id, snapshot, *args)
        for record in scheduler.log.records[n:]:
            seen_before[id(record)] = before
        return action

    def spy_roll_back(pending, t):
        done = roll_back(pending, t)
        if done:
            before = seen_before[id(pending.record)]
            for sid in pending.involved:
                assert env.allocation.grants[sid] == before.grants[sid]
            restored.append(pending.service_id)
        return done

    scheduler.shepherd, scheduler._roll_back = spy_shepherd, spy_roll_back
    return restored


@pytest.fixture
def rollback_check():
    return check_rollbacks
