import numpy as np
import pytest

from utils.baselines import BoScheduler, HeuristicScheduler, ei_threshold, expected_improvement, fit_surrogate, split_units
from utils.config import Settings
from utils.errors import PartitionError
from utils.simenv import Allocation, Grant, SimServer
from utils.surfaces import be_service, lc_service


def three_lc(server, be=True):
    services = [
        lc_service("a", "xapian", ((0, 0.4),)),
        lc_service("b", "img-dnn", ((0, 0.4),)),
        lc_service("c", "login", ((0, 0.3),)),
    ]
    if be:
        services.append(be_service("be0", "bodytrack"))
    return SimServer(server, services)


def test_split_units():
    counts = split_units(10, np.array([0.5, 0.25, 0.25]), 2)
    assert sum(counts) == 10
    assert counts[0] >= counts[1] and counts[0] >= 1 and counts[1] >= 1
    assert split_units(3, np.zeros(3), 3) == [1, 1, 1]
    assert split_units(7, np.array([0.0, 0.0, 1.0]), 2)[2] == 5
    with pytest.raises(PartitionError):
        split_units(2, np.ones(3), 3)


def test_heuristic_starts_with_equal_shares(server):
    env = three_lc(server)
    scheduler = HeuristicScheduler(env, Settings(heuristic_interval_ms=10_000_000))
    scheduler.on_tick(env.snapshot())
    alloc = env.allocation
    for sid in "abc":
        assert alloc.grants[sid] == Grant(12, 6, 3)
    assert alloc.be_pool == Grant(0, 2, 1)
    assert alloc.used() == server.full_grant


def test_heuristic_moves_one_unit_to_the_worst_violator(server):
    env = three_lc(server)
    scheduler = HeuristicScheduler(env, Settings())
    scheduler.admitted.update({"a", "b", "c", "be0"})
    alloc = Allocation({"a": Grant(1, 1, 1), "b": Grant(12, 8, 3), "c": Grant(12, 8, 3)}, Grant(11, 3, 3), ("be0",))
    env.install(alloc)
    snap = env.snapshot()
    assert not snap["a"].qos_met
    assert scheduler.heuristic_step(snap) == "a"
    after = env.allocation
    assert after.grants["a"] == Grant(2, 1, 1)
    assert after.be_pool == Grant(10, 3, 3)
    assert after.grants["b"] == alloc.grants["b"] and after.grants["c"] == alloc.grants["c"]
    record = scheduler.log.records[-1]
    assert record["action"] == "cores_up" and record["source"] == "be"


def test_heuristic_rotates_when_a_unit_did_not_help(server):
    env = three_lc(server, be=False)
    scheduler = HeuristicScheduler(env, Settings())
    scheduler.admitted.update({"a", "b", "c"})
    env.install(Allocation({"a": Grant(1, 1, 1), "b": Grant(12, 8, 3), "c": Grant(12, 8, 3)}))
    snap = env.snapshot()
    scheduler.heuristic_step(snap)
    # same telemetry again: the ratio did not improve
    scheduler.heuristic_step(snap)
    assert [r["action"] for r in scheduler.log.records] == ["cores_up", "ways_up"]


def test_heuristic_does_nothing_when_all_met(server):
    env = SimServer(server, [lc_service("a", "xapian", ((0, 0.4),))])
    scheduler = HeuristicScheduler(env, Settings())
    scheduler.on_tick(env.snapshot())
    env.install(Allocation({"a": server.full_grant}))
    snap = env.step(100)
    assert snap.all_met()
    assert scheduler.heuristic_step(snap) is None
    assert [r["action"] for r in scheduler.log.records] == ["grant_share"]


def test_heuristic_priority_must_cover_every_resource(server):
    with pytest.raises(ValueError):
        HeuristicScheduler(three_lc(server), Settings(heuristic_priority="cores,ways"))


def test_ei_and_surrogate():
    X = np.linspace(0.0, 1.0, 8)[:, None]
    y = np.sin(3.0 * X[:, 0])
    gp = fit_surrogate(X, y, seed=0)
    np.testing.assert_allclose(gp.predict(X), y, atol=0.05)
    ei = expected_improvement(gp, np.random.default_rng(0).random((64, 1)), float(y.max()))
    assert np.all(ei >= -1e-12)
    assert ei_threshold(2.0, 0.01) == 0.02
    assert ei_threshold(-1.0, 0.01) == 0.01


def test_bo_samples_valid_allocations_and_installs_the_best(server):
    settings = Settings(bo_interval_ms=100, bo_max_samples=5, bo_initial_samples=3, bo_candidates=32)
    env = three_lc(server)
    scheduler = BoScheduler(env, settings, seed=1)
    for _ in range(12):
        scheduler.on_tick(env.snapshot())
        env.allocation.validate(server)
        for sid in "abc":
            grant = env.allocation.grants[sid]
            assert min(grant.as_tuple()) >= 1
        env.step(100)
    assert scheduler.terminated
    assert 3 <= len(scheduler.samples) <= 5
    best = max(scheduler.samples, key=lambda s: s.objective)
    assert env.allocation == best.allocation
    assert scheduler.log.records[-1]["action"] == "install_best"


def test_bo_restarts_on_arrival(server):
    services = [lc_service("a", "xapian", ((0, 0.4),)), lc_service("b", "login", ((0, 0.3),), arrival_ms=500)]
    env = SimServer(server, services)
    scheduler = BoScheduler(env, Settings(bo_interval_ms=100, bo_max_samples=3, bo_initial_samples=2, bo_candidates=16))
    for _ in range(5):
        scheduler.on_tick(env.snapshot())
        env.step(100)
    assert scheduler.samples or scheduler.terminated
    scheduler.on_tick(env.snapshot())
    assert scheduler.lc_ids() == ["a", "b"]
    assert len(scheduler.samples) == 0
    assert scheduler.pending is not None


def test_bo_objective(server):
    env = SimServer(server, [lc_service("a", "xapian", ((0, 0.4),)), be_service("be0", "bodytrack")])
    scheduler = BoScheduler(env, Settings())
    scheduler.admitted.update({"a", "be0"})
    env.install(Allocation({"a": server.full_grant}, Grant(), ("be0",)))
    assert scheduler.objective(env.snapshot()) == 1.0
    env.install(Allocation({"a": Grant(1, 1, 1)}, Grant(35, 19, 9), ("be0",)))
    value = scheduler.objective(env.snapshot())
    assert -1.0 <= value < 0.0
