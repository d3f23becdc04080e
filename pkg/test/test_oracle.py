import math

import numpy as np
import pytest

from utils.oracle import frontier_jumps, has_cliff, latency_grid, oracle_oaa_rcliff, sharpest_turn
from utils.surfaces import MOSES_QOS_TARGET_MS, MOSES_REFERENCE_LOAD, lc_preset, random_surface


def test_moses_oaa_and_cliff(server):
    surface, target = lc_preset("moses")
    result = oracle_oaa_rcliff(surface, server, MOSES_REFERENCE_LOAD, target)
    assert result.feasible
    assert (result.oaa_cores, result.oaa_ways) == (6, 10)
    assert (result.rcliff_cores, result.rcliff_ways) == (6, 9)
    assert result.cliff_ratio > 100
    assert has_cliff(surface, server, MOSES_REFERENCE_LOAD)
    assert target == MOSES_QOS_TARGET_MS


def test_unbounded_target_takes_the_smallest_cell(server):
    surface, _ = lc_preset("moses")
    result = oracle_oaa_rcliff(surface, server, MOSES_REFERENCE_LOAD, math.inf)
    assert result.feasible
    assert (result.oaa_cores, result.oaa_ways, result.oaa_bw_units) == (1, 1, 1)
    assert (result.rcliff_cores, result.rcliff_ways) == (1, 1)


def test_impossible_target_is_infeasible(server):
    surface, _ = lc_preset("xapian")
    result = oracle_oaa_rcliff(surface, server, 0.5, surface.base_latency_ms * 0.5)
    assert not result.feasible
    assert result.labels() == (0, 0, 0, 0, 0)


def test_sharpest_turn():
    assert sharpest_turn([4644.0, 34.0, 33.9, 33.8]) == 1
    assert sharpest_turn([10.0, 9.0, 8.0, 2.0, 1.9, 1.8]) == 3
    assert sharpest_turn([5.0, 1.0]) == 0


def test_cliff_is_the_largest_jump_on_the_grid(server):
    # cliff away from the cheapest QoS-meeting cell
    full_bw = np.full((4, 4), 100.0)
    full_bw[0, 3] = 9.0
    full_bw[1:, 3] = 8.0
    full_bw[2, 1:3] = 10.0
    full_bw[3, 1:3] = 9.5
    full_bw[2:, 0] = 500.0
    grid = np.repeat(full_bw[:, :, None], 10, axis=2)
    result = oracle_oaa_rcliff(None, server, 0.5, 10.0, grid)
    assert (result.rcliff_cores, result.rcliff_ways) == (3, 1)
    assert (result.oaa_cores, result.oaa_ways) == (3, 2)
    assert result.cliff_ratio == pytest.approx(50.0)


def check_sound(surface, server, load, target):
    grid = latency_grid(surface, server, load)
    result = oracle_oaa_rcliff(surface, server, load, target, grid)
    full_bw = grid[:, :, -1]
    if not result.feasible:
        assert not (full_bw <= target).any()
        return
    c, w, b = result.oaa_cores - 1, result.oaa_ways - 1, result.oaa_bw_units - 1
    assert grid[c, w, b] <= target
    if b > 0:
        assert grid[c, w, b - 1] > target
    rc, rw = result.rcliff_cores - 1, result.rcliff_ways - 1
    assert rc <= c and rw <= w
    if (rc, rw) == (c, w):
        assert (c, w) == (0, 0)
        return
    assert full_bw[rc, rw] > target
    by_cores, by_ways = frontier_jumps(full_bw, target)
    assert result.cliff_ratio == pytest.approx(max(by_cores.max(), by_ways.max()))
    edge = (rc, rw + 1) if rc == c else (rc + 1, rw)
    assert (by_ways if rc == c else by_cores)[edge] == pytest.approx(result.cliff_ratio)
    if edge == (c, w):
        # OAA on the cliff edge: both one-unit reductions miss
        if c > 0:
            assert full_bw[c - 1, w] > target
        if w > 0:
            assert full_bw[c, w - 1] > target


def test_oracle_is_sound_on_random_surfaces(server):
    rng = np.random.default_rng(11)
    for i in range(100):
        surface, target = random_surface(rng, f"r{i}")
        load = float(rng.uniform(0.1, 1.0))
        check_sound(surface, server, load, target)


@pytest.mark.parametrize("load", [0.2, 0.5, 0.9])
def test_oracle_is_sound_on_presets(server, load):
    for name in ("img-dnn", "masstree", "memcached", "specjbb", "sphinx", "login"):
        surface, target = lc_preset(name)
        check_sound(surface, server, load, target)
