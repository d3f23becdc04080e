"""Brute-force ground truth for the optimal allocation area and the resource cliff."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .simenv import BW_UNITS, Grant, LatencySurface, ServerSpec, latency_ms

CLIFF_RATIO = 10.0


@dataclass(frozen=True)
class OAAResult:
    feasible: bool
    oaa_cores: int = 0
    oaa_ways: int = 0
    oaa_bw_units: int = 0
    rcliff_cores: int = 0
    rcliff_ways: int = 0
    cliff_ratio: float = 1.0

    @property
    def oaa(self) -> Grant:
        return Grant(self.oaa_cores, self.oaa_ways, self.oaa_bw_units)

    @property
    def rcliff(self) -> Grant:
        return Grant(self.rcliff_cores, self.rcliff_ways, self.oaa_bw_units)

    def labels(self) -> tuple[int, int, int, int, int]:
        return self.oaa_cores, self.oaa_ways, self.oaa_bw_units, self.rcliff_cores, self.rcliff_ways


def latency_grid(surface: LatencySurface, server: ServerSpec, load: float) -> np.ndarray:
    """Latency for every (cores, ways, bw) cell with at least one unit of each; index = count - 1."""
    c = np.arange(1, server.n_cores + 1, dtype=float)[:, None, None]
    w = np.arange(1, server.n_llc_ways + 1, dtype=float)[None, :, None]
    b = np.arange(1, BW_UNITS + 1, dtype=float)[None, None, :]
    return latency_ms(surface, server, c, w, b, load)


def frontier_jumps(full_bw: np.ndarray, qos_target: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Latency ratio of a one-core and a one-way reduction from every minimal
    QoS-meeting cell (one whose reductions both miss the target); 0 elsewhere.
    """
    feasible = full_bw <= qos_target
    below_c = np.zeros_like(feasible)
    below_w = np.zeros_like(feasible)
    below_c[1:, :] = feasible[:-1, :]
    below_w[:, 1:] = feasible[:, :-1]
    frontier = feasible & ~below_c & ~below_w
    by_cores = np.zeros_like(full_bw)
    by_ways = np.zeros_like(full_bw)
    by_cores[1:, :] = full_bw[:-1, :] / full_bw[1:, :]
    by_ways[:, 1:] = full_bw[:, :-1] / full_bw[:, 1:]
    return np.where(frontier, by_cores, 0.0), np.where(frontier, by_ways, 0.0)


def sharpest_turn(values) -> int:
    """Index of the interior point with the largest three-point (Menger) curvature, both axes scaled to [0, 1]."""
    ys = np.asarray(values, dtype=float)
    if ys.size < 3:
        return 0
    xs = np.linspace(0.0, 1.0, ys.size)
    ys = (ys - ys.min()) / (np.ptp(ys) or 1.0)
    p0 = np.stack([xs[:-2], ys[:-2]])
    p1 = np.stack([xs[1:-1], ys[1:-1]])
    p2 = np.stack([xs[2:], ys[2:]])
    cross = np.abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
    sides = np.linalg.norm(p1 - p0, axis=0) * np.linalg.norm(p2 - p1, axis=0) * np.linalg.norm(p2 - p0, axis=0)
    return int(np.argmax(2.0 * cross / sides)) + 1


def oracle_oaa_rcliff(
    surface: LatencySurface,
    server: ServerSpec,
    load: float,
    qos_target: float,
    grid: Optional[np.ndarray] = None,
) -> OAAResult:
    """
    RCliff: over every minimal QoS-meeting (cores, ways) cell at full bandwidth,
    the one-unit reduction with the largest latency ratio (ties: lower cost,
    fewer cores, fewer ways; a way reduction wins an equal core reduction).
    OAA: on the line through the cliff, the knee of latency against the reduced
    resource, never below the cell the cliff drops from; its bandwidth is the
    least that still meets QoS there.
    """
    if grid is None:
        grid = latency_grid(surface, server, load)
    full_bw = grid[:, :, -1]
    if not (full_bw <= qos_target).any():
        return OAAResult(feasible=False)
    by_cores, by_ways = frontier_jumps(full_bw, qos_target)
    jump = np.maximum(by_cores, by_ways)
    ci, wi = np.nonzero(jump > 0)
    if ci.size == 0:
        # the single-core single-way cell already meets QoS
        bw = int(np.argmax(grid[0, 0, :] <= qos_target)) + 1
        return OAAResult(True, 1, 1, bw, 1, 1, 1.0)
    cost = (ci + 1) / server.n_cores + (wi + 1) / server.n_llc_ways
    best = np.lexsort((wi, ci, cost, -jump[ci, wi]))[0]
    c, w = int(ci[best]), int(wi[best])
    if by_ways[c, w] >= by_cores[c, w]:
        line = full_bw[c, w - 1 :]
        w = w - 1 + max(1, sharpest_turn(line))
        rc, rw, ratio = c, int(wi[best]) - 1, float(by_ways[c, int(wi[best])])
    else:
        line = full_bw[c - 1 :, w]
        c = c - 1 + max(1, sharpest_turn(line))
        rc, rw, ratio = int(ci[best]) - 1, w, float(by_cores[int(ci[best]), w])
    bw = int(np.argmax(grid[c, w, :] <= qos_target)) + 1
    return OAAResult(
        feasible=True,
        oaa_cores=c + 1,
        oaa_ways=w + 1,
        oaa_bw_units=bw,
        rcliff_cores=rc + 1,
        rcliff_ways=rw + 1,
        cliff_ratio=ratio,
    )


def max_cliff_ratio(surface: LatencySurface, server: ServerSpec, load: float) -> float:
    """Largest latency ratio between adjacent cells along cores or ways at full bandwidth."""
    full_bw = latency_grid(surface, server, load)[:, :, -1]
    along_cores = full_bw[:-1, :] / full_bw[1:, :]
    along_ways = full_bw[:, :-1] / full_bw[:, 1:]
    return float(max(along_cores.max(initial=1.0), along_ways.max(initial=1.0)))


def has_cliff(surface: LatencySurface, server: ServerSpec, load: float, min_ratio: float = CLIFF_RATIO) -> bool:
    return max_cliff_ratio(surface, server, load) >= min_ratio
