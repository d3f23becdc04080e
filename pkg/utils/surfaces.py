import logging
from dataclasses import replace

import numpy as np
from scipy.special import logit

from .simenv import (
    BW_UNITS,
    BeProfile,
    LatencySurface,
    ServerSpec,
    ServiceInstance,
    ServiceKind,
    capacity,
    latency_ms,
)

logger = logging.getLogger(__name__)

PLATFORMS: dict[str, ServerSpec] = {
    "server1": ServerSpec(36, 20, "server1", way_size_mb=2.25, core_ghz=2.3, mem_bw_gbps=76.8),
    "server2": ServerSpec(64, 12, "server2", way_size_mb=4.0, core_ghz=2.0, mem_bw_gbps=94.0),
    "server3": ServerSpec(48, 11, "server3", way_size_mb=3.25, core_ghz=2.2, mem_bw_gbps=102.4),
}
REFERENCE_PLATFORM = "server1"

# Utilisation of the whole reference server at load 1.0
FULL_SERVER_UTIL = 0.6
KNEE_SAMPLES = 100

MOSES_REFERENCE_LOAD = 0.7
MOSES_QOS_TARGET_MS = 45.0
MOSES_CLIFF_CORES = 6
MOSES_CLIFF_WAYS = 10
MOSES_LATENCY_ABOVE_MS = 34.0
MOSES_LATENCY_BELOW_MS = 4644.0

# name: base_ms, core_knee, working set (ways on the reference server), cache_floor,
#       sharpness per reference way, bw_weight, ipc_peak, mem_traffic_gbps, footprint_mb
_PRESETS = {
    "img-dnn": (2.0, 8, 4.0, 0.35, 1.6, 0.35, 1.8, 6.0, 1536.0),
    "masstree": (1.0, 4, 6.0, 0.30, 2.0, 0.50, 1.2, 9.0, 4096.0),
    "memcached": (0.5, 6, 3.0, 0.50, 1.2, 0.60, 0.9, 12.0, 2048.0),
    "mongodb": (3.0, 5, 5.0, 0.35, 1.5, 0.30, 1.1, 5.0, 6144.0),
    "nginx": (0.8, 7, 2.0, 0.55, 1.0, 0.80, 1.4, 10.0, 512.0),
    "specjbb": (1.5, 8, 7.0, 0.30, 1.8, 0.40, 1.6, 7.0, 8192.0),
    "sphinx": (20.0, 6, 5.0, 0.25, 1.4, 0.50, 1.3, 6.0, 3072.0),
    "xapian": (2.5, 5, 4.0, 0.40, 1.3, 0.45, 1.5, 5.0, 2048.0),
    "login": (1.2, 3, 2.0, 0.50, 1.0, 0.70, 1.1, 4.0, 256.0),
    "ads": (4.0, 4, 3.0, 0.40, 1.2, 0.50, 1.3, 6.0, 1024.0),
}
LC_PRESETS = ("moses",) + tuple(_PRESETS)

BE_PROFILES: dict[str, BeProfile] = {
    # compute bound
    "blackscholes": BeProfile("blackscholes", core_weight=0.5, way_floor=0.9, way_weight=2.0, bw_floor=0.9, bw_weight=2.0, ipc_peak=1.9, mem_traffic_gbps=2.0),
    # bandwidth bound
    "streamcluster": BeProfile("streamcluster", core_weight=1.5, way_floor=0.5, way_weight=3.0, bw_floor=0.2, bw_weight=1.5, ipc_peak=0.8, mem_traffic_gbps=30.0),
    "bodytrack": BeProfile("bodytrack", core_weight=1.0, way_floor=0.7, way_weight=3.0, bw_floor=0.6, bw_weight=2.0, ipc_peak=1.3, mem_traffic_gbps=8.0),
}


def knee_index(xs, ys) -> int:
    """Index of the maximum-curvature point of a sampled curve, both axes scaled to [0, 1]."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3:
        raise ValueError("a knee needs at least three samples")
    xn = (xs - xs.min()) / (np.ptp(xs) or 1.0)
    yn = (ys - ys.min()) / (np.ptp(ys) or 1.0)
    dy = np.gradient(yn, xn)
    d2y = np.gradient(dy, xn)
    curvature = np.abs(d2y) / (1.0 + dy**2) ** 1.5
    return int(np.argmax(curvature))


def knee_qos_target(surface: LatencySurface, server: ServerSpec) -> float:
    """Latency at the knee of the whole-server latency-vs-load curve."""
    full = server.full_grant
    cap_full = float(capacity(surface, server, full.cores, full.ways, full.bw_units))
    loads = np.linspace(0.0, 0.99 * cap_full, KNEE_SAMPLES)
    lats = latency_ms(surface, server, full.cores, full.ways, full.bw_units, loads)
    return float(lats[knee_index(loads, lats)])


def scale_to_max_load(surface: LatencySurface, server: ServerSpec, util: float = FULL_SERVER_UTIL) -> LatencySurface:
    """Rescale capacity so load 1.0 keeps the whole server at ``util``."""
    full = server.full_grant
    unit = replace(surface, capacity_scale=1.0)
    cap_full = float(capacity(unit, server, full.cores, full.ways, full.bw_units))
    return replace(surface, capacity_scale=1.0 / (util * cap_full))


def calibrate_cliff(
    surface: LatencySurface,
    server: ServerSpec,
    cores: int,
    ways_above: int,
    latency_above_ms: float,
    latency_below_ms: float,
    load: float,
) -> LatencySurface:
    """
    Place the cache cliff between ``ways_above`` and ``ways_above - 1`` so the two
    cells at ``cores`` (full bandwidth) show the given latencies at ``load``.
    """
    base = surface.base_latency_ms
    rho_above = 1.0 - base / latency_above_ms
    rho_below = 1.0 - base / latency_below_ms
    ratio = rho_below / rho_above
    floor = surface.cache_floor
    # cache factor above the knee is x, below it is 1 - x (symmetric logistic)
    x = (ratio - floor) / ((1.0 - floor) * (1.0 + ratio))
    if not 0.5 < x < 1.0:
        raise ValueError(f"{surface.name}: the two cells cannot be matched with cache floor {floor}")
    tuned = replace(
        surface,
        cache_knee_mb=(ways_above - 0.5) * server.way_size_mb,
        cliff_sharpness=2.0 * float(logit(x)) / server.way_size_mb,
        capacity_scale=1.0,
    )
    unit_cap = float(capacity(tuned, server, cores, ways_above, BW_UNITS))
    return replace(tuned, capacity_scale=load / (rho_above * unit_cap))


def moses_surface(server: ServerSpec = PLATFORMS[REFERENCE_PLATFORM]) -> LatencySurface:
    draft = LatencySurface(
        name="moses",
        base_latency_ms=10.0,
        capacity_scale=1.0,
        core_knee=6.0,
        core_tail=0.05 / 36,
        cache_knee_mb=9.5 * server.way_size_mb,
        cache_floor=0.3,
        cliff_sharpness=1.0,
        bw_weight=0.6,
        ipc_peak=1.4,
        miss_rate=25.0,
        mem_traffic_gbps=7.0,
        footprint_mb=3072.0,
        noise_seed=1,
    )
    return calibrate_cliff(
        draft,
        server,
        MOSES_CLIFF_CORES,
        MOSES_CLIFF_WAYS,
        MOSES_LATENCY_ABOVE_MS,
        MOSES_LATENCY_BELOW_MS,
        MOSES_REFERENCE_LOAD,
    )


def lc_preset(name: str) -> tuple[LatencySurface, float]:
    """Surface and QoS target of a named LC service, both fixed on the reference platform."""
    reference = PLATFORMS[REFERENCE_PLATFORM]
    if name == "moses":
        return moses_surface(reference), MOSES_QOS_TARGET_MS
    try:
        base, knee, ws_ways, floor, sharp, bw_w, ipc, traffic, footprint = _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown LC preset {name}; known: {', '.join(LC_PRESETS)}")
    surface = LatencySurface(
        name=name,
        base_latency_ms=base,
        capacity_scale=1.0,
        core_knee=float(knee),
        core_tail=0.05 / reference.n_cores,
        cache_knee_mb=ws_ways * reference.way_size_mb,
        cache_floor=floor,
        cliff_sharpness=sharp / reference.way_size_mb,
        bw_weight=bw_w,
        ipc_peak=ipc,
        mem_traffic_gbps=traffic,
        footprint_mb=footprint,
        noise_seed=LC_PRESETS.index(name) + 1,
    )
    surface = scale_to_max_load(surface, reference)
    return surface, knee_qos_target(surface, reference)


def be_preset(name: str) -> BeProfile:
    try:
        return BE_PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown BE profile {name}; known: {', '.join(BE_PROFILES)}")


def random_surface(rng: np.random.Generator, name: str = "random") -> tuple[LatencySurface, float]:
    """A random LC surface with its knee-derived QoS target."""
    reference = PLATFORMS[REFERENCE_PLATFORM]
    surface = LatencySurface(
        name=name,
        base_latency_ms=float(rng.uniform(0.5, 20.0)),
        capacity_scale=1.0,
        core_knee=float(rng.integers(2, 11)),
        core_tail=float(rng.uniform(0.0, 0.1)) / reference.n_cores,
        cache_knee_mb=float(rng.uniform(1.5, 9.0)) * reference.way_size_mb,
        cache_floor=float(rng.uniform(0.2, 0.6)),
        cliff_sharpness=float(rng.uniform(0.8, 2.5)) / reference.way_size_mb,
        bw_weight=float(rng.uniform(0.2, 0.9)),
        ipc_peak=float(rng.uniform(0.8, 2.0)),
        miss_rate=float(rng.uniform(5.0, 40.0)),
        mem_traffic_gbps=float(rng.uniform(2.0, 14.0)),
        footprint_mb=float(rng.uniform(256.0, 8192.0)),
        noise_seed=int(rng.integers(0, 2**31)),
    )
    surface = scale_to_max_load(surface, reference, util=float(rng.uniform(0.45, 0.7)))
    return surface, knee_qos_target(surface, reference)


def lc_service(
    service_id: str,
    preset: str,
    load_schedule: tuple[tuple[int, float], ...],
    arrival_ms: int = 0,
) -> ServiceInstance:
    surface, target = lc_preset(preset)
    return ServiceInstance(
        service_id=service_id,
        kind=ServiceKind.LC,
        load_schedule=load_schedule,
        arrival_ms=arrival_ms,
        surface=surface,
        qos_target_ms=target,
    )


def be_service(service_id: str, preset: str, arrival_ms: int = 0) -> ServiceInstance:
    return ServiceInstance(
        service_id=service_id,
        kind=ServiceKind.BE,
        load_schedule=(),
        arrival_ms=arrival_ms,
        be_profile=be_preset(preset),
    )
