"""
Deterministic discrete-time co-location server.

Services hold a parametric latency surface; the server advances a simulated
clock in fixed steps, keeps a request backlog per service and emits one
immutable telemetry snapshot per step.
"""
import logging
import sys
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np
from scipy.special import expit

from .errors import PartitionError

logger = logging.getLogger(__name__)

UNSERVED_LATENCY_MS = sys.float_info.max
BW_UNITS = 10
LATENCY_EPS = 1e-3
REFERENCE_GHZ = 2.3
# Resident memory held per load-second of backlog
BACKLOG_MB_PER_LOAD_S = 200.0
COUNTER_JITTER = 0.02


@dataclass(frozen=True)
class ServerSpec:
    n_cores: int
    n_llc_ways: int
    platform_id: str
    way_size_mb: float = 2.25
    core_ghz: float = REFERENCE_GHZ
    mem_bw_gbps: float = 76.8
    mem_bw_units: int = BW_UNITS

    def __post_init__(self):
        if self.n_cores < 1 or self.n_llc_ways < 1:
            raise ValueError(f"{self.platform_id}: a server needs at least one core and one way")
        if self.mem_bw_units != BW_UNITS:
            raise ValueError(f"{self.platform_id}: bandwidth is split in exactly {BW_UNITS} units")

    @property
    def cache_mb(self) -> float:
        return self.n_llc_ways * self.way_size_mb

    @property
    def full_grant(self) -> "Grant":
        return Grant(self.n_cores, self.n_llc_ways, self.mem_bw_units)


@dataclass(frozen=True)
class Grant:
    cores: int = 0
    ways: int = 0
    bw_units: int = 0

    def __add__(self, other: "Grant") -> "Grant":
        return Grant(self.cores + other.cores, self.ways + other.ways, self.bw_units + other.bw_units)

    def __sub__(self, other: "Grant") -> "Grant":
        return Grant(self.cores - other.cores, self.ways - other.ways, self.bw_units - other.bw_units)

    def dominates(self, other: "Grant") -> bool:
        return self.cores >= other.cores and self.ways >= other.ways and self.bw_units >= other.bw_units

    def clip(self, low: "Grant", high: "Grant") -> "Grant":
        return Grant(
            min(max(self.cores, low.cores), high.cores),
            min(max(self.ways, low.ways), high.ways),
            min(max(self.bw_units, low.bw_units), high.bw_units),
        )

    def minimum(self, other: "Grant") -> "Grant":
        return Grant(min(self.cores, other.cores), min(self.ways, other.ways), min(self.bw_units, other.bw_units))

    def is_empty(self) -> bool:
        return self.cores == 0 and self.ways == 0 and self.bw_units == 0

    def is_nonnegative(self) -> bool:
        return self.cores >= 0 and self.ways >= 0 and self.bw_units >= 0

    def as_tuple(self) -> tuple[int, int, int]:
        return self.cores, self.ways, self.bw_units


@dataclass(frozen=True)
class LatencySurface:
    """
    Capacity is the product of three concave factors:
      cores: linear up to ``core_knee`` then ``core_tail`` per extra core
      cache: logistic step around the working set ``cache_knee_mb``; the step
             is what produces the cliff
      bw:    saturating exponential with weight ``bw_weight``
    """
    name: str
    base_latency_ms: float
    capacity_scale: float
    core_knee: float
    core_tail: float
    cache_knee_mb: float
    cache_floor: float
    cliff_sharpness: float
    bw_weight: float
    ipc_peak: float = 1.5
    miss_rate: float = 20.0
    mem_traffic_gbps: float = 8.0
    footprint_mb: float = 1024.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.base_latency_ms <= 0 or self.cliff_sharpness <= 0:
            raise ValueError(f"{self.name}: base latency and cliff sharpness must be positive")
        if not 0.0 <= self.cache_floor < 1.0:
            raise ValueError(f"{self.name}: cache floor must lie in [0, 1)")


@dataclass(frozen=True)
class BeProfile:
    name: str
    core_weight: float = 1.0
    way_floor: float = 0.6
    way_weight: float = 3.0
    bw_floor: float = 0.5
    bw_weight: float = 2.0
    ipc_peak: float = 1.2
    mem_traffic_gbps: float = 10.0
    footprint_mb: float = 2048.0


class ServiceKind(str, Enum):
    LC = "LC"
    BE = "BE"


@dataclass
class ServiceInstance:
    service_id: str
    kind: ServiceKind
    load_schedule: tuple[tuple[int, float], ...] = ((0, 0.5),)
    arrival_ms: int = 0
    surface: Optional[LatencySurface] = None
    qos_target_ms: Optional[float] = None
    be_profile: Optional[BeProfile] = None
    queue_len: float = 0.0

    def __post_init__(self):
        if self.kind == ServiceKind.LC:
            if self.surface is None or self.qos_target_ms is None or self.qos_target_ms <= 0:
                raise ValueError(f"{self.service_id}: LC services need a surface and a positive QoS target")
            if not self.load_schedule:
                raise ValueError(f"{self.service_id}: empty load schedule")
            starts = [start for start, _ in self.load_schedule]
            if starts != sorted(starts):
                raise ValueError(f"{self.service_id}: load schedule must be sorted by start time")
        elif self.be_profile is None:
            raise ValueError(f"{self.service_id}: BE services need a profile")

    @property
    def priority(self) -> int:
        return 1 if self.kind == ServiceKind.LC else 0

    def load_level(self, t_ms: int) -> int:
        level = 0
        for i, (start, _) in enumerate(self.load_schedule):
            if start <= t_ms:
                level = i
        return level

    def load_at(self, t_ms: int) -> float:
        if self.kind == ServiceKind.BE:
            return 0.0
        return self.load_schedule[self.load_level(t_ms)][1]

    def fresh(self) -> "ServiceInstance":
        return replace(self, queue_len=0.0)


@dataclass(frozen=True)
class SharingPair:
    first: str
    second: str
    cores: int
    ways: int

    def involves(self, service_id: str) -> bool:
        return service_id in (self.first, self.second)

    def partner_of(self, service_id: str) -> str:
        return self.second if service_id == self.first else self.first


@dataclass(frozen=True)
class Allocation:
    """
    LC services hold private grants. BE members split ``be_pool`` evenly.
    A sharing pair marks cores/ways counted in both partners' grants but
    occupying the server only once.
    """
    grants: Mapping[str, Grant] = field(default_factory=dict)
    be_pool: Grant = Grant()
    be_members: tuple[str, ...] = ()
    sharing_pairs: tuple[SharingPair, ...] = ()

    def grant_of(self, service_id: str) -> Grant:
        if service_id in self.grants:
            return self.grants[service_id]
        if service_id in self.be_members:
            return self.be_pool
        return Grant()

    def shared_of(self, service_id: str) -> tuple[int, int]:
        for pair in self.sharing_pairs:
            if pair.involves(service_id):
                return pair.cores, pair.ways
        return 0, 0

    def pair_of(self, service_id: str) -> Optional[SharingPair]:
        for pair in self.sharing_pairs:
            if pair.involves(service_id):
                return pair
        return None

    def lc_usage(self) -> Grant:
        total = Grant()
        for grant in self.grants.values():
            total = total + grant
        for pair in self.sharing_pairs:
            total = total - Grant(pair.cores, pair.ways, 0)
        return total

    def used(self) -> Grant:
        return self.lc_usage() + self.be_pool

    def idle(self, server: ServerSpec) -> Grant:
        """Resources held by nobody, BE pool excluded."""
        return server.full_grant - self.used()

    def with_grant(self, service_id: str, grant: Grant) -> "Allocation":
        grants = dict(self.grants)
        grants[service_id] = grant
        return replace(self, grants=grants)

    def without(self, service_id: str) -> "Allocation":
        grants = {k: v for k, v in self.grants.items() if k != service_id}
        return replace(
            self,
            grants=grants,
            be_members=tuple(m for m in self.be_members if m != service_id),
            sharing_pairs=tuple(p for p in self.sharing_pairs if not p.involves(service_id)),
        )

    def with_be_pool(self, pool: Grant, members: Optional[tuple[str, ...]] = None) -> "Allocation":
        return replace(self, be_pool=pool, be_members=self.be_members if members is None else members)

    def with_pair(self, pair: SharingPair) -> "Allocation":
        return replace(self, sharing_pairs=self.sharing_pairs + (pair,))

    def validate(self, server: ServerSpec) -> None:
        for sid, grant in self.grants.items():
            if not grant.is_nonnegative():
                raise PartitionError(f"negative grant for {sid}: {grant}")
            if sid in self.be_members:
                raise PartitionError(f"{sid} is both an LC grant holder and a BE member")
        if not self.be_pool.is_nonnegative():
            raise PartitionError(f"negative BE pool: {self.be_pool}")
        partners: set[str] = set()
        for pair in self.sharing_pairs:
            if pair.first == pair.second:
                raise PartitionError(f"{pair.first} cannot share with itself")
            for sid in (pair.first, pair.second):
                if sid in partners:
                    raise PartitionError(f"{sid} appears in more than one sharing pair")
                partners.add(sid)
                grant = self.grants.get(sid)
                if grant is None:
                    raise PartitionError(f"sharing partner {sid} holds no LC grant")
                if pair.cores < 0 or pair.ways < 0 or grant.cores < pair.cores or grant.ways < pair.ways:
                    raise PartitionError(f"{sid} shares more than it holds")
        used = self.used()
        if not server.full_grant.dominates(used):
            raise PartitionError(f"allocation {used.as_tuple()} exceeds server {server.full_grant.as_tuple()}")


def _cache_factor(surface: LatencySurface, server: ServerSpec, ways):
    cache_mb = np.asarray(ways, dtype=float) * server.way_size_mb
    step = expit(surface.cliff_sharpness * (cache_mb - surface.cache_knee_mb))
    return surface.cache_floor + (1.0 - surface.cache_floor) * step


def _bw_factor(surface: LatencySurface, bw):
    bw = np.asarray(bw, dtype=float)
    beta = surface.bw_weight
    return -np.expm1(-beta * bw) / -np.expm1(-beta * BW_UNITS)


def capacity(surface: LatencySurface, server: ServerSpec, cores, ways, bw):
    """Served load (fraction of max load) on a grant; arrays broadcast."""
    c = np.asarray(cores, dtype=float)
    knee = surface.core_knee
    fc = np.minimum(c, knee) / knee + surface.core_tail * np.maximum(0.0, c - knee)
    fc = fc * (server.core_ghz / REFERENCE_GHZ)
    cap = surface.capacity_scale * fc * _cache_factor(surface, server, ways) * _bw_factor(surface, bw)
    return np.where(c > 0, cap, 0.0)


def latency_ms(surface: LatencySurface, server: ServerSpec, cores, ways, bw, load, queue_len=0.0):
    """Queueing-shaped latency: base / max(eps, 1 - load/capacity) plus backlog drain time."""
    cap = capacity(surface, server, cores, ways, bw)
    served = cap > 0
    safe = np.where(served, cap, 1.0)
    lat = surface.base_latency_ms / np.maximum(LATENCY_EPS, 1.0 - np.asarray(load) / safe)
    lat = lat + 1000.0 * np.asarray(queue_len) / safe
    lat = np.where(served, lat, UNSERVED_LATENCY_MS)
    return lat if np.ndim(lat) else float(lat)


def simulate_latency(
    service: ServiceInstance,
    grant: Grant,
    load: float,
    server: ServerSpec,
) -> float:
    if service.surface is None:
        raise ValueError(f"{service.service_id} has no latency surface")
    if not server.full_grant.dominates(grant) or not grant.is_nonnegative():
        raise ValueError(f"grant {grant} is outside {server.platform_id}")
    if not 0.0 < load <= 1.0:
        raise ValueError(f"load must lie in (0, 1], got {load}")
    return latency_ms(service.surface, server, grant.cores, grant.ways, grant.bw_units, load, service.queue_len)


def _concave(frac, weight: float):
    frac = np.asarray(frac, dtype=float)
    if weight < 1e-9:
        return frac
    return -np.expm1(-weight * frac) / -np.expm1(-weight)


def be_throughput(profile: BeProfile, cores, ways, bw, server: ServerSpec):
    """IPC-style throughput normalized to the profile running alone on the whole server."""
    c = np.asarray(cores, dtype=float)
    fc = _concave(c / server.n_cores, profile.core_weight)
    fw = profile.way_floor + (1.0 - profile.way_floor) * _concave(np.asarray(ways, dtype=float) / server.n_llc_ways, profile.way_weight)
    fb = profile.bw_floor + (1.0 - profile.bw_floor) * _concave(np.asarray(bw, dtype=float) / BW_UNITS, profile.bw_weight)
    tp = np.where(c > 0, fc * fw * fb, 0.0)
    return tp if np.ndim(tp) else float(tp)


def lc_counters(surface: LatencySurface, server: ServerSpec, cores, ways, bw, load, queue_len, jitter=None) -> dict:
    """Raw hardware-style counters of an LC service; vectorised over numpy arrays."""
    cores = np.asarray(cores, dtype=float)
    load = np.asarray(load, dtype=float)
    cap = capacity(surface, server, cores, ways, bw)
    served = np.minimum(load, cap)
    util = np.where(cap > 0, np.clip(load / np.where(cap > 0, cap, 1.0), 0.0, 1.0), 1.0)
    fw = _cache_factor(surface, server, ways)
    fb = _bw_factor(surface, bw)
    if jitter is None:
        jitter = np.ones((3,) + np.shape(cap))
    ipc = surface.ipc_peak * (0.35 + 0.65 * fw) * (0.6 + 0.4 * fb) * jitter[0]
    misses = surface.miss_rate * 1e6 * served * (1.05 - fw) * jitter[1]
    bw_cap = np.asarray(bw, dtype=float) / BW_UNITS * server.mem_bw_gbps
    mbl = np.minimum(bw_cap, surface.mem_traffic_gbps * served * (2.0 - fw) * jitter[2])
    return {
        "ipc": np.where(cores > 0, ipc, 0.0),
        "cache_misses_per_s": misses,
        "mbl": mbl,
        "cpu_usage_sum": 100.0 * cores * util,
        "virt_mem": surface.footprint_mb * (1.0 + 0.5 * load),
        "res_mem": surface.footprint_mb * (0.5 + 0.3 * served) + BACKLOG_MB_PER_LOAD_S * np.asarray(queue_len),
        "allocated_cores": cores,
        "allocated_cache": np.asarray(ways, dtype=float) * server.way_size_mb,
        "core_frequency": server.core_ghz * (1.0 + 0.1 * (1.0 - util)),
    }


@dataclass(frozen=True)
class ServiceTelemetry:
    service_id: str
    kind: ServiceKind
    timestamp_ms: int
    load: float
    latency_ms: float
    qos_target_ms: Optional[float]
    qos_met: bool
    cores: float
    ways: float
    bw_units: int
    queue_len: float
    be_throughput: float
    counters: Mapping[str, float]
    neighbor_cores: float = 0.0
    neighbor_cache: float = 0.0
    neighbor_mbl: float = 0.0

    def raw(self, name: str) -> float:
        if name == "neighbor_cores":
            return self.neighbor_cores
        if name == "neighbor_cache":
            return self.neighbor_cache
        if name == "neighbor_mbl":
            return self.neighbor_mbl
        return self.counters[name]

    def to_record(self) -> dict:
        record = {
            "service_id": self.service_id,
            "kind": self.kind.value,
            "timestamp_ms": self.timestamp_ms,
            "load": self.load,
            "latency_ms": self.latency_ms,
            "qos_target_ms": self.qos_target_ms,
            "qos_met": self.qos_met,
            "cores": self.cores,
            "ways": self.ways,
            "bw_units": self.bw_units,
            "queue_len": self.queue_len,
            "be_throughput": self.be_throughput,
            "neighbor_cores": self.neighbor_cores,
            "neighbor_cache": self.neighbor_cache,
            "neighbor_mbl": self.neighbor_mbl,
        }
        record.update({k: float(v) for k, v in self.counters.items()})
        return record


@dataclass(frozen=True)
class Snapshot:
    timestamp_ms: int
    services: Mapping[str, ServiceTelemetry]

    def __getitem__(self, service_id: str) -> ServiceTelemetry:
        try:
            return self.services[service_id]
        except KeyError:
            raise KeyError(f"service {service_id} is not in the snapshot at {self.timestamp_ms} ms")

    def __contains__(self, service_id: str) -> bool:
        return service_id in self.services

    def lc_ids(self) -> list[str]:
        return sorted(k for k, v in self.services.items() if v.kind == ServiceKind.LC)

    def be_ids(self) -> list[str]:
        return sorted(k for k, v in self.services.items() if v.kind == ServiceKind.BE)

    def all_met(self) -> bool:
        lcs = self.lc_ids()
        return bool(lcs) and all(self.services[s].qos_met for s in lcs)

    def to_records(self) -> list[dict]:
        return [self.services[k].to_record() for k in sorted(self.services)]


class SimServer:
    def __init__(
        self,
        spec: ServerSpec,
        services: Iterable[ServiceInstance],
        seed: int = 0,
        share_efficiency: float = 0.5,
    ):
        self.spec = spec
        self.services: dict[str, ServiceInstance] = {}
        for service in services:
            if service.service_id in self.services:
                raise ValueError(f"duplicate service id {service.service_id}")
            self.services[service.service_id] = service.fresh()
        self.seed = seed
        self.share_efficiency = share_efficiency
        self.clock_ms = 0
        self.step_index = 0
        self.allocation = Allocation()
        self._last: Optional[Snapshot] = None

    def active_ids(self) -> list[str]:
        return sorted(sid for sid, s in self.services.items() if s.arrival_ms <= self.clock_ms)

    def install(self, allocation: Allocation) -> Allocation:
        """All-or-nothing commit; a rejected allocation leaves the current one in place."""
        for sid in list(allocation.grants) + list(allocation.be_members):
            if sid not in self.services:
                raise PartitionError(f"unknown service {sid}")
        for sid in allocation.grants:
            if self.services[sid].kind != ServiceKind.LC:
                raise PartitionError(f"{sid} is a BE service and cannot hold a private grant")
        allocation.validate(self.spec)
        self.allocation = allocation
        self._last = None
        return allocation

    def effective(self, service_id: str, allocation: Optional[Allocation] = None) -> tuple[float, float, int]:
        """Cores and ways a service can use, shared units counting at the sharing efficiency."""
        allocation = allocation or self.allocation
        grant = allocation.grant_of(service_id)
        shared_c, shared_w = allocation.shared_of(service_id)
        if service_id in allocation.be_members:
            n = len(allocation.be_members)
            return grant.cores / n, grant.ways / n, grant.bw_units / n
        loss = 1.0 - self.share_efficiency
        return grant.cores - shared_c * loss, grant.ways - shared_w * loss, grant.bw_units

    def _jitter(self, service_id: str) -> np.ndarray:
        index = sorted(self.services).index(service_id)
        surface = self.services[service_id].surface
        noise_seed = surface.noise_seed if surface is not None else 0
        rng = np.random.default_rng([self.seed, noise_seed, self.step_index, index])
        return 1.0 + COUNTER_JITTER * rng.standard_normal(3)

    def _service_telemetry(self, sid: str, cores, ways, bw, load: float, queue: float) -> ServiceTelemetry:
        service = self.services[sid]
        if service.kind == ServiceKind.LC:
            surface = service.surface
            lat = latency_ms(surface, self.spec, cores, ways, bw, load, queue)
            counters = lc_counters(surface, self.spec, cores, ways, bw, load, queue, self._jitter(sid))
            return ServiceTelemetry(
                service_id=sid,
                kind=service.kind,
                timestamp_ms=self.clock_ms,
                load=load,
                latency_ms=float(lat),
                qos_target_ms=service.qos_target_ms,
                qos_met=bool(lat <= service.qos_target_ms),
                cores=float(cores),
                ways=float(ways),
                bw_units=int(round(bw)),
                queue_len=queue,
                be_throughput=0.0,
                counters={k: float(v) for k, v in counters.items()},
            )
        profile = service.be_profile
        tp = be_throughput(profile, cores, ways, bw, self.spec)
        counters = {
            "ipc": profile.ipc_peak * tp,
            "cache_misses_per_s": 0.0,
            "mbl": min(bw / BW_UNITS * self.spec.mem_bw_gbps, profile.mem_traffic_gbps * tp),
            "cpu_usage_sum": 100.0 * cores,
            "virt_mem": profile.footprint_mb,
            "res_mem": profile.footprint_mb,
            "allocated_cores": float(cores),
            "allocated_cache": ways * self.spec.way_size_mb,
            "core_frequency": self.spec.core_ghz,
        }
        return ServiceTelemetry(
            service_id=sid,
            kind=service.kind,
            timestamp_ms=self.clock_ms,
            load=0.0,
            latency_ms=0.0,
            qos_target_ms=None,
            qos_met=True,
            cores=float(cores),
            ways=float(ways),
            bw_units=int(round(bw)),
            queue_len=0.0,
            be_throughput=float(tp),
            counters=counters,
        )

    def _with_neighbors(self, services: dict[str, ServiceTelemetry]) -> dict[str, ServiceTelemetry]:
        total_cores = sum(t.cores for t in services.values())
        total_cache = sum(t.counters["allocated_cache"] for t in services.values())
        total_mbl = sum(t.counters["mbl"] for t in services.values())
        return {
            sid: replace(
                t,
                neighbor_cores=total_cores - t.cores,
                neighbor_cache=total_cache - t.counters["allocated_cache"],
                neighbor_mbl=total_mbl - t.counters["mbl"],
            )
            for sid, t in services.items()
        }

    def snapshot(self) -> Snapshot:
        """Telemetry at the current clock without advancing it."""
        if self._last is not None and self._last.timestamp_ms == self.clock_ms:
            return self._last
        services = {}
        for sid in self.active_ids():
            service = self.services[sid]
            cores, ways, bw = self.effective(sid)
            services[sid] = self._service_telemetry(sid, cores, ways, bw, service.load_at(self.clock_ms), service.queue_len)
        self._last = Snapshot(self.clock_ms, self._with_neighbors(services))
        return self._last

    def step(self, dt_ms: int) -> Snapshot:
        if dt_ms <= 0:
            raise ValueError("dt_ms must be positive")
        for sid in self.active_ids():
            service = self.services[sid]
            if service.kind != ServiceKind.LC:
                continue
            cores, ways, bw = self.effective(sid)
            load = service.load_at(self.clock_ms)
            cap = float(capacity(service.surface, self.spec, cores, ways, bw))
            service.queue_len = max(0.0, service.queue_len + (load - cap) * dt_ms / 1000.0)
        self.clock_ms += dt_ms
        self.step_index += 1
        self._last = None
        snap = self.snapshot()
        logger.debug("t=%d ms, %d services active", self.clock_ms, len(snap.services))
        return snap

    def probe(self, service_id: str, grant: Grant) -> ServiceTelemetry:
        """Telemetry the service would show on ``grant``; nothing is committed."""
        service = self.services[service_id]
        load = service.load_at(self.clock_ms)
        tele = self._service_telemetry(service_id, grant.cores, grant.ways, grant.bw_units, load, service.queue_len)
        others = self.snapshot()
        neighbors = [t for sid, t in others.services.items() if sid != service_id]
        return replace(
            tele,
            neighbor_cores=sum(t.cores for t in neighbors),
            neighbor_cache=sum(t.counters["allocated_cache"] for t in neighbors),
            neighbor_mbl=sum(t.counters["mbl"] for t in neighbors),
        )
