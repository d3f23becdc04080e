"""Comparator schedulers: one-dimension-at-a-time heuristic and Bayesian optimization."""
import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm, qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel

from .config import Settings
from .decision_log import DecisionLog
from .errors import PartitionError
from .scheduler import BaseScheduler, EventKind
from .simenv import BW_UNITS, Allocation, Grant, ServiceKind, SimServer, Snapshot

logger = logging.getLogger(__name__)

DIMENSIONS = ("cores", "ways", "bw")
_UNIT = {"cores": Grant(1, 0, 0), "ways": Grant(0, 1, 0), "bw": Grant(0, 0, 1)}


def _amount(grant: Grant, dim: str) -> int:
    return {"cores": grant.cores, "ways": grant.ways, "bw": grant.bw_units}[dim]


def latency_ratio(snapshot: Snapshot, service_id: str) -> float:
    tele = snapshot[service_id]
    return tele.latency_ms / tele.qos_target_ms


class HeuristicScheduler(BaseScheduler):
    """
    Splits cores, ways and bandwidth equally between LC services, then every
    interval hands one unit of one resource to the worst violator. The
    resource tried moves on whenever the last unit did not help.
    """
    name = "heuristic"

    def __init__(self, env: SimServer, settings: Settings, log: Optional[DecisionLog] = None):
        super().__init__(env, settings, log)
        self.priority = tuple(d.strip() for d in settings.heuristic_priority.split(","))
        if sorted(self.priority) != sorted(DIMENSIONS):
            raise ValueError(f"heuristic priority must order {DIMENSIONS}, got {self.priority}")
        self.dim_index: dict[str, int] = {}
        self.last_ratio: dict[str, float] = {}

    def lc_ids(self) -> list[str]:
        return sorted(self.allocation.grants)

    def on_tick(self, snapshot: Snapshot) -> None:
        arrivals = self.arrivals(snapshot)
        new_lcs = [s for s in arrivals if snapshot[s].kind == ServiceKind.LC]
        if new_lcs:
            self.admit_equal(new_lcs, snapshot.timestamp_ms, snapshot)
        for sid in arrivals:
            if snapshot[sid].kind == ServiceKind.BE:
                self.admit_be(sid, snapshot.timestamp_ms)
        # the snapshot predates this tick's admissions
        if not arrivals and snapshot.timestamp_ms % self.settings.heuristic_interval_ms == 0:
            self.heuristic_step(snapshot)
        self.absorb_idle()

    def admit_equal(self, new_ids: list[str], t: int, snapshot: Snapshot) -> None:
        """Newcomers get an equal share, taken from idle, then BE, then the richest LC neighbours."""
        k = len(self.lc_ids()) + len(new_ids)
        share = Grant(
            max(1, self.server.n_cores // k),
            max(1, self.server.n_llc_ways // k),
            max(1, BW_UNITS // k),
        )
        alloc = self.allocation
        for sid in new_ids:
            alloc = alloc.with_grant(sid, Grant())
            for dim in DIMENSIONS:
                for _ in range(_amount(share, dim)):
                    moved = self._take_unit(alloc, dim, sid, snapshot, floor=share)
                    if moved is None:
                        break
                    alloc = moved[0].with_grant(sid, moved[0].grants[sid] + _UNIT[dim])
            self.admitted.add(sid)
        self.install_allocation(alloc)
        for sid in new_ids:
            self.log.record(t, sid, EventKind.NEW_LC.value, "equal_partition", "grant_share", None, alloc.grants[sid])

    def _take_unit(
        self,
        alloc: Allocation,
        dim: str,
        receiver: str,
        snapshot: Snapshot,
        floor: Grant = Grant(1, 1, 1),
    ) -> Optional[tuple[Allocation, str]]:
        """Free one unit of ``dim``: idle first, then the BE pool, then the LC neighbour with most slack."""
        unit = _UNIT[dim]
        if _amount(alloc.idle(self.server), dim) > 0:
            return alloc, "idle"
        if _amount(alloc.be_pool, dim) > 0:
            return alloc.with_be_pool(alloc.be_pool - unit), "be"
        best, best_key = None, None
        for sid in sorted(alloc.grants):
            if sid == receiver or alloc.pair_of(sid) is not None:
                continue
            held = _amount(alloc.grants[sid], dim)
            if held <= max(1, _amount(floor, dim)):
                continue
            ratio = latency_ratio(snapshot, sid) if sid in snapshot else 0.0
            key = (ratio, -held, sid)
            if best_key is None or key < best_key:
                best, best_key = sid, key
        if best is None:
            return None
        return alloc.with_grant(best, alloc.grants[best] - unit), best

    def heuristic_step(self, snapshot: Snapshot) -> Optional[str]:
        """At most one single-unit adjustment for the worst violator; returns the service adjusted."""
        violators = [s for s in self.lc_ids() if s in snapshot and not snapshot[s].qos_met]
        if not violators:
            return None
        worst = min(violators, key=lambda s: (-latency_ratio(snapshot, s), s))
        ratio = latency_ratio(snapshot, worst)
        index = self.dim_index.get(worst, 0)
        if worst in self.last_ratio and ratio >= self.last_ratio[worst]:
            index = (index + 1) % len(self.priority)
        self.last_ratio[worst] = ratio
        alloc = self.allocation
        for attempt in range(len(self.priority)):
            dim = self.priority[(index + attempt) % len(self.priority)]
            moved = self._take_unit(alloc, dim, worst, snapshot)
            if moved is None:
                continue
            new, source = moved
            before = alloc.grants[worst]
            new = new.with_grant(worst, before + _UNIT[dim])
            try:
                self.install_allocation(new)
            except PartitionError as e:
                logger.warning("t=%d heuristic step for %s rejected: %s", snapshot.timestamp_ms, worst, e)
                return None
            self.dim_index[worst] = (index + attempt) % len(self.priority)
            self.log.record(
                snapshot.timestamp_ms,
                worst,
                EventKind.QOS_VIOLATION.value,
                "heuristic",
                f"{dim}_up",
                before,
                new.grants[worst],
                source=source,
            )
            return worst
        self.log.record(snapshot.timestamp_ms, worst, EventKind.QOS_VIOLATION.value, "heuristic", "no_source")
        return None


@dataclass(frozen=True)
class BoSample:
    x: np.ndarray
    allocation: Allocation
    objective: float
    acquisition: float


def fit_surrogate(X: np.ndarray, y: np.ndarray, seed: int = 0) -> GaussianProcessRegressor:
    """Anisotropic squared-exponential GP; falls back to a jittered, fixed kernel when fitting fails."""
    d = X.shape[1]
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * RBF(np.ones(d), (1e-2, 1e2)) + WhiteKernel(1e-6, (1e-10, 1e-1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        try:
            return GaussianProcessRegressor(kernel, normalize_y=True, random_state=seed).fit(X, y)
        except (np.linalg.LinAlgError, ValueError) as e:
            logger.debug("GP fit failed (%s), refitting with jitter", e)
            return GaussianProcessRegressor(kernel, alpha=1e-3, optimizer=None, normalize_y=True).fit(X, y)


def expected_improvement(gp: GaussianProcessRegressor, X: np.ndarray, best: float) -> np.ndarray:
    mu, sigma = gp.predict(X, return_std=True)
    sigma = np.maximum(sigma, 1e-12)
    gain = mu - best
    z = gain / sigma
    return gain * norm.cdf(z) + sigma * norm.pdf(z)


def ei_threshold(best: float, fraction: float) -> float:
    return fraction * abs(best) if best > 0 else fraction


def split_units(total: int, weights: np.ndarray, n_lc: int) -> list[int]:
    """Largest-remainder split of ``total`` by ``weights``; the first ``n_lc`` entries get at least one."""
    spare = total - n_lc
    if spare < 0:
        raise PartitionError(f"{total} units cannot give one to each of {n_lc} services")
    w = np.asarray(weights, dtype=float) + 1e-3
    raw = w / w.sum() * spare
    counts = np.floor(raw).astype(int)
    order = np.lexsort((np.arange(len(w)), -(raw - counts)))
    for i in order[: spare - counts.sum()]:
        counts[i] += 1
    counts[:n_lc] += 1
    return [int(c) for c in counts]


class BoScheduler(BaseScheduler):
    """
    Samples whole allocations every interval, modelling the objective with a GP
    and picking the next sample by expected improvement. Sampling stops when the
    best expected improvement is small or the sample cap is reached; the best
    allocation seen is then kept until arrivals or load changes restart it.
    """
    name = "bo"

    def __init__(self, env: SimServer, settings: Settings, log: Optional[DecisionLog] = None, seed: int = 0):
        super().__init__(env, settings, log)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.samples: list[BoSample] = []
        self.pending: Optional[tuple[np.ndarray, Allocation, float]] = None
        self.terminated = False
        self.loads: dict[str, float] = {}
        self._initial: Optional[np.ndarray] = None

    def lc_ids(self) -> list[str]:
        return sorted(s for s in self.admitted if self.env.services[s].kind == ServiceKind.LC)

    @property
    def dimension(self) -> int:
        return 3 * (len(self.lc_ids()) + (1 if self.allocation.be_members else 0))

    def restart(self) -> None:
        self.samples = []
        self.pending = None
        self.terminated = False
        self._initial = None

    def on_tick(self, snapshot: Snapshot) -> None:
        disturbed = False
        for sid in self.arrivals(snapshot):
            if snapshot[sid].kind == ServiceKind.BE:
                self.admit_be(sid, snapshot.timestamp_ms)
            else:
                self.admitted.add(sid)
                self.install_allocation(self.allocation.with_grant(sid, Grant()))
            disturbed = True
        for sid in self.lc_ids():
            load = snapshot[sid].load
            if self.loads.get(sid) != load:
                disturbed = disturbed or sid in self.loads
                self.loads[sid] = load
        if disturbed:
            self.restart()
        if snapshot.timestamp_ms % self.settings.bo_interval_ms == 0 and self.lc_ids():
            self.bo_step(snapshot)
        self.absorb_idle()

    def objective(self, snapshot: Snapshot) -> float:
        """1 + mean BE throughput when every LC meets QoS, else the mean QoS ratio below 1."""
        lcs = [s for s in self.lc_ids() if s in snapshot]
        ratios = [min(1.0, snapshot[s].qos_target_ms / snapshot[s].latency_ms) if snapshot[s].latency_ms > 0 else 1.0 for s in lcs]
        if all(snapshot[s].qos_met for s in lcs):
            bes = snapshot.be_ids()
            tp = float(np.mean([snapshot[s].be_throughput for s in bes])) if bes else 0.0
            return 1.0 + tp
        return float(np.mean(ratios)) - 1.0 if ratios else -1.0

    def decode(self, x: np.ndarray) -> Allocation:
        lcs = self.lc_ids()
        has_be = bool(self.allocation.be_members)
        per = len(lcs) + (1 if has_be else 0)
        totals = (self.server.n_cores, self.server.n_llc_ways, BW_UNITS)
        counts = [split_units(total, x[r * per : (r + 1) * per], len(lcs)) for r, total in enumerate(totals)]
        grants = {sid: Grant(counts[0][i], counts[1][i], counts[2][i]) for i, sid in enumerate(lcs)}
        pool = Grant(counts[0][-1], counts[1][-1], counts[2][-1]) if has_be else Grant()
        return Allocation(grants, pool, self.allocation.be_members, ())

    def _finish(self, t: int) -> None:
        self.terminated = True
        best = max(self.samples, key=lambda s: s.objective)
        self.install_allocation(best.allocation)
        self.log.record(t, "*", "Terminate", "bo", "install_best", objective=best.objective, samples=len(self.samples))

    def bo_step(self, snapshot: Snapshot) -> Optional[Allocation]:
        """Record the last sample, then install the next one; None once sampling has stopped."""
        t = snapshot.timestamp_ms
        if self.pending is not None:
            x, alloc, acq = self.pending
            self.samples.append(BoSample(x, alloc, self.objective(snapshot), acq))
            self.pending = None
        if self.terminated:
            return None
        n = len(self.samples)
        d = self.dimension
        if n >= self.settings.bo_max_samples:
            self._finish(t)
            return None
        if n < self.settings.bo_initial_samples:
            if self._initial is None:
                sampler = qmc.LatinHypercube(d=d, seed=self.seed + n)
                self._initial = sampler.random(self.settings.bo_initial_samples)
            x, acq = self._initial[n], float("nan")
        else:
            X = np.stack([s.x for s in self.samples])
            y = np.array([s.objective for s in self.samples])
            gp = fit_surrogate(X, y, self.seed)
            best = self.samples[int(np.argmax(y))]
            candidates = self.rng.random((self.settings.bo_candidates, d))
            local = np.clip(best.x + 0.1 * self.rng.standard_normal((self.settings.bo_candidates // 4, d)), 0.0, 1.0)
            candidates = np.vstack([candidates, local])
            ei = expected_improvement(gp, candidates, float(y.max()))
            if ei.max() < ei_threshold(float(y.max()), self.settings.ei_threshold):
                self._finish(t)
                return None
            i = int(np.argmax(ei))
            x, acq = candidates[i], float(ei[i])
        alloc = self.decode(x)
        self.install_allocation(alloc)
        self.pending = (x, alloc, acq)
        self.log.record(t, "*", "Sample", "bo", "install_sample", sample=n, acquisition=None if np.isnan(acq) else acq)
        return alloc
