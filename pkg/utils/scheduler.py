"""
Central control loop.

Every monitor tick the scheduler settles the actions taken on the previous
tick (reward, replay, rollback), looks for arrivals, QoS violations and
over-provisioned services, places newcomers with Model-A and shepherds the
rest with Model-C, borrowing from neighbours through Model-B when the server
has nothing idle.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .agent import SchedulingAction, ShepherdAgent, Transition
from .config import Settings
from .decision_log import DecisionLog, grant_record
from .deprivation import DeprivationPlan, apply_plan, plan_deprivation
from .errors import InfeasibleError, PartitionError
from .features import NormalizationSpec, extract
from .predictor import OaaPredictor, QosPredictor
from .reward import compute_reward
from .simenv import Allocation, Grant, ServiceKind, SimServer, Snapshot

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    NEW_LC = "NewLC"
    NEW_BE = "NewBE"
    QOS_VIOLATION = "QosViolation"
    OVER_PROVISION = "OverProvision"


@dataclass(frozen=True, order=True)
class SchedulerEvent:
    timestamp_ms: int
    service_id: str
    kind: EventKind = field(compare=False)


class BaseScheduler:
    """Shared plumbing: admission bookkeeping, BE placement and atomic installs."""
    name: str = "base"

    def __init__(self, env: SimServer, settings: Settings, log: Optional[DecisionLog] = None):
        self.env = env
        self.server = env.spec
        self.settings = settings
        self.log = log if log is not None else DecisionLog(self.name)
        self.admitted: set[str] = set()
        self.queued: set[str] = set()

    @property
    def allocation(self) -> Allocation:
        return self.env.allocation

    def install_allocation(self, allocation: Allocation) -> Allocation:
        """All-or-nothing; PartitionError leaves the installed allocation untouched."""
        return self.env.install(allocation)

    def arrivals(self, snapshot: Snapshot) -> list[str]:
        return [sid for sid in sorted(snapshot.services) if sid not in self.admitted]

    def admit_be(self, service_id: str, timestamp_ms: int) -> None:
        """A BE service joins the existing BE partition or takes what LC services leave idle."""
        alloc = self.allocation
        if alloc.be_members:
            new = alloc.with_be_pool(alloc.be_pool, alloc.be_members + (service_id,))
            action = "join_be"
        else:
            new = alloc.with_be_pool(alloc.be_pool + alloc.idle(self.server), (service_id,))
            action = "map_idle"
        self.install_allocation(new)
        self.admitted.add(service_id)
        self.log.record(timestamp_ms, service_id, EventKind.NEW_BE.value, "alg1", action, None, new.be_pool)

    def absorb_idle(self) -> None:
        """BE services soak up whatever LC services left idle."""
        alloc = self.allocation
        if not alloc.be_members:
            return
        idle = alloc.idle(self.server)
        if idle.is_empty():
            return
        self.install_allocation(alloc.with_be_pool(alloc.be_pool + idle))

    def on_tick(self, snapshot: Snapshot) -> None:
        raise NotImplementedError


@dataclass
class _Pending:
    service_id: str
    state: np.ndarray
    action: SchedulingAction
    indicator: bool
    executed: bool
    involved: tuple[str, ...]
    prior_grants: dict[str, Grant]
    prior_pairs: tuple
    was_met: dict[str, bool]
    record: dict


class MultiModelScheduler(BaseScheduler):
    name = "osml+"

    def __init__(
        self,
        env: SimServer,
        settings: Settings,
        oaa_model: Optional[OaaPredictor],
        qos_model: QosPredictor,
        agent: ShepherdAgent,
        norm: NormalizationSpec,
        log: Optional[DecisionLog] = None,
        explore: bool = False,
        learn_online: bool = True,
    ):
        super().__init__(env, settings, log)
        self.oaa_model = oaa_model
        self.qos_model = qos_model
        self.agent = agent
        self.norm = norm
        self.explore = explore
        self.learn_online = learn_online
        self.oaa: dict[str, Grant] = {}
        self.load_level: dict[str, float] = {}
        self.frozen: dict[str, set[str]] = {}
        self.pending: list[_Pending] = []
        self.rewards: list[float] = []
        self.rollbacks = 0
        self._held = Grant()

    # -- monitoring ---------------------------------------------------------

    def monitor_tick(self, snapshot: Snapshot) -> list[SchedulerEvent]:
        events = []
        t = snapshot.timestamp_ms
        for sid in sorted(snapshot.services):
            tele = snapshot[sid]
            if sid not in self.admitted:
                kind = EventKind.NEW_LC if tele.kind == ServiceKind.LC else EventKind.NEW_BE
                events.append(SchedulerEvent(t, sid, kind))
                continue
            if tele.kind != ServiceKind.LC:
                continue
            if not tele.qos_met:
                events.append(SchedulerEvent(t, sid, EventKind.QOS_VIOLATION))
                continue
            grant = self.allocation.grant_of(sid)
            oaa = self.oaa.get(sid)
            if oaa is not None and grant.dominates(oaa) and grant != oaa:
                events.append(SchedulerEvent(t, sid, EventKind.OVER_PROVISION))
        return sorted(events)

    def on_tick(self, snapshot: Snapshot) -> None:
        self.settle(snapshot)
        self.refresh_oaa(snapshot)
        for event in self.monitor_tick(snapshot):
            if event.kind == EventKind.NEW_LC:
                self.handle_new_service(event.service_id, snapshot)
            elif event.kind == EventKind.NEW_BE:
                self.admit_be(event.service_id, event.timestamp_ms)
            else:
                self.shepherd(event.service_id, snapshot, event.kind)
        self.end_tick()

    def end_tick(self) -> None:
        self.absorb_idle()
        self._held = Grant()

    def preadmit(self, allocation: Allocation, oaa: dict[str, Grant], snapshot: Snapshot) -> None:
        """Start from a given allocation with known OAAs, as in training episodes."""
        self.install_allocation(allocation)
        self.admitted.update(allocation.grants)
        self.admitted.update(allocation.be_members)
        self.oaa.update(oaa)
        for sid in allocation.grants:
            self.load_level[sid] = snapshot[sid].load if sid in snapshot else 0.0

    # -- Model-A ------------------------------------------------------------

    def _oaa_target(self, telemetry) -> Grant:
        prediction = self.oaa_model.predict_telemetry(telemetry)
        grant = prediction.rcliff_grant if self.settings.allocate_at == "rcliff" else prediction.oaa_grant
        return grant.clip(Grant(1, 1, 1), self.server.full_grant)

    def refresh_oaa(self, snapshot: Snapshot) -> None:
        """Re-query Model-A for services whose load level moved."""
        for sid in sorted(self.load_level):
            if sid not in snapshot:
                continue
            tele = snapshot[sid]
            if tele.load == self.load_level[sid]:
                continue
            self.load_level[sid] = tele.load
            self.frozen.pop(sid, None)
            if self.oaa_model is not None:
                self.oaa[sid] = self._oaa_target(tele)
                logger.debug("t=%d %s load %.2f, OAA now %s", snapshot.timestamp_ms, sid, tele.load, self.oaa[sid])

    def handle_new_service(self, service_id: str, snapshot: Snapshot) -> None:
        t = snapshot.timestamp_ms
        if snapshot[service_id].kind == ServiceKind.BE:
            self.admit_be(service_id, t)
            return
        if self.oaa_model is None:
            raise RuntimeError("placing a new LC service needs Model-A")
        alloc = self.allocation
        free = self._free(alloc)
        probe = free + alloc.be_pool
        if probe.cores == 0 or probe.ways == 0 or probe.bw_units == 0:
            if service_id not in self.queued:
                logger.warning("t=%d %s queued: nothing idle to probe on", t, service_id)
                self.log.record(t, service_id, EventKind.NEW_LC.value, "alg1", "queued")
            self.queued.add(service_id)
            return
        self.queued.discard(service_id)
        target = self._oaa_target(self.env.probe(service_id, probe))
        self.oaa[service_id] = target
        self.load_level[service_id] = snapshot[service_id].load
        take = target.minimum(free)
        short = target - take
        new = alloc.with_grant(service_id, take)
        plan: Optional[DeprivationPlan] = None
        if not short.is_empty():
            try:
                plan = plan_deprivation(
                    service_id,
                    short,
                    new,
                    self._slowdown_fn(snapshot, new),
                    oaa_bw={k: v.bw_units for k, v in self.oaa.items()},
                    allowable=self.settings.allowable_slowdown,
                    share_efficiency=self.settings.share_efficiency,
                    upper_policy=self.settings.upper_policy,
                    upper_bound=self.settings.upper_slowdown_bound,
                )
                new = apply_plan(new, plan)
            except InfeasibleError as e:
                logger.warning("t=%d %s placed on idle resources only: %s", t, service_id, e)
        self.install_allocation(new)
        self.admitted.add(service_id)
        self.log.record(
            t,
            service_id,
            EventKind.NEW_LC.value,
            "alg1" if plan is None else "alg1+alg3",
            "grant_oaa",
            None,
            new.grants[service_id],
            oaa=grant_record(target),
            victims=[] if plan is None else list(plan.affected()),
        )

    # -- Model-B ------------------------------------------------------------

    def _slowdown_fn(self, snapshot: Snapshot, alloc: Allocation):
        def slowdown(sid: str, cores: float, ways: float) -> float:
            grant = alloc.grants[sid]
            return self.qos_model.predict_after(snapshot[sid], grant.cores - cores, grant.ways - ways).predicted_qos

        return slowdown

    def _free(self, alloc: Allocation) -> Grant:
        idle = alloc.idle(self.server) - self._held
        return Grant(max(0, idle.cores), max(0, idle.ways), max(0, idle.bw_units))

    # -- Model-C ------------------------------------------------------------

    def shepherd(self, service_id: str, snapshot: Snapshot, kind: EventKind = EventKind.QOS_VIOLATION) -> SchedulingAction:
        t = snapshot.timestamp_ms
        tele = snapshot[service_id]
        state = extract(snapshot, service_id, "C", self.norm, self.server)
        action = self.agent.select_action(state, explore=self.explore)
        before = self.allocation
        grant = before.grants[service_id]
        new_grant = grant
        new_alloc: Optional[Allocation] = None
        involved = (service_id,)
        note = ""

        if action.is_reclaim:
            candidate = grant - action.unit
            shared_c, shared_w = before.shared_of(service_id)
            if action.dimension in self.frozen.get(service_id, set()):
                note = "frozen"
            elif min(candidate.as_tuple()) < 1 or candidate.cores < shared_c or candidate.ways < shared_w:
                note = "infeasible"
            else:
                predicted = self.qos_model.predict_after(tele, candidate.cores, candidate.ways)
                if self.settings.guard_reclaim and not predicted.met:
                    note = "guarded"
                else:
                    new_grant = candidate
                    new_alloc = before.with_grant(service_id, candidate)
        elif action.is_grow:
            candidate = grant + action.unit
            if self._free(before).dominates(action.unit):
                new_grant = candidate
                new_alloc = before.with_grant(service_id, candidate)
            else:
                try:
                    plan = plan_deprivation(
                        service_id,
                        action.unit,
                        before,
                        self._slowdown_fn(snapshot, before),
                        oaa_bw={k: v.bw_units for k, v in self.oaa.items()},
                        allowable=self.settings.allowable_slowdown,
                        share_efficiency=self.settings.share_efficiency,
                        upper_policy=self.settings.upper_policy,
                        upper_bound=self.settings.upper_slowdown_bound,
                    )
                    new_alloc = apply_plan(before, plan)
                    new_grant = new_alloc.grants[service_id]
                    involved = (service_id,) + tuple(s for s in plan.affected() if s != service_id)
                except InfeasibleError:
                    note = "infeasible"

        executed = False
        if new_alloc is not None:
            try:
                self.install_allocation(new_alloc)
                executed = True
                if action.is_reclaim:
                    self._held = self._held + action.unit
            except PartitionError as e:
                logger.warning("t=%d %s %s rejected: %s", t, service_id, action.name, e)
                note = "rejected"
        if not executed:
            new_grant = grant
        indicator = self.qos_model.predict_after(tele, new_grant.cores, new_grant.ways).met
        record = self.log.record(
            t,
            service_id,
            kind.value,
            "alg2",
            action.name.lower(),
            grant,
            new_grant,
            executed=executed,
            note=note,
            victims=list(involved[1:]),
        )
        self.pending.append(
            _Pending(
                service_id=service_id,
                state=state,
                action=action,
                indicator=indicator,
                executed=executed,
                involved=involved,
                prior_grants={sid: before.grants[sid] for sid in involved},
                prior_pairs=before.sharing_pairs,
                was_met={sid: snapshot[sid].qos_met for sid in involved if sid in snapshot},
                record=record,
            )
        )
        return action

    def settle(self, snapshot: Snapshot) -> None:
        """Reward, store and learn from last tick's actions; roll back the ones that broke QoS."""
        if not self.pending:
            return
        lcs = snapshot.lc_ids()
        latencies = [snapshot[s].latency_ms for s in lcs]
        targets = [snapshot[s].qos_target_ms for s in lcs]
        usage = self.allocation.lc_usage().as_tuple()
        limits = self.server.full_grant.as_tuple()
        for p in self.pending:
            reward = compute_reward(p.indicator, latencies, targets, usage, limits)
            next_state = extract(snapshot, p.service_id, "C", self.norm, self.server)
            self.agent.remember(Transition(p.state, p.action, reward, next_state))
            if self.learn_online:
                self.agent.update()
            self.rewards.append(reward)
            p.record["reward"] = reward
            broken = [s for s in p.involved if p.was_met.get(s) and s in snapshot and not snapshot[s].qos_met]
            if p.executed and broken:
                p.record["rollback"] = self._roll_back(p, snapshot.timestamp_ms)
        self.pending = []

    def _roll_back(self, p: _Pending, t: int) -> bool:
        alloc = self.allocation
        for sid, grant in p.prior_grants.items():
            alloc = alloc.with_grant(sid, grant)
        kept = tuple(pair for pair in alloc.sharing_pairs if not any(pair.involves(s) for s in p.involved))
        restored = tuple(pair for pair in p.prior_pairs if any(pair.involves(s) for s in p.involved))
        alloc = Allocation(alloc.grants, alloc.be_pool, alloc.be_members, kept + restored)
        over = alloc.used() - self.server.full_grant
        over = Grant(max(0, over.cores), max(0, over.ways), max(0, over.bw_units))
        if not over.is_empty():
            alloc = alloc.with_be_pool(alloc.be_pool - over)
        try:
            self.install_allocation(alloc)
        except PartitionError as e:
            logger.warning("t=%d rollback of %s on %s skipped: %s", t, p.action.name, p.service_id, e)
            return False
        if p.action.is_reclaim:
            self.frozen.setdefault(p.service_id, set()).add(p.action.dimension)
        self.rollbacks += 1
        self.log.record(
            t,
            p.service_id,
            "Rollback",
            "alg2",
            f"undo_{p.action.name.lower()}",
            None,
            p.prior_grants[p.service_id],
            rollback=True,
        )
        return True
