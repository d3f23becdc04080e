"""
Finding resources for a shortfall of M cores, N ways and B bandwidth units.

BE services give first. What is left comes from at most three LC
neighbours, choosing the exact split with the smallest summed predicted
slowdown; when no split keeps every victim within the allowable slowdown,
the requester shares cores and ways with a single neighbour instead.
"""
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Mapping, Optional

from .errors import InfeasibleError
from .simenv import Allocation, Grant, SharingPair

logger = logging.getLogger(__name__)

MAX_VICTIMS = 3

# (service_id, cores taken, ways taken) -> predicted latency / target afterwards
SlowdownFn = Callable[[str, float, float], float]


@dataclass(frozen=True)
class Victim:
    service_id: str
    cores: int
    ways: int
    slowdown: float


@dataclass(frozen=True)
class SharingOffer:
    partner_id: str
    cores: int
    ways: int
    slowdown: float


@dataclass(frozen=True)
class DeprivationPlan:
    requester: str
    need: Grant
    from_be: Grant = Grant()
    victims: tuple[Victim, ...] = ()
    bw_victims: tuple[tuple[str, int], ...] = ()
    sharing: Optional[SharingOffer] = None

    @property
    def total_slowdown(self) -> float:
        total = 0.0
        for v in self.victims:
            total += v.slowdown
        return total

    def victim_ids(self) -> tuple[str, ...]:
        return tuple(v.service_id for v in self.victims)

    def affected(self) -> tuple[str, ...]:
        ids = {v.service_id for v in self.victims} | {sid for sid, _ in self.bw_victims}
        if self.sharing is not None:
            ids.add(self.sharing.partner_id)
        return tuple(sorted(ids))


def victim_capacity(allocation: Allocation, service_id: str) -> tuple[int, int]:
    """Cores and ways an LC service can give while keeping one of each and its shared units."""
    grant = allocation.grants[service_id]
    shared_c, shared_w = allocation.shared_of(service_id)
    return max(0, grant.cores - max(1, shared_c)), max(0, grant.ways - max(1, shared_w))


def victim_options(
    allocation: Allocation,
    requester: str,
    cores: int,
    ways: int,
    slowdown: SlowdownFn,
    allowable: float,
) -> dict[str, dict[tuple[int, int], float]]:
    """Allowable (m, n) deprivations per LC neighbour, scored by predicted slowdown."""
    options = {}
    for sid in sorted(allocation.grants):
        if sid == requester:
            continue
        max_c, max_w = victim_capacity(allocation, sid)
        scored = {}
        for m in range(min(cores, max_c) + 1):
            for n in range(min(ways, max_w) + 1):
                if m == 0 and n == 0:
                    continue
                s = slowdown(sid, m, n)
                if s <= allowable:
                    scored[(m, n)] = s
        if scored:
            options[sid] = scored
    return options


def best_combination(
    options: Mapping[str, Mapping[tuple[int, int], float]],
    cores: int,
    ways: int,
    max_victims: int = MAX_VICTIMS,
) -> Optional[tuple[Victim, ...]]:
    """
    Exact-sum split of (cores, ways) over at most ``max_victims`` services with
    the least total slowdown; ties go to fewer victims, then lower ids.
    """
    best_key = None
    best: Optional[tuple[Victim, ...]] = None
    ids = sorted(options)
    for k in range(1, max_victims + 1):
        for subset in combinations(ids, k):
            found = _best_assignment([options[sid] for sid in subset], cores, ways)
            if found is None:
                continue
            total, picks = found
            key = (total, k, subset)
            if best_key is None or key < best_key:
                best_key = key
                best = tuple(Victim(sid, m, n, s) for sid, (m, n, s) in zip(subset, picks))
    return best


def _best_assignment(opts: list, cores: int, ways: int):
    best = None

    def walk(i: int, c_left: int, w_left: int, total: float, picks: list):
        nonlocal best
        if i == len(opts) - 1:
            s = opts[i].get((c_left, w_left))
            if s is None:
                return
            candidate = (total + s, picks + [(c_left, w_left, s)])
            if best is None or candidate[0] < best[0]:
                best = candidate
            return
        for (m, n) in sorted(opts[i]):
            if m <= c_left and n <= w_left:
                walk(i + 1, c_left - m, w_left - n, total + opts[i][(m, n)], picks + [(m, n, opts[i][(m, n)])])

    walk(0, cores, ways, 0.0, [])
    return best


def _take_bandwidth(
    allocation: Allocation,
    requester: str,
    units: int,
    oaa_bw: Mapping[str, int],
    affected: frozenset = frozenset(),
    max_victims: int = MAX_VICTIMS,
) -> tuple[tuple[str, int], ...]:
    """
    One unit at a time from the LC neighbour furthest above its OAA bandwidth.
    Services already in ``affected`` count toward ``max_victims``; once it is
    reached only they can give.
    """
    taken: dict[str, int] = {}
    donors = set(affected)
    for _ in range(units):
        best_sid, best_slack = None, 0
        for sid in sorted(allocation.grants):
            if sid == requester or (sid not in donors and len(donors) >= max_victims):
                continue
            held = allocation.grants[sid].bw_units - taken.get(sid, 0)
            slack = held - max(1, oaa_bw.get(sid, 1))
            if slack > best_slack:
                best_sid, best_slack = sid, slack
        if best_sid is None:
            raise InfeasibleError(f"{requester}: no neighbour holds spare bandwidth")
        taken[best_sid] = taken.get(best_sid, 0) + 1
        donors.add(best_sid)
    return tuple(sorted(taken.items()))


def _sharing_offer(
    allocation: Allocation,
    requester: str,
    cores: int,
    ways: int,
    slowdown: SlowdownFn,
    share_efficiency: float,
) -> Optional[SharingOffer]:
    if allocation.pair_of(requester) is not None:
        return None
    loss = 1.0 - share_efficiency
    best: Optional[SharingOffer] = None
    for sid in sorted(allocation.grants):
        if sid == requester or allocation.pair_of(sid) is not None:
            continue
        grant = allocation.grants[sid]
        if grant.cores < cores or grant.ways < ways:
            continue
        s = slowdown(sid, cores * loss, ways * loss)
        if best is None or s < best.slowdown:
            best = SharingOffer(sid, cores, ways, s)
    return best


def plan_deprivation(
    requester: str,
    need: Grant,
    allocation: Allocation,
    slowdown: SlowdownFn,
    oaa_bw: Optional[Mapping[str, int]] = None,
    allowable: float = 1.0,
    share_efficiency: float = 0.5,
    upper_policy: str = "allow",
    upper_bound: float = 2.0,
    max_victims: int = MAX_VICTIMS,
) -> DeprivationPlan:
    """Raises InfeasibleError when even sharing cannot cover ``need``; nothing is executed here."""
    if not need.is_nonnegative() or need.is_empty():
        raise ValueError(f"deprivation needs a positive request, got {need.as_tuple()}")
    from_be = need.minimum(allocation.be_pool)
    rest = need - from_be
    victims: tuple[Victim, ...] = ()
    offer: Optional[SharingOffer] = None
    if rest.cores > 0 or rest.ways > 0:
        options = victim_options(allocation, requester, rest.cores, rest.ways, slowdown, allowable)
        victims = best_combination(options, rest.cores, rest.ways, max_victims) or ()
        if not victims:
            offer = _share(allocation, requester, rest, slowdown, share_efficiency, upper_policy, upper_bound)
    bw_victims = ()
    if rest.bw_units > 0:
        affected = frozenset(v.service_id for v in victims) | frozenset([offer.partner_id] if offer else [])
        bw_victims = _take_bandwidth(allocation, requester, rest.bw_units, oaa_bw or {}, affected, max_victims)
    return DeprivationPlan(requester, need, from_be, victims=victims, bw_victims=bw_victims, sharing=offer)


def _share(
    allocation: Allocation,
    requester: str,
    rest: Grant,
    slowdown: SlowdownFn,
    share_efficiency: float,
    upper_policy: str,
    upper_bound: float,
) -> SharingOffer:
    offer = _sharing_offer(allocation, requester, rest.cores, rest.ways, slowdown, share_efficiency)
    if offer is None:
        raise InfeasibleError(f"{requester}: cannot find {rest.cores} cores / {rest.ways} ways, not even by sharing")
    approved = upper_policy == "allow" or (upper_policy == "threshold" and offer.slowdown <= upper_bound)
    logger.warning(
        "%s shares %d cores / %d ways with %s, predicted slowdown %.3f (%s)",
        requester,
        offer.cores,
        offer.ways,
        offer.partner_id,
        offer.slowdown,
        "approved" if approved else "denied",
    )
    if not approved:
        raise InfeasibleError(f"{requester}: sharing with {offer.partner_id} denied by the upper scheduler")
    return offer


def apply_plan(allocation: Allocation, plan: DeprivationPlan) -> Allocation:
    alloc = allocation.with_be_pool(allocation.be_pool - plan.from_be)
    for v in plan.victims:
        alloc = alloc.with_grant(v.service_id, alloc.grants[v.service_id] - Grant(v.cores, v.ways, 0))
    for sid, units in plan.bw_victims:
        alloc = alloc.with_grant(sid, alloc.grants[sid] - Grant(0, 0, units))
    current = alloc.grants.get(plan.requester, Grant())
    alloc = alloc.with_grant(plan.requester, current + plan.need)
    if plan.sharing is not None:
        first, second = sorted((plan.requester, plan.sharing.partner_id))
        alloc = alloc.with_pair(SharingPair(first, second, plan.sharing.cores, plan.sharing.ways))
    return alloc
