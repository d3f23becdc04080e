from typing import Sequence

RESOURCE_TYPES = 3
# least resource term once every target is met, so that band stays above 2
MET_FLOOR = 2.0**-10


def qos_term(latencies: Sequence[float], targets: Sequence[float]) -> float:
    """Mean over LC services of min(1, target / latency); zero latency counts as 1."""
    total = 0.0
    for lat, target in zip(latencies, targets):
        total += 1.0 if lat <= 0 else min(1.0, target / lat)
    return total / len(latencies)


def qos_reward(indicator: bool, latencies: Sequence[float], targets: Sequence[float]) -> float:
    return (1.0 if indicator else 0.0) + qos_term(latencies, targets)


def resource_term(usage: Sequence[float], limits: Sequence[float]) -> float:
    """Mean share of each resource left to BE services."""
    total = 0.0
    for used, limit in zip(usage, limits):
        total += 1.0 - used / limit
    return total / len(usage)


def compute_reward(
    indicator: bool,
    latencies: Sequence[float],
    targets: Sequence[float],
    usage: Sequence[float],
    limits: Sequence[float],
) -> float:
    """
    Piecewise reward of one shepherding step.

    :param indicator: Model-B's verdict that the acted-on service meets QoS
    :param latencies: latency of every LC service after the step
    :param targets: QoS target of every LC service
    :param usage: cores, ways and bandwidth units held by LC services
    :param limits: server totals for the same three resources
    :return: I + mean QoS ratio in [0, 2] while any target is missed,
             2 + mean BE-available share in (2, 3] once all are met
    """
    if not latencies or len(latencies) != len(targets):
        raise ValueError("need one target per LC latency and at least one LC service")
    if len(usage) != RESOURCE_TYPES or len(limits) != RESOURCE_TYPES:
        raise ValueError(f"usage and limits cover exactly {RESOURCE_TYPES} resource types")
    if all(lat <= target for lat, target in zip(latencies, targets)):
        return 2.0 + max(MET_FLOOR, resource_term(usage, limits))
    return qos_reward(indicator, latencies, targets)
