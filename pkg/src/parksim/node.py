"""Sensor application (hybrid periodic / event-driven reporting) and gradient routing."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping

from .engine import NS_PER_S
from .errors import ConfigError, RoutingHoleError

HYBRID, EVENT = "hybrid", "event"
IMMEDIATE, PIGGYBACKED = "immediate", "piggybacked"


@dataclass(frozen=True)
class AppConfig:
    period: float = 120.0
    threshold: float = 30.0
    mode: str = HYBRID

    def problems(self) -> list[str]:
        out = []
        if self.mode not in (HYBRID, EVENT):
            out.append(f"unknown app mode {self.mode!r}")
        if self.period <= 0:
            out.append("period must be positive")
        if self.threshold <= 0:
            out.append("threshold must be positive")
        if self.threshold > self.period:
            out.append("threshold exceeds period")
        return out


@dataclass
class InfoRecord:
    """One occupancy change and its journey to the gateway (times in ns)."""

    uid: int
    sensor: int
    sensed_at: int
    mode: str
    hops: int
    sent_at: int | None = None
    delivered_at: int | None = None

    @property
    def delay(self) -> float | None:
        if self.delivered_at is None:
            return None
        return (self.delivered_at - self.sensed_at) / NS_PER_S


def app_on_state_change(t_now: float, t_next: float, cfg: AppConfig) -> tuple[str, float]:
    """Decide whether a change rides on the next periodic frame.

    Returns ``(PIGGYBACKED, t_next)`` when the periodic frame is closer than
    the threshold (strictly), else ``(IMMEDIATE, t_now)``.
    """
    if cfg.mode == EVENT:
        return IMMEDIATE, t_now
    if abs(t_now - t_next) < cfg.threshold:
        return PIGGYBACKED, t_next
    return IMMEDIATE, t_now


def next_periodic_fire(t_now: float, phase: float, period: float) -> float:
    """First periodic fire time at or after ``t_now`` for fires at phase + m * period."""
    if t_now <= phase:
        return phase
    m = -(-(t_now - phase) // period)
    return phase + m * period


class ModelAssumptionError(ValueError):
    pass


def delay_split_prediction(cfg: AppConfig, t_cycle: float) -> tuple[float, float]:
    """Predicted fractions of information delivered in the first cycle and after it."""
    if t_cycle >= cfg.threshold:
        raise ModelAssumptionError("cycle length must be shorter than the threshold")
    w, tau = cfg.period, cfg.threshold
    p_first = (w - tau) / w + t_cycle / w
    return p_first, 1.0 - p_first


# ------------------------------------------------------------------ routing


@dataclass(frozen=True)
class GradientTable:
    gateway: int
    hops: dict[int, int]
    next_hop: dict[int, int]

    def path(self, node: int) -> list[int]:
        out = [node]
        while out[-1] != self.gateway:
            out.append(self.next_hop[out[-1]])
        return out

    def children(self, node: int) -> list[int]:
        return sorted(n for n, p in self.next_hop.items() if p == node)


def build_gradient(adjacency: Mapping[int, set[int]], gateway: int) -> GradientTable:
    """Breadth-first hop counts from the gateway; next hop is the lowest-id neighbour one hop closer."""
    hops = {gateway: 0}
    frontier = deque([gateway])
    while frontier:
        u = frontier.popleft()
        for v in sorted(adjacency.get(u, ())):
            if v not in hops:
                hops[v] = hops[u] + 1
                frontier.append(v)
    missing = sorted(set(adjacency) - set(hops))
    if missing:
        raise RoutingHoleError([f"node {n} has no path to the gateway" for n in missing])
    next_hop = {}
    for n, h in hops.items():
        if n == gateway:
            continue
        downhill = [v for v in adjacency[n] if hops.get(v) == h - 1]
        if not downhill:
            raise RoutingHoleError([f"node {n} has no downhill neighbour"])
        next_hop[n] = min(downhill)
    return GradientTable(gateway, hops, next_hop)


def gradient_route(table: GradientTable, node: int) -> int:
    if node == table.gateway:
        raise ConfigError(["the gateway does not forward"])
    return table.next_hop[node]
