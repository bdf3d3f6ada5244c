"""Slotted, duty-cycled MAC building blocks shared by the four protocols.

One cycle is ``(n_csma + n_tdma)`` slots of ``slot_duration`` followed by the
GTS and inactive periods.  The first ``sync_slots`` slots carry the gateway
synchronisation beacon (and TDMA signalling); they are taken from the head of
the slot budget.  Remaining slots belong to the contention region (first
``n_csma`` indices) or to the scheduled region (TDMA, or vTDMA for iQueue).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError

CSMA, TDMA, FUNNELING, IQUEUE = "csma", "tdma", "funneling", "iqueue"
PROTOCOLS = (CSMA, TDMA, FUNNELING, IQUEUE)

SLOT_SYNC, SLOT_CSMA, SLOT_TDMA, SLOT_VTDMA = "sync", "csma", "tdma", "vtdma"

DATA_BYTES = 84
QUEUE_INDICATOR_BYTES = 1
RESERVATION_BEACON_BYTES = 1
SYNC_BYTES = 20
SIGNALING_BYTES = 20
GRANT_BYTES = 12
MAX_INDICATOR = 255


@dataclass(frozen=True)
class MacConfig:
    protocol: str = CSMA
    slot_duration: float = 0.1
    n_csma: int = 25
    n_tdma: int = 0
    t_gts: float = 0.0
    t_inactive: float = 0.0
    sync_slots: int = 1
    funneling_depth: int = 1
    backoff_window: int = 16
    backoff_unit: float = 320e-6
    max_retries: int = 5

    def problems(self) -> list[str]:
        out = []
        if self.protocol not in PROTOCOLS:
            out.append(f"unknown protocol {self.protocol!r}")
        if self.slot_duration <= 0:
            out.append("slot_duration must be positive")
        if min(self.n_csma, self.n_tdma, self.sync_slots) < 0:
            out.append("slot counts must be non-negative")
        if self.t_gts < 0 or self.t_inactive < 0:
            out.append("t_gts and t_inactive must be non-negative")
        if self.funneling_depth < 0:
            out.append("funneling_depth must be >= 0")
        if self.backoff_window < 1:
            out.append("backoff_window must be >= 1")
        if self.max_retries < 0:
            out.append("max_retries must be >= 0")
        if self.sync_slots > self.n_csma + self.n_tdma:
            out.append("sync region larger than the slot budget")
        if self.backoff_window * self.backoff_unit >= self.slot_duration:
            out.append("backoff window does not fit in one slot")
        if not out and cycle_length(self) <= 0:
            out.append("cycle length must be positive")
        return out


@dataclass
class Frame:
    """A data or control frame; times in integer nanoseconds."""

    uid: int
    origin: int
    src: int
    dst: int
    kind: str = "data"
    payload_bytes: int = DATA_BYTES
    gen_time: int = 0
    records: tuple[int, ...] = ()
    queue_indicator: int | None = None
    retries: int = 0

    def __post_init__(self):
        base = DATA_BYTES + (QUEUE_INDICATOR_BYTES if self.queue_indicator is not None else 0)
        if self.payload_bytes > base:
            raise ValueError(f"frame of {self.payload_bytes} bytes exceeds {base}")


def frame_bytes(protocol: str) -> int:
    return DATA_BYTES + (QUEUE_INDICATOR_BYTES if protocol == IQUEUE else 0)


def cycle_length(cfg: MacConfig) -> float:
    return (cfg.n_csma + cfg.n_tdma) * cfg.slot_duration + cfg.t_gts + cfg.t_inactive


def slot_layout(cfg: MacConfig) -> tuple[str, ...]:
    scheduled = SLOT_VTDMA if cfg.protocol == IQUEUE else SLOT_TDMA
    kinds = [SLOT_CSMA] * cfg.n_csma + [scheduled] * cfg.n_tdma
    for i in range(min(cfg.sync_slots, len(kinds))):
        kinds[i] = SLOT_SYNC
    return tuple(kinds)


def data_slots(cfg: MacConfig, kind: str) -> list[int]:
    return [i for i, k in enumerate(slot_layout(cfg)) if k == kind]


# ---------------------------------------------------------------- contention


@dataclass(frozen=True)
class ContentionResult:
    draws: dict[int, int]
    transmitters: tuple[int, ...]

    @property
    def winner(self) -> int | None:
        return self.transmitters[0] if len(self.transmitters) == 1 else None

    @property
    def collided(self) -> bool:
        return len(self.transmitters) > 1


def resolve_contention(draws: Mapping[int, int], hears: Callable[[int, int], bool]) -> tuple[int, ...]:
    """Nodes that end up sending their reservation beacon.

    A contender stays quiet if it heard a beacon that started earlier, i.e.
    from a transmitting node with a strictly smaller backoff.  Equal backoffs
    cannot hear each other in time and all transmit.
    """
    sending: list[int] = []
    for node in sorted(draws, key=lambda n: (draws[n], n)):
        b = draws[node]
        if any(draws[s] < b and hears(s, node) for s in sending):
            continue
        sending.append(node)
    return tuple(sending)


def csma_contend(contenders: Sequence[int], window: int, rng: np.random.Generator) -> ContentionResult:
    """Contention among nodes that all hear one another."""
    draws = {n: int(rng.integers(window)) for n in contenders}
    return ContentionResult(draws, resolve_contention(draws, lambda a, b: True))


def tie_probability(n: int, window: int) -> float:
    """Exact probability that the minimum of n uniform backoffs is shared."""
    # P(min = m and unique) = n * (1/W) * ((W-m-1)/W)^(n-1)
    unique = sum(n * (1 / window) * ((window - m - 1) / window) ** (n - 1) for m in range(window))
    return 1.0 - unique


# ----------------------------------------------------------------- schedules


@dataclass(frozen=True)
class SlotSchedule:
    layout: tuple[str, ...]
    owners: dict[int, int] = field(default_factory=dict)
    epoch_cycle: int = 0

    def slot_of(self, node: int) -> int | None:
        for s, n in self.owners.items():
            if n == node:
                return s
        return None


def downstream_first(nodes: Iterable[int], hop_counts: Mapping[int, int] | None) -> list[int]:
    if hop_counts is None:
        return sorted(nodes)
    return sorted(nodes, key=lambda n: (-hop_counts[n], n))


def tdma_build_schedule(nodes: Iterable[int], cfg: MacConfig,
                        hop_counts: Mapping[int, int] | None = None) -> SlotSchedule:
    """One slot per node, deepest hops first so forwarded frames can advance within a cycle."""
    layout = slot_layout(cfg)
    free = [i for i, k in enumerate(layout) if k == SLOT_TDMA]
    order = downstream_first(nodes, hop_counts)
    if len(order) > len(free):
        raise ConfigError([f"insufficient slots: {len(order)} TDMA nodes, {len(free)} TDMA slots"])
    return SlotSchedule(layout, dict(zip(free, order)))


def funneling_assign(nodes: Iterable[int], hop_counts: Mapping[int, int], cfg: MacConfig):
    """Nodes within ``funneling_depth`` hops run TDMA, the rest CSMA."""
    nodes = list(nodes)
    depth = cfg.funneling_depth
    members = [n for n in nodes if hop_counts[n] <= depth]
    modes = {n: (TDMA if hop_counts[n] <= depth else CSMA) for n in nodes}
    layout = slot_layout(cfg)
    if not members:
        return modes, SlotSchedule(layout, {})
    free = [i for i, k in enumerate(layout) if k == SLOT_TDMA]
    if len(members) > len(free):
        raise ConfigError([f"insufficient slots: {len(members)} TDMA members, {len(free)} TDMA slots"])
    order = downstream_first(members, hop_counts)
    return modes, SlotSchedule(layout, dict(zip(free, order)))


# ------------------------------------------------------------------- iQueue


def queue_indicator(backlog_after_send: int) -> int:
    return max(0, min(backlog_after_send, MAX_INDICATOR))


@dataclass
class VtdmaAllocator:
    """Gateway-side vTDMA grant book-keeping, first come first served."""

    slots: tuple[int, ...]
    cycle: int = -1
    granted: dict[int, int] = field(default_factory=dict)
    deferred: list[list[int]] = field(default_factory=list)

    def new_cycle(self, cycle: int) -> None:
        self.cycle = cycle
        self.granted = {}
        backlog, self.deferred = self.deferred, []
        for node, demand in backlog:
            self.request(node, demand, after_slot=-1)

    def free_slots(self, after_slot: int) -> list[int]:
        return [s for s in self.slots if s > after_slot and s not in self.granted]

    def request(self, node: int, demand: int, after_slot: int) -> list[int]:
        if demand <= 0:
            return []
        free = self.free_slots(after_slot)
        got = free[:demand]
        for s in got:
            self.granted[s] = node
        rest = demand - len(got)
        if rest > 0:
            for item in self.deferred:
                if item[0] == node:
                    item[1] += rest
                    break
            else:
                self.deferred.append([node, rest])
        return got

    def owner(self, cycle: int, slot: int) -> int | None:
        return self.granted.get(slot) if cycle == self.cycle else None

    @property
    def has_deferred(self) -> bool:
        return bool(self.deferred)


def allocate_grants(requests: Sequence[tuple[int, int]], n_free: int) -> dict[int, int]:
    """Grant counts for (node, demand) requests handled in arrival order."""
    alloc = VtdmaAllocator(tuple(range(n_free)), cycle=0)
    return {node: len(alloc.request(node, demand, after_slot=-1)) for node, demand in requests}


# ------------------------------------------------------------- slot budgets


def default_budget(protocol: str, one_hop: int, non_gateway: int, tdma_members: int,
                   has_csma_nodes: bool, sync_slots: int = 1) -> tuple[int, int]:
    """(n_csma, n_tdma) giving every protocol the same data-slot budget where it can.

    The common budget is ``max(24, one_hop)`` data slots; TDMA needs one slot
    per node and takes more when the network is larger.  SYN slots are added
    to whichever region comes first in the cycle.
    """
    common = max(24, one_hop)
    if protocol in (CSMA,):
        return common + sync_slots, 0
    if protocol == TDMA:
        return 0, max(common, non_gateway) + sync_slots
    if protocol == IQUEUE:
        vtdma = common // 4
        return common - vtdma + sync_slots, vtdma
    if protocol == FUNNELING:
        if not has_csma_nodes:
            return 0, max(common, tdma_members) + sync_slots
        n_csma = max(common - tdma_members, math.ceil(common / 4))
        if tdma_members == 0:
            n_csma = common
        return n_csma + sync_slots, tdma_members
    raise ConfigError([f"unknown protocol {protocol!r}"])
