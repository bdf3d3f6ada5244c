"""Link budget, frame timing, collisions and radio energy accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError

TX, RX, CS, OFF = "tx", "rx", "cs", "off"
STATES = (TX, RX, CS, OFF)

UNBOUNDED_LIFETIME = math.inf


@dataclass(frozen=True)
class RadioPowerProfile:
    # Default radio values; powers in mW, energy in mJ.
    p_tx: float = 65.7
    p_rx: float = 56.5
    p_cs: float = 55.8
    p_off: float = 0.030
    e_switch: float = 0.16425
    tx_power_dbm: float = 3.0
    sensitivity_dbm: float = -85.0
    data_rate: float = 250_000.0

    def __post_init__(self):
        if not (self.p_tx >= self.p_rx >= self.p_cs > self.p_off > 0):
            raise ValueError("radio powers must satisfy p_tx >= p_rx >= p_cs > p_off > 0")
        if self.data_rate <= 0:
            raise ValueError("data_rate must be positive")

    def power(self, state: str) -> float:
        return {TX: self.p_tx, RX: self.p_rx, CS: self.p_cs, OFF: self.p_off}[state]


def tx_duration(n_bytes: int, profile: RadioPowerProfile) -> float:
    if n_bytes <= 0:
        raise ValueError("frame must carry at least one byte")
    return n_bytes * 8 / profile.data_rate


# ------------------------------------------------------------------ geometry


@dataclass(frozen=True)
class Corner:
    point: tuple[float, float]
    streets: tuple[str, str]


@dataclass
class LinkGeometry:
    """Node positions on named street segments.

    Nodes sharing a street are in line of sight.  Other pairs propagate around
    street corners, paying a fixed attenuation per corner turned.
    """

    positions: dict[int, tuple[float, float]]
    streets: dict[str, frozenset[int]]
    corners: list[Corner]
    wavelength: float = 0.125
    corner_penalty_db: float = 20.0
    max_corners: int = 2
    _membership: dict[int, frozenset[str]] = field(init=False, repr=False)

    def __post_init__(self):
        member: dict[int, set[str]] = {}
        for name, nodes in self.streets.items():
            for n in nodes:
                member.setdefault(n, set()).add(name)
        self._membership = {n: frozenset(s) for n, s in member.items()}

    def streets_of(self, node: int) -> frozenset[str]:
        return self._membership.get(node, frozenset())

    def _pos(self, node: int) -> tuple[float, float]:
        try:
            return self.positions[node]
        except KeyError:
            raise ConfigError([f"node {node} has no position"]) from None


def free_space_loss_db(distance: float, wavelength: float) -> float:
    if distance <= 0:
        raise ValueError("distance must be positive")
    return 20.0 * math.log10(4.0 * math.pi * distance / wavelength)


def _dist(p: Sequence[float], q: Sequence[float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def path_loss_db(a: int, b: int, geom: LinkGeometry) -> float:
    """Free-space loss along the shortest street path plus the per-corner penalty.

    Returns ``inf`` when the pair is more than ``geom.max_corners`` turns apart.
    """
    if a == b:
        raise ValueError("path loss needs two distinct nodes")
    pa, pb = geom._pos(a), geom._pos(b)
    sa, sb = geom.streets_of(a), geom.streets_of(b)
    if not sa or not sb:
        raise ConfigError([f"node {a if not sa else b} is not on any street"])
    if sa & sb:
        return free_space_loss_db(_dist(pa, pb), geom.wavelength)

    best = math.inf
    on_a = [c for c in geom.corners if sa & set(c.streets)]
    on_b = [c for c in geom.corners if sb & set(c.streets)]
    for c in on_a:
        if sb & set(c.streets):
            d = _dist(pa, c.point) + _dist(c.point, pb)
            best = min(best, free_space_loss_db(d, geom.wavelength) + geom.corner_penalty_db)
    if geom.max_corners >= 2:
        for c1 in on_a:
            for c2 in on_b:
                if c1 is c2 or not set(c1.streets) & set(c2.streets):
                    continue
                d = _dist(pa, c1.point) + _dist(c1.point, c2.point) + _dist(c2.point, pb)
                best = min(best, free_space_loss_db(d, geom.wavelength) + 2 * geom.corner_penalty_db)
    return best


# -------------------------------------------------------------- link outcome


def rayleigh_gain(u: float) -> float:
    """Unit-mean exponential power gain from a uniform draw in (0, 1)."""
    return -math.log(u)


def received_power_dbm(tx_dbm: float, loss_db: float, gain: float = 1.0) -> float:
    return tx_dbm - loss_db + 10.0 * math.log10(gain)


def link_success(tx_dbm: float, loss_db: float, u: float | None, sensitivity_dbm: float) -> bool:
    """True when the faded received power reaches the sensitivity (inclusive).

    ``u=None`` disables fading (gain 1).
    """
    gain = 1.0 if u is None else rayleigh_gain(u)
    return received_power_dbm(tx_dbm, loss_db, gain) >= sensitivity_dbm


DELIVERED = "delivered"
COLLIDED = "collided"
LOST = "lost"


@dataclass(frozen=True)
class FrameOnAir:
    start: float
    end: float
    rx_power_dbm: float


def detect_collision(frames: Sequence[FrameOnAir], sensitivity_dbm: float = -math.inf) -> list[str]:
    """Outcome per frame at one receiver; any overlap of two audible frames kills both."""
    audible = [f.rx_power_dbm >= sensitivity_dbm for f in frames]
    out = [DELIVERED if ok else LOST for ok in audible]
    order = sorted((i for i in range(len(frames)) if audible[i]), key=lambda i: frames[i].start)
    # sweep: compare each frame with the audible frame that ends latest among those started earlier
    latest = None
    for i in order:
        if latest is not None and frames[i].start < frames[latest].end:
            out[i] = COLLIDED
            out[latest] = COLLIDED
        if latest is None or frames[i].end > frames[latest].end:
            latest = i
    return out


# ---------------------------------------------------------------- energy


@dataclass
class EnergyLedger:
    profile: RadioPowerProfile
    mj: dict[str, float] = field(default_factory=lambda: dict.fromkeys(STATES, 0.0))
    seconds: dict[str, float] = field(default_factory=lambda: dict.fromkeys(STATES, 0.0))
    switch_count: int = 0

    def account_state(self, state: str, duration: float) -> None:
        if duration < 0:
            raise ValueError("negative duration")
        self.seconds[state] += duration
        self.mj[state] += duration * self.profile.power(state)

    def account_switch(self, count: int = 1) -> None:
        self.switch_count += count

    def account_bulk(self, seconds_by_state: Mapping[str, float], switches: int, times: int = 1) -> None:
        """Charge ``times`` copies of the same activity pattern."""
        for state, d in seconds_by_state.items():
            self.account_state(state, d * times)
        self.account_switch(switches * times)

    @property
    def switch_mj(self) -> float:
        return self.switch_count * self.profile.e_switch

    @property
    def active_seconds(self) -> float:
        return self.seconds[TX] + self.seconds[RX] + self.seconds[CS]

    @property
    def total_mj(self) -> float:
        return sum(self.mj.values()) + self.switch_mj

    def close(self, span: float) -> None:
        """Charge the remaining time of a ``span``-second run as sleep."""
        idle = span - self.active_seconds - self.seconds[OFF]
        if idle < -1e-9:
            raise ValueError(f"active time exceeds the run span by {-idle:.3g} s")
        self.account_state(OFF, max(idle, 0.0))


def lifetime_estimate(total_mj: float, sim_span: float, battery_mah: float = 6300.0,
                      battery_volts: float = 3.0) -> float:
    """Days until a battery of the given capacity is drained at the observed mean power."""
    if sim_span <= 0:
        raise ValueError("sim_span must be positive")
    if total_mj <= 0:
        return UNBOUNDED_LIFETIME
    capacity_j = battery_mah / 1000.0 * battery_volts * 3600.0
    mean_power_w = total_mj / 1000.0 / sim_span
    return capacity_j / mean_power_w / 86400.0


def ledger_rows(ledgers: Mapping[int, EnergyLedger]) -> Iterable[tuple[int, EnergyLedger]]:
    return sorted(ledgers.items())
