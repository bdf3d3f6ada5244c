"""One seeded network run: occupancy traffic, hybrid application, MAC and radio.

The slot driver only wakes for slots where something can happen (a
backlogged contender, an owned slot with a queued frame, a granted vTDMA
slot, or a cycle start with pending acknowledgements, signalling or
deferred grants).  The radio cost of idle listening that recurs every
cycle (sync reception, parents listening for contention beacons, TDMA
guard listening) is charged in bulk per cycle instead of per event.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from . import mac
from .engine import APP_JITTER, BACKOFF, FADING, NS_PER_S, TRAFFIC, Kernel, RngStreams, seconds_to_ns
from .node import EVENT, IMMEDIATE, PIGGYBACKED, InfoRecord
from .radio import (
    COLLIDED, CS, DELIVERED, LOST, RX, TX, EnergyLedger, FrameOnAir, detect_collision,
    lifetime_estimate, link_success, tx_duration,
)
from .scenario import GATEWAY, ResolvedScenario, ScenarioConfig, resolve
from .traffic import generate_occupancy_timeline

DROPPED = "dropped"
SYNC_GUARD = 1e-3
TDMA_GUARD = 320e-6


@dataclass(frozen=True)
class FrameRow:
    origin: int
    src: int
    dst: int
    kind: str
    gen_time: int
    tx_time: int
    rx_time: int | None
    outcome: str
    retries: int


@dataclass
class RunResult:
    scenario: ResolvedScenario
    seed: int
    span: float
    frames: list[FrameRow]
    records: list[InfoRecord]
    ledgers: dict[int, EnergyLedger]
    arrivals: dict[int, list[int]]
    counters: dict[str, int]
    events: int
    trace: list | None = None

    @property
    def config(self) -> ScenarioConfig:
        return self.scenario.config

    @property
    def t_cycle(self) -> float:
        return mac.cycle_length(self.scenario.mac)

    @property
    def roles(self) -> dict[int, str]:
        return self.scenario.topology.roles

    def lifetimes(self) -> dict[int, float]:
        cfg = self.config
        return {
            n: lifetime_estimate(led.total_mj, self.span, cfg.battery_mah, cfg.battery_volts)
            for n, led in sorted(self.ledgers.items())
        }


@dataclass
class _Node:
    id: int
    role: str
    parent: int | None
    hops: int
    mode: str
    children: list[int]
    ledger: EnergyLedger
    queue: deque = field(default_factory=deque)
    awaiting: list = field(default_factory=list)
    assigned: bool = False
    seen: set = field(default_factory=set)
    baseline: list = field(default_factory=list)
    baseline_from: int = 0
    known_grants: set = field(default_factory=set)


def _count_ticks(k: int, g_from: int, g_to: int, n: int) -> int:
    """How many cycles c give a tick c*n + k inside [g_from, g_to)."""
    if g_to <= g_from:
        return 0
    return max(0, -(-(g_to - k) // n) - max(0, -(-(g_from - k) // n)))


class NetworkSimulation:
    def __init__(self, cfg: ScenarioConfig | ResolvedScenario, seed: int | None = None, trace: bool = False):
        self.sc = cfg if isinstance(cfg, ResolvedScenario) else resolve(cfg)
        self.cfg = self.sc.config
        self.seed = self.cfg.seed if seed is None else int(seed)
        self.kernel = Kernel(trace=trace)
        self.streams = RngStreams(self.seed)

        m = self.sc.mac
        self.mc = m
        self.layout = mac.slot_layout(m)
        self.n_slots = len(self.layout)
        self.slot_ns = seconds_to_ns(m.slot_duration)
        self.cycle_ns = seconds_to_ns(mac.cycle_length(m))
        self.end_ns = seconds_to_ns(self.cfg.sim_duration)
        self.unit_ns = seconds_to_ns(m.backoff_unit)
        radio = self.cfg.radio
        self.radio = radio
        self.frame_len = mac.frame_bytes(m.protocol)
        self.d_beacon = seconds_to_ns(tx_duration(mac.RESERVATION_BEACON_BYTES, radio))
        self.d_data = seconds_to_ns(tx_duration(self.frame_len, radio))
        self.d_sync = tx_duration(mac.SYNC_BYTES, radio)
        self.d_sig = tx_duration(mac.SIGNALING_BYTES, radio)
        self.d_grant = tx_duration(mac.GRANT_BYTES, radio)
        self.csma_slots = [k for k, kind in enumerate(self.layout) if kind == mac.SLOT_CSMA]
        self.has_csma_region = bool(self.csma_slots)
        self.iqueue = m.protocol == mac.IQUEUE
        self.allocator = mac.VtdmaAllocator(tuple(k for k, kind in enumerate(self.layout) if kind == mac.SLOT_VTDMA))

        topo, grad = self.sc.topology, self.sc.gradient
        self.gw = topo.gateway
        self.nodes: dict[int, _Node] = {}
        for n in topo.nodes:
            self.nodes[n] = _Node(
                id=n, role=topo.roles[n], parent=grad.next_hop.get(n), hops=grad.hops[n],
                mode=self.sc.modes.get(n, mac.CSMA), children=grad.children(n),
                ledger=EnergyLedger(radio),
            )
        self.owners = dict(self.sc.schedule.owners)
        for n in self.nodes.values():
            n.baseline = self._baseline(n)

        self.frames: list[FrameRow] = []
        self.records: list[InfoRecord] = []
        self.arrivals: dict[int, list[int]] = {s: [] for s in topo.sensors}
        self.counters = dict.fromkeys(
            ("generated", "transmissions", "delivered", "collided", "lost", "dropped_retries",
             "dropped_overflow", "duplicates", "signaling", "grants"), 0)
        self._uid = 0
        self._pending_piggy: dict[int, list[InfoRecord]] = {s: [] for s in topo.sensors}
        self._next_periodic: dict[int, int | None] = {}
        self._phase: dict[int, int] = {}
        self._driver_ev = None
        self._driver_tick = None
        self._last_tick = -1
        self._in_driver = False
        self._sync_cycle = -1
        self._sync_ok: dict[int, bool] = {}

    # ---------------------------------------------------------------- timing

    def tick_time(self, g: int) -> int:
        c, k = divmod(g, self.n_slots)
        return c * self.cycle_ns + k * self.slot_ns

    def ceil_tick(self, t: int) -> int:
        c, r = divmod(t, self.cycle_ns)
        k = -(-r // self.slot_ns)
        if k >= self.n_slots:
            return (c + 1) * self.n_slots
        return c * self.n_slots + k

    # ---------------------------------------------------------------- energy

    def eff_mode(self, n: _Node) -> str:
        if n.mode == mac.CSMA:
            return mac.CSMA
        if n.assigned:
            return mac.TDMA
        return mac.CSMA if self.has_csma_region else "wait"

    def _baseline(self, n: _Node) -> list:
        u = self.mc.backoff_unit
        items = []
        sync = {}
        switches = 0
        if n.role != GATEWAY:
            sync[RX] = SYNC_GUARD + self.d_sync
            switches = 2
        if n.children:
            sync[TX] = self.d_sync
            switches = 2
        if sync:
            items.append((0, sync, switches))
        kids = [self.nodes[c] for c in n.children]
        if any(self.eff_mode(c) == mac.CSMA for c in kids):
            listen = {CS: self.mc.backoff_window * u + self.d_beacon / NS_PER_S}
            items += [(k, listen, 2) for k in self.csma_slots]
        for k, owner in self.owners.items():
            if owner in n.children and self.nodes[owner].assigned:
                items.append((k, {CS: TDMA_GUARD}, 2))
        return items

    def _settle(self, n: _Node, g: int) -> None:
        for k, states, sw in n.baseline:
            times = _count_ticks(k, n.baseline_from, g, self.n_slots)
            if times:
                n.ledger.account_bulk(states, sw, times)
        n.baseline_from = g

    def _rebase(self, n: _Node, g: int) -> None:
        self._settle(n, g)
        n.baseline = self._baseline(n)

    # ----------------------------------------------------------- application

    def _setup_app(self) -> None:
        app = self.cfg.app
        horizon = self.cfg.sim_duration
        for s in self.sc.topology.sensors:
            tl = generate_occupancy_timeline(self.cfg.parking, self.cfg.vacant, horizon, None,
                                             self.streams.stream(TRAFFIC, s))
            changes = [seconds_to_ns(t) for t in tl.transitions]
            phase = seconds_to_ns(float(self.streams.stream(APP_JITTER, s).uniform(0.0, app.period)))
            self._phase[s] = phase
            self._next_periodic[s] = None
            if app.mode != EVENT and phase < self.end_ns:
                self._schedule_periodic(s, phase)
            if changes:
                self.kernel.schedule(changes[0], self._on_change, target=s, kind="change",
                                     payload=(changes, 0))

    def _schedule_periodic(self, s: int, t: int) -> None:
        self._next_periodic[s] = t
        self.kernel.schedule(t, self._on_periodic, target=s, kind="periodic")

    def _new_frame(self, s: int, records: tuple[int, ...]) -> mac.Frame:
        self._uid += 1
        node = self.nodes[s]
        return mac.Frame(
            uid=self._uid, origin=s, src=s, dst=node.parent, payload_bytes=self.frame_len,
            gen_time=self.kernel.now, records=records,
            queue_indicator=0 if self.iqueue else None,
        )

    def _on_change(self, ev) -> None:
        s, now = ev.target, self.kernel.now
        changes, i = ev.payload
        rec = InfoRecord(len(self.records), s, now, IMMEDIATE, self.nodes[s].hops)
        self.records.append(rec)
        t_next = self._next_periodic.get(s)
        tau = seconds_to_ns(self.cfg.app.threshold)
        if self.cfg.app.mode != EVENT and t_next is not None and t_next - now < tau:
            rec.mode = PIGGYBACKED
            self._pending_piggy[s].append(rec)
        else:
            rec.sent_at = now
            self._enqueue(s, self._new_frame(s, (rec.uid,)))
        if i + 1 < len(changes):
            self.kernel.schedule(changes[i + 1], self._on_change, target=s, kind="change",
                                 payload=(changes, i + 1))

    def _on_periodic(self, ev) -> None:
        s, now = ev.target, self.kernel.now
        recs, self._pending_piggy[s] = self._pending_piggy[s], []
        for r in recs:
            r.sent_at = now
        self._enqueue(s, self._new_frame(s, tuple(r.uid for r in recs)))
        nxt = now + seconds_to_ns(self.cfg.app.period)
        if nxt < self.end_ns:
            self._schedule_periodic(s, nxt)
        else:
            self._next_periodic[s] = None

    # ----------------------------------------------------------------- queues

    def _enqueue(self, n: int, frame: mac.Frame) -> None:
        node = self.nodes[n]
        if n == frame.origin:
            self.counters["generated"] += 1
        if len(node.queue) >= self.cfg.mac.queue_capacity:
            self.counters["dropped_overflow"] += 1
            self.frames.append(FrameRow(frame.origin, n, node.parent, frame.kind, frame.gen_time,
                                        self.kernel.now, None, DROPPED, frame.retries))
            return
        node.queue.append(frame)
        self._wake()

    def _receive(self, p: int, frame: mac.Frame, t: int) -> None:
        node = self.nodes[p]
        if frame.uid in node.seen:
            self.counters["duplicates"] += 1
            return
        node.seen.add(frame.uid)
        if p == self.gw:
            self.counters["delivered"] += 1
            self.arrivals[frame.origin].append(t)
            for r in frame.records:
                rec = self.records[r]
                if rec.delivered_at is None:
                    rec.delivered_at = t
            return
        fwd = mac.Frame(
            uid=frame.uid, origin=frame.origin, src=p, dst=node.parent,
            payload_bytes=self.frame_len, gen_time=frame.gen_time, records=frame.records,
            queue_indicator=0 if self.iqueue else None,
        )
        self._enqueue(p, fwd)

    # ------------------------------------------------------------- slot driver

    def _csma_ready(self) -> bool:
        return any(n.queue and n.parent is not None and self.eff_mode(n) == mac.CSMA
                   for n in self.nodes.values())

    def _sync_needed(self) -> bool:
        if self.allocator.has_deferred:
            return True
        for n in self.nodes.values():
            if n.awaiting or (n.mode == mac.TDMA and not n.assigned):
                return True
        return False

    def _next_active(self, g0: int) -> int | None:
        n = self.n_slots
        csma = self._csma_ready() if self.has_csma_region else False
        sync = self._sync_needed()
        tdma = {k for k, o in self.owners.items() if self.nodes[o].assigned and self.nodes[o].queue}
        for g in range(g0, g0 + 2 * n + 1):
            if self.tick_time(g) >= self.end_ns:
                return None
            c, k = divmod(g, n)
            kind = self.layout[k]
            if k == 0 and kind == mac.SLOT_SYNC:
                if sync:
                    return g
            elif kind == mac.SLOT_CSMA:
                if csma:
                    return g
            elif kind == mac.SLOT_TDMA:
                if k in tdma:
                    return g
            elif kind == mac.SLOT_VTDMA:
                if self.allocator.owner(c, k) is not None:
                    return g
        return None

    def _wake(self) -> None:
        if self._in_driver:
            return
        g0 = max(self._last_tick + 1, self.ceil_tick(self.kernel.now))
        g = self._next_active(g0)
        if g is None or (self._driver_tick is not None and self._driver_tick <= g):
            return
        self._arm(g)

    def _arm(self, g: int) -> None:
        if self._driver_ev is not None:
            self.kernel.cancel(self._driver_ev)
        self._driver_tick = g
        self._driver_ev = self.kernel.schedule(self.tick_time(g), self._on_tick, target=None,
                                               kind="slot", payload=g)

    def _on_tick(self, ev) -> None:
        g = ev.payload
        self._driver_ev = self._driver_tick = None
        self._in_driver = True
        try:
            c, k = divmod(g, self.n_slots)
            kind = self.layout[k]
            t0 = self.tick_time(g)
            if kind == mac.SLOT_SYNC:
                self._sync_slot(c, g)
            elif kind == mac.SLOT_CSMA:
                self._csma_slot(c, k, t0)
            elif kind == mac.SLOT_TDMA:
                self._tdma_slot(c, k, t0)
            elif kind == mac.SLOT_VTDMA:
                self._vtdma_slot(c, k, t0)
        finally:
            self._in_driver = False
        self._last_tick = g
        nxt = self._next_active(g + 1)
        if nxt is not None:
            self._arm(nxt)

    # -------------------------------------------------------------- radio use

    def _draw(self, stream_node: int, a: int, b: int) -> bool:
        """Faded reception of a frame sent by a and heard at b."""
        u = None
        if self.cfg.fading:
            rng = self.streams.stream(FADING, stream_node)
            u = float(rng.random())
            while u == 0.0:
                u = float(rng.random())
        return link_success(self.radio.tx_power_dbm, self.sc.links.loss_db(a, b), u,
                            self.radio.sensitivity_dbm)

    def _sync_received(self, c: int, n: int) -> bool:
        if self._sync_cycle != c:
            self._sync_cycle, self._sync_ok = c, {}
        ok = self._sync_ok.get(n)
        if ok is None:
            parent = self.nodes[n].parent
            ok = self._sync_ok[n] = self._draw(n, parent, n)
        return ok

    def _alloc_cycle(self, c: int) -> None:
        if self.allocator.cycle != c:
            self.allocator.new_cycle(c)

    def _sync_slot(self, c: int, g: int) -> None:
        now = self.kernel.now
        if self.iqueue:
            self._alloc_cycle(c)
            for slot, owner in sorted(self.allocator.granted.items()):
                if self._sync_received(c, owner):
                    self.nodes[owner].known_grants.add((c, slot))
        for n in self.nodes.values():
            if not n.awaiting:
                continue
            ok = self._sync_received(c, n.id)
            retry = []
            for frame, delivered in n.awaiting:
                if ok and delivered:
                    continue
                frame.retries += 1
                if frame.retries > self.mc.max_retries:
                    self.counters["dropped_retries"] += 1
                    self.frames.append(FrameRow(frame.origin, n.id, n.parent, frame.kind, frame.gen_time,
                                                now, None, DROPPED, frame.retries - 1))
                else:
                    retry.append(frame)
            n.awaiting = []
            n.queue.extendleft(reversed(retry))
        for n in self.nodes.values():
            if n.mode != mac.TDMA or n.assigned:
                continue
            self.counters["signaling"] += 1
            parent = self.nodes[n.parent]
            n.ledger.account_state(TX, self.d_sig)
            n.ledger.account_state(RX, self.d_grant)
            parent.ledger.account_state(RX, self.d_sig)
            parent.ledger.account_state(TX, self.d_grant)
            up = self._draw(n.id, n.id, parent.id)
            down = self._draw(n.id, parent.id, n.id)
            if up and down:
                self._settle(parent, g)
                n.assigned = True
                parent.baseline = self._baseline(parent)

    def _send(self, n: _Node) -> mac.Frame:
        frame = n.queue.popleft()
        frame.src, frame.dst = n.id, n.parent
        if self.iqueue:
            frame.queue_indicator = mac.queue_indicator(len(n.queue))
        self.counters["transmissions"] += 1
        return frame

    def _conclude(self, n: _Node, frame: mac.Frame, tx_time: int, rx_end: int, outcome: str, c: int, k: int) -> None:
        delivered = outcome == DELIVERED
        if outcome == COLLIDED:
            self.counters["collided"] += 1
        elif outcome == LOST:
            self.counters["lost"] += 1
        self.frames.append(FrameRow(frame.origin, n.id, n.parent, frame.kind, frame.gen_time, tx_time,
                                    rx_end if delivered else None, outcome, frame.retries))
        n.awaiting.append((frame, delivered))
        if delivered:
            self._receive(n.parent, frame, rx_end)
            if self.iqueue and n.parent == self.gw and frame.queue_indicator:
                self._grant(n, frame.queue_indicator, c, k)

    def _grant(self, n: _Node, indicator: int, c: int, k: int) -> None:
        self._alloc_cycle(c)
        alloc = self.allocator
        outstanding = sum(1 for s, o in alloc.granted.items() if o == n.id and s > k)
        outstanding += sum(d for o, d in alloc.deferred if o == n.id)
        demand = indicator - outstanding
        if demand <= 0:
            return
        got = alloc.request(n.id, demand, after_slot=k)
        self.counters["grants"] += len(got)
        self.nodes[self.gw].ledger.account_state(TX, self.d_grant)
        n.ledger.account_state(RX, self.d_grant)
        if self._draw(n.id, self.gw, n.id):
            n.known_grants.update((c, s) for s in got)

    def _csma_slot(self, c: int, k: int, t0: int) -> None:
        links = self.sc.links
        contenders = [n.id for n in self.nodes.values()
                      if n.queue and n.parent is not None and self.eff_mode(n) == mac.CSMA]
        draws = {n: int(self.streams.stream(BACKOFF, n).integers(self.mc.backoff_window)) for n in contenders}
        sending = mac.resolve_contention(draws, links.audible)
        sending_set = set(sending)
        start = {i: t0 + draws[i] * self.unit_ns for i in sending}
        end = {i: start[i] + self.d_beacon + self.d_data for i in sending}
        u = self.unit_ns
        for i in contenders:
            led = self.nodes[i].ledger
            led.account_switch(2)
            if i in sending_set:
                led.account_state(CS, draws[i] * u / NS_PER_S)
                led.account_state(TX, (self.d_beacon + self.d_data) / NS_PER_S)
            else:
                heard = min(start[s] + self.d_beacon for s in sending
                            if draws[s] < draws[i] and links.audible(s, i))
                led.account_state(CS, (heard - t0) / NS_PER_S)
        frames = {i: self._send(self.nodes[i]) for i in sending}
        for i in sending:
            p = self.nodes[i].parent
            if p in sending_set:
                outcome = LOST
            else:
                self.nodes[p].ledger.account_state(RX, self.d_data / NS_PER_S)
                heard = [j for j in sending if j == i or links.audible(j, p)]
                air = [FrameOnAir(start[j], end[j], links.rx_dbm[j, p]) for j in heard]
                outcome = detect_collision(air, self.radio.sensitivity_dbm)[heard.index(i)]
                if outcome == DELIVERED and not self._draw(i, i, p):
                    outcome = LOST
            self._conclude(self.nodes[i], frames[i], start[i], end[i], outcome, c, k)

    def _scheduled_send(self, n: _Node, c: int, k: int, t0: int) -> None:
        frame = self._send(n)
        n.ledger.account_switch(2)
        n.ledger.account_state(TX, self.d_data / NS_PER_S)
        self.nodes[n.parent].ledger.account_state(RX, self.d_data / NS_PER_S)
        outcome = DELIVERED if self._draw(n.id, n.id, n.parent) else LOST
        self._conclude(n, frame, t0, t0 + self.d_data, outcome, c, k)

    def _tdma_slot(self, c: int, k: int, t0: int) -> None:
        n = self.nodes[self.owners[k]]
        if n.assigned and n.queue:
            self._scheduled_send(n, c, k, t0)

    def _vtdma_slot(self, c: int, k: int, t0: int) -> None:
        owner = self.allocator.owner(c, k)
        gw = self.nodes[self.gw].ledger
        gw.account_switch(2)
        gw.account_state(CS, TDMA_GUARD)
        n = self.nodes[owner]
        if (c, k) in n.known_grants:
            n.known_grants.discard((c, k))
            if n.queue:
                self._scheduled_send(n, c, k, t0)

    # -------------------------------------------------------------------- run

    def run(self) -> RunResult:
        self._setup_app()
        self._wake()
        events = self.kernel.run_until(self.end_ns)
        g_end = self.ceil_tick(self.end_ns)
        span = self.cfg.sim_duration
        for n in self.nodes.values():
            self._settle(n, g_end)
            n.ledger.close(span)
        return RunResult(
            scenario=self.sc, seed=self.seed, span=span, frames=self.frames, records=self.records,
            ledgers={n: node.ledger for n, node in sorted(self.nodes.items())},
            arrivals=self.arrivals, counters=dict(self.counters), events=events,
            trace=self.kernel.trace,
        )


def run_scenario(cfg: ScenarioConfig | ResolvedScenario, seed: int | None = None, trace: bool = False) -> RunResult:
    return NetworkSimulation(cfg, seed, trace).run()
