"""Topologies and the serialisable scenario description."""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

from . import mac
from .errors import ConfigError, RoutingHoleError
from .node import AppConfig, GradientTable, build_gradient
from .radio import Corner, LinkGeometry, RadioPowerProfile, path_loss_db, received_power_dbm
from .traffic import PARKING_TIME, VACANT_TIME, WeibullParams

GATEWAY, ROUTER, SENSOR = "gateway", "router", "sensor"
CROSSROAD, LINE, MESH = "crossroad", "line", "mesh"
TOPOLOGIES = (CROSSROAD, LINE, MESH)
SPACING = 5.0


@dataclass
class Topology:
    kind: str
    roles: dict[int, str]
    geometry: LinkGeometry
    gateway: int = 0

    @property
    def nodes(self) -> list[int]:
        return sorted(self.roles)

    def of_role(self, role: str) -> list[int]:
        return [n for n in self.nodes if self.roles[n] == role]

    @property
    def sensors(self) -> list[int]:
        return self.of_role(SENSOR)

    @property
    def routers(self) -> list[int]:
        return self.of_role(ROUTER)

    def describe(self) -> str:
        lines = [f"kind={self.kind}"]
        for n in self.nodes:
            x, y = self.geometry.positions[n]
            streets = ",".join(sorted(self.geometry.streets_of(n)))
            lines.append(f"{n} {self.roles[n]} {x:.3f} {y:.3f} {streets}")
        return "\n".join(lines)


def _corner(x, y, a, b) -> Corner:
    return Corner((float(x), float(y)), (a, b))


def _crossroad() -> tuple[dict, dict, dict, list]:
    # Gateway on the intersection, four arms of six sensors.  Opposite arms
    # share a street; perpendicular arms only meet around the corner.
    roles, pos = {0: GATEWAY}, {0: (0.0, 0.0)}
    h, v = {0}, {0}
    nid = 1
    for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1)):
        for k in range(1, 7):
            roles[nid] = SENSOR
            pos[nid] = (dx * SPACING * k, dy * SPACING * k)
            (h if dy == 0 else v).add(nid)
            nid += 1
    return roles, pos, {"ew": frozenset(h), "ns": frozenset(v)}, [_corner(0, 0, "ew", "ns")]


def _line() -> tuple[dict, dict, dict, list]:
    # Gateway at one end; the street kinks at mid-length where the router
    # stands, so the far half only reaches the gateway around that corner.
    roles, pos = {0: GATEWAY, 1: ROUTER}, {0: (0.0, 0.0), 1: (65.0, 0.0)}
    near, far = {0, 1}, {1}
    nid = 2
    for k in range(1, 13):
        roles[nid], pos[nid] = SENSOR, (SPACING * k, 0.0)
        near.add(nid)
        nid += 1
    for k in range(1, 13):
        roles[nid], pos[nid] = SENSOR, (65.0, SPACING * k)
        far.add(nid)
        nid += 1
    streets = {"near": frozenset(near), "far": frozenset(far)}
    return roles, pos, streets, [_corner(65, 0, "near", "far")]


def _mesh() -> tuple[dict, dict, dict, list]:
    # Square of four 80 m streets, gateway on the south-west intersection.
    # Routers on the other intersections and mid-way along the far streets.
    side = 80.0
    roles = {0: GATEWAY}
    pos = {0: (0.0, 0.0)}
    routers = [(side, 0.0), (0.0, side), (side, side), (42.5, side), (side, 42.5)]
    streets = {"s": {0}, "w": {0}, "n": set(), "e": set()}
    router_streets = [("s", "e"), ("w", "n"), ("n", "e"), ("n",), ("e",)]
    for i, (p, ss) in enumerate(zip(routers, router_streets), start=1):
        roles[i], pos[i] = ROUTER, p
        for s in ss:
            streets[s].add(i)
    nid = 6
    for name, f in (
        ("s", lambda k: (SPACING * k, 0.0)),
        ("w", lambda k: (0.0, SPACING * k)),
        ("n", lambda k: (SPACING * k, side)),
        ("e", lambda k: (side, SPACING * k)),
    ):
        for k in range(1, 16):
            roles[nid], pos[nid] = SENSOR, f(k)
            streets[name].add(nid)
            nid += 1
    corners = [
        _corner(0, 0, "s", "w"),
        _corner(side, 0, "s", "e"),
        _corner(0, side, "w", "n"),
        _corner(side, side, "n", "e"),
    ]
    return roles, pos, {k: frozenset(v) for k, v in streets.items()}, corners


_BUILDERS = {CROSSROAD: _crossroad, LINE: _line, MESH: _mesh}


def build_topology(kind: str, corner_penalty_db: float = 20.0, wavelength: float = 0.125) -> Topology:
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise ConfigError([f"unknown topology {kind!r}"]) from None
    roles, pos, streets, corners = builder()
    geom = LinkGeometry(pos, streets, corners, wavelength=wavelength, corner_penalty_db=corner_penalty_db)
    return Topology(kind, roles, geom)


# ------------------------------------------------------------------ links


@dataclass
class LinkTable:
    """Mean received power between every ordered pair (no fading)."""

    topology: Topology
    radio: RadioPowerProfile
    rx_dbm: dict[tuple[int, int], float] = field(init=False)

    def __post_init__(self):
        nodes = self.topology.nodes
        self.rx_dbm = {}
        for a in nodes:
            for b in nodes:
                if a < b:
                    loss = path_loss_db(a, b, self.topology.geometry)
                    p = received_power_dbm(self.radio.tx_power_dbm, loss) if math.isfinite(loss) else -math.inf
                    self.rx_dbm[a, b] = self.rx_dbm[b, a] = p

    def audible(self, a: int, b: int) -> bool:
        return a != b and self.rx_dbm[a, b] >= self.radio.sensitivity_dbm

    def loss_db(self, a: int, b: int) -> float:
        return self.radio.tx_power_dbm - self.rx_dbm[a, b]

    @cached_property
    def neighbours(self) -> dict[int, frozenset[int]]:
        nodes = self.topology.nodes
        return {a: frozenset(b for b in nodes if self.audible(a, b)) for a in nodes}

    def routing_adjacency(self) -> dict[int, set[int]]:
        """Audible links usable for data: sensors talk to FFDs only."""
        roles = self.topology.roles
        adj: dict[int, set[int]] = {n: set() for n in self.topology.nodes}
        for a in self.topology.nodes:
            for b in self.neighbours[a]:
                if roles[a] == SENSOR and roles[b] == SENSOR:
                    continue
                adj[a].add(b)
        return adj

    def gradient(self) -> GradientTable:
        return build_gradient(self.routing_adjacency(), self.topology.gateway)


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class MacSettings:
    """MAC parameters as written in a scenario; ``None`` slot counts mean the per-topology default."""

    protocol: str = mac.CSMA
    slot_duration: float = 0.1
    n_csma: int | None = None
    n_tdma: int | None = None
    t_gts: float = 0.0
    t_inactive: float = 0.0
    sync_slots: int = 1
    funneling_depth: int = 1
    backoff_window: int = 16
    backoff_unit: float = 320e-6
    max_retries: int = 5
    queue_capacity: int = 64


@dataclass(frozen=True)
class ScenarioConfig:
    topology: str = CROSSROAD
    corner_penalty_db: float = 20.0
    wavelength: float = 0.125
    mac: MacSettings = MacSettings()
    parking: WeibullParams = PARKING_TIME
    vacant: WeibullParams = VACANT_TIME
    app: AppConfig = AppConfig()
    radio: RadioPowerProfile = RadioPowerProfile()
    fading: bool = True
    battery_mah: float = 6300.0
    battery_volts: float = 3.0
    seed: int = 1
    sim_duration: float = 10_000.0
    run_count: int = 20

    def with_(self, **changes) -> "ScenarioConfig":
        mac_changes = {k[4:]: v for k, v in changes.items() if k.startswith("mac_")}
        app_changes = {k[4:]: v for k, v in changes.items() if k.startswith("app_")}
        rest = {k: v for k, v in changes.items() if not k.startswith(("mac_", "app_"))}
        cfg = replace(self, **rest)
        if mac_changes:
            cfg = replace(cfg, mac=replace(cfg.mac, **mac_changes))
        if app_changes:
            cfg = replace(cfg, app=replace(cfg.app, **app_changes))
        return cfg


@dataclass
class ResolvedScenario:
    config: ScenarioConfig
    topology: Topology
    links: LinkTable
    gradient: GradientTable
    mac: mac.MacConfig
    modes: dict[int, str]
    schedule: mac.SlotSchedule


def resolve(cfg: ScenarioConfig) -> ResolvedScenario:
    """Build the topology, routing, slot budget and TDMA schedule; raise ConfigError listing all problems."""
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return _resolve(cfg)


def _resolve(cfg: ScenarioConfig) -> ResolvedScenario:
    topo = build_topology(cfg.topology, cfg.corner_penalty_db, cfg.wavelength)
    links = LinkTable(topo, cfg.radio)
    grad = links.gradient()
    members = [n for n in topo.nodes if n != topo.gateway]
    m = cfg.mac
    one_hop = sum(1 for n in members if grad.hops[n] == 1)
    depth = m.funneling_depth
    tdma_members = sum(1 for n in members if grad.hops[n] <= depth)
    n_csma, n_tdma = mac.default_budget(
        m.protocol, one_hop, len(members), tdma_members,
        has_csma_nodes=tdma_members < len(members), sync_slots=m.sync_slots,
    ) if m.protocol in mac.PROTOCOLS else (0, 0)
    mc = mac.MacConfig(
        protocol=m.protocol,
        slot_duration=m.slot_duration,
        n_csma=n_csma if m.n_csma is None else m.n_csma,
        n_tdma=n_tdma if m.n_tdma is None else m.n_tdma,
        t_gts=m.t_gts,
        t_inactive=m.t_inactive,
        sync_slots=m.sync_slots,
        funneling_depth=m.funneling_depth,
        backoff_window=m.backoff_window,
        backoff_unit=m.backoff_unit,
        max_retries=m.max_retries,
    )
    if mc.protocol == mac.TDMA:
        modes = dict.fromkeys(members, mac.TDMA)
        schedule = mac.tdma_build_schedule(members, mc, grad.hops)
    elif mc.protocol == mac.FUNNELING:
        modes, schedule = mac.funneling_assign(members, grad.hops, mc)
    else:
        modes = dict.fromkeys(members, mac.CSMA)
        schedule = mac.SlotSchedule(mac.slot_layout(mc), {})
    return ResolvedScenario(cfg, topo, links, grad, mc, modes, schedule)


def validate(cfg: ScenarioConfig) -> list[str]:
    """Every violated invariant, collected in one pass (empty list means valid)."""
    errs: list[str] = []
    if cfg.topology not in TOPOLOGIES:
        errs.append(f"unknown topology {cfg.topology!r}")
    errs += cfg.app.problems()
    m = cfg.mac
    if m.protocol not in mac.PROTOCOLS:
        errs.append(f"unknown protocol {m.protocol!r}")
    if m.queue_capacity < 1:
        errs.append("queue_capacity must be >= 1")
    if cfg.sim_duration <= 0:
        errs.append("sim_duration must be positive")
    if cfg.run_count < 1:
        errs.append("run_count must be >= 1")
    if cfg.battery_mah <= 0 or cfg.battery_volts <= 0:
        errs.append("battery capacity and voltage must be positive")
    if cfg.corner_penalty_db < 0 or cfg.wavelength <= 0:
        errs.append("corner penalty must be >= 0 and wavelength > 0")
    if not (cfg.seed >= 0):
        errs.append("seed must be non-negative")
    if errs:
        return errs
    try:
        topo = build_topology(cfg.topology, cfg.corner_penalty_db, cfg.wavelength)
        grad = LinkTable(topo, cfg.radio).gradient()
    except RoutingHoleError as e:
        return errs + e.problems
    members = [n for n in topo.nodes if n != topo.gateway]
    probe = mac.MacConfig(
        protocol=m.protocol, slot_duration=m.slot_duration,
        n_csma=m.n_csma if m.n_csma is not None else 1,
        n_tdma=m.n_tdma if m.n_tdma is not None else 0,
        t_gts=m.t_gts, t_inactive=m.t_inactive, sync_slots=m.sync_slots if m.n_csma is not None or m.n_tdma is not None else 0,
        funneling_depth=m.funneling_depth, backoff_window=m.backoff_window,
        backoff_unit=m.backoff_unit, max_retries=m.max_retries,
    )
    errs += [p for p in probe.problems() if "sync region" not in p or m.n_csma is not None]
    if errs:
        return errs
    try:
        r = _resolve(cfg)
    except ConfigError as e:
        return e.problems
    mc = r.mac
    errs += mc.problems()
    layout = mac.slot_layout(mc)
    n_csma_data = layout.count(mac.SLOT_CSMA)
    csma_nodes = [n for n in members if r.modes[n] == mac.CSMA]
    if csma_nodes and n_csma_data == 0:
        errs.append(f"{len(csma_nodes)} CSMA nodes but no contention slots")
    if mc.protocol == mac.IQUEUE and layout.count(mac.SLOT_VTDMA) == 0:
        errs.append("iQueue needs at least one vTDMA slot")
    return errs


# ------------------------------------------------------------- file format

_SECTIONS = {
    "topology": {"kind": "topology", "corner_penalty_db": "corner_penalty_db", "wavelength": "wavelength"},
    "mac": {f.name: f"mac.{f.name}" for f in dataclasses.fields(MacSettings)},
    "traffic": {
        "parking_shape": "parking.shape", "parking_scale": "parking.scale",
        "vacant_shape": "vacant.shape", "vacant_scale": "vacant.scale",
    },
    "app": {"mode": "app.mode", "period": "app.period", "threshold": "app.threshold"},
    "radio": {
        **{f.name: f"radio.{f.name}" for f in dataclasses.fields(RadioPowerProfile)},
        "fading": "fading", "battery_mah": "battery_mah", "battery_volts": "battery_volts",
    },
    "run": {"seed": "seed", "sim_duration": "sim_duration", "run_count": "run_count"},
}

_INT_KEYS = {"n_csma", "n_tdma", "sync_slots", "funneling_depth", "backoff_window", "max_retries",
             "queue_capacity", "seed", "run_count"}
_STR_KEYS = {"kind", "protocol", "mode"}
_BOOL_KEYS = {"fading"}


def _get(cfg: ScenarioConfig, path: str):
    obj = cfg
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def to_text(cfg: ScenarioConfig) -> str:
    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for key, path in keys.items():
            out.write(f"{key} = {_fmt(_get(cfg, path))}\n")
        out.write("\n")
    return out.getvalue()


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if key in ("n_csma", "n_tdma") and raw.lower() == "auto":
        return None
    if key in _INT_KEYS:
        return int(raw)
    return float(raw)


def from_text(text: str) -> ScenarioConfig:
    """Parse a scenario file; unknown sections/keys and malformed values are all reported together."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError([f"malformed scenario file: {e}"]) from None
    errs: list[str] = []
    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            errs.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                errs.append(f"unknown key {key!r} in [{section}]")
                continue
            try:
                values[_SECTIONS[section][key]] = _parse_value(key, raw)
            except ValueError as e:
                errs.append(f"[{section}] {key}: {e}")
    if errs:
        raise ConfigError(errs)

    def sub(prefix):
        return {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(prefix + ".")}

    base = ScenarioConfig()
    try:
        cfg = replace(
            base,
            **{k: v for k, v in values.items() if "." not in k},
            mac=replace(base.mac, **sub("mac")),
            app=replace(base.app, **sub("app")),
            radio=replace(base.radio, **sub("radio")),
            parking=replace(base.parking, **sub("parking")),
            vacant=replace(base.vacant, **sub("vacant")),
        )
    except ValueError as e:
        raise ConfigError([str(e)]) from None
    return cfg


def load(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return from_text(fh.read())
