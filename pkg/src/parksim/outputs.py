"""Run artifacts: frozen-format CSV files, the summary document and content digests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import NS_PER_S
from .metrics import FitError, energy_summary, fit_weibull_mle, info_delay_cdf, merge_interarrivals, min_lifetime_node
from .node import delay_split_prediction, ModelAssumptionError
from .simulation import RunResult
from .traffic import fit_sum_weibull

FRAME_COLUMNS = ("origin", "src", "dst", "kind", "gen_time", "tx_time", "rx_time", "outcome", "retries")
DELAY_COLUMNS = ("sensor", "sensed_at", "sent_at", "delivered_at", "mode", "hops")
ENERGY_COLUMNS = ("node", "role", "tx_mj", "rx_mj", "cs_mj", "off_mj", "switch_count", "total_mj", "lifetime_days")
INTERARRIVAL_COLUMNS = ("sensor", "received_at", "interarrival")
ARTIFACTS = ("frames.csv", "delays.csv", "energy.csv", "interarrivals.csv", "summary.json")


def fmt_time(ns: int | None) -> str:
    """Seconds with nine decimals, exact for integer nanoseconds."""
    if ns is None:
        return ""
    sign = "-" if ns < 0 else ""
    q, r = divmod(abs(int(ns)), NS_PER_S)
    return f"{sign}{q}.{r:09d}"


def fmt_float(x: float, digits: int = 6) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:.{digits}f}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def frame_rows(result: RunResult):
    for f in result.frames:
        yield (f.origin, f.src, f.dst, f.kind, fmt_time(f.gen_time), fmt_time(f.tx_time),
               fmt_time(f.rx_time), f.outcome, f.retries)


def delay_rows(result: RunResult):
    for r in result.records:
        yield (r.sensor, fmt_time(r.sensed_at), fmt_time(r.sent_at), fmt_time(r.delivered_at), r.mode, r.hops)


def energy_rows(result: RunResult):
    lifetimes = result.lifetimes()
    for n, led in sorted(result.ledgers.items()):
        yield (n, result.roles[n], fmt_float(led.mj["tx"]), fmt_float(led.mj["rx"]), fmt_float(led.mj["cs"]),
               fmt_float(led.mj["off"]), led.switch_count, fmt_float(led.total_mj), fmt_float(lifetimes[n], 3))


def interarrival_rows(result: RunResult):
    for s, times in sorted(result.arrivals.items()):
        prev = None
        for t in times:
            yield (s, fmt_time(t), "" if prev is None else fmt_time(t - prev))
            prev = t


def _fit_dict(samples) -> dict | None:
    try:
        fit = fit_weibull_mle(np.asarray(samples, dtype=float))
    except FitError:
        return None
    return {"shape": fit.shape, "scale": fit.scale, "n": fit.n}


def summarize(result: RunResult) -> dict:
    cfg = result.config
    lam = fit_sum_weibull(cfg.parking, cfg.vacant).scale
    per_sensor = np.concatenate([np.diff(np.asarray(v, dtype=float)) / NS_PER_S
                                 for v in result.arrivals.values() if len(v) > 1] or [np.empty(0)])
    packet_fit = _fit_dict(per_sensor[per_sensor > 0])
    if packet_fit:
        packet_fit["scale_ratio"] = packet_fit["scale"] / lam
    merged = None
    if sum(len(v) for v in result.arrivals.values()) >= 2:
        gaps = merge_interarrivals({k: np.asarray(v) / NS_PER_S for k, v in result.arrivals.items()}).samples
        merged = _fit_dict(gaps[gaps > 0])

    delays = info_delay_cdf(result.records)
    t_cycle = result.t_cycle
    try:
        predicted = delay_split_prediction(cfg.app, t_cycle)[0]
    except ModelAssumptionError:
        predicted = None
    roles = result.roles
    energy = energy_summary(result.ledgers, roles, result.span, cfg.battery_mah, cfg.battery_volts)
    lifetimes = result.lifetimes()
    weakest = min_lifetime_node(lifetimes, roles)
    outcomes = {}
    for f in result.frames:
        outcomes[f.outcome] = outcomes.get(f.outcome, 0) + 1
    return {
        "topology": cfg.topology,
        "protocol": cfg.mac.protocol,
        "seed": result.seed,
        "sim_duration": result.span,
        "t_cycle": t_cycle,
        "slots": {"n_csma": result.scenario.mac.n_csma, "n_tdma": result.scenario.mac.n_tdma},
        "sum_fit_scale": lam,
        "packet_interarrival_fit": packet_fit,
        "merged_interarrival_fit": merged,
        "delay": {
            **delays.percentiles(),
            "delivery_ratio": delays.delivery_ratio,
            "records": delays.total,
            "delivered": delays.delivered,
            "within_t_cycle": delays.fraction_within(t_cycle),
            "predicted_within_t_cycle": predicted,
        },
        "lifetime_days": {role: asdict(s) for role, s in energy.items()},
        "min_lifetime_node": {"node": weakest, "role": roles[weakest], "days": lifetimes[weakest]},
        "frame_outcomes": dict(sorted(outcomes.items())),
        "counters": result.counters,
        "events": result.events,
    }


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"not serialisable: {type(x)}")


def dump_json(obj, path: Path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    path.write_text(text + "\n", encoding="utf-8")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run(result: RunResult, out_dir: str | os.PathLike) -> dict[str, str]:
    """Write the five artifacts atomically (staging directory then rename); return their digests."""
    out = Path(out_dir)
    stage = out.with_name(out.name + ".partial")
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    _write_csv(stage / "frames.csv", FRAME_COLUMNS, frame_rows(result))
    _write_csv(stage / "delays.csv", DELAY_COLUMNS, delay_rows(result))
    _write_csv(stage / "energy.csv", ENERGY_COLUMNS, energy_rows(result))
    _write_csv(stage / "interarrivals.csv", INTERARRIVAL_COLUMNS, interarrival_rows(result))
    dump_json(summarize(result), stage / "summary.json")
    digests = {name: sha256_file(stage / name) for name in ARTIFACTS}
    if out.exists():
        shutil.rmtree(out)
    os.replace(stage, out)
    return digests


@dataclass
class RunManifest:
    scenario: str | None
    output_dir: str
    seeds: list[int]
    parallel: int = 1
    files: dict[str, str] = field(default_factory=dict)
    cells: dict[str, dict] = field(default_factory=dict)

    def save(self, path: str | os.PathLike) -> None:
        dump_json(asdict(self), Path(path))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
