"""Command-line entry point: run, sweep and verify-math."""
from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

from . import mac, scenario
from .errors import ConfigError
from .oracles import MUTATIONS, run_oracles, suite_passed
from .outputs import RunManifest, sha256_file, write_run
from .simulation import run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 2, 3, 4
OUT_ENV = "PARKSIM_OUT"

POOLED_METRICS = (
    ("delivery_ratio", lambda s: s["delay"]["delivery_ratio"]),
    ("delay_p50", lambda s: s["delay"]["p50"]),
    ("delay_p90", lambda s: s["delay"]["p90"]),
    ("delay_p99", lambda s: s["delay"]["p99"]),
    ("sensor_life_mean", lambda s: s["lifetime_days"]["sensor"]["mean"]),
    ("sensor_life_sd", lambda s: s["lifetime_days"]["sensor"]["std"]),
    ("router_life_min", lambda s: s["lifetime_days"].get("router", {}).get("min")),
    ("min_life_is_router", lambda s: float(s["min_lifetime_node"]["role"] == "router")),
    ("collided", lambda s: s["frame_outcomes"].get("collided", 0)),
    ("dropped", lambda s: s["frame_outcomes"].get("dropped", 0)),
)


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "out"))


def load_config(path: str | None) -> scenario.ScenarioConfig:
    return scenario.load(path) if path else scenario.ScenarioConfig()


def _split(text: str | None, allowed: tuple[str, ...], what: str) -> list[str]:
    if not text:
        return list(allowed)
    items = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in allowed]
    if bad:
        raise ConfigError([f"unknown {what} {b!r}" for b in bad])
    return items


def execute_run(cfg: scenario.ScenarioConfig, seed: int, out_dir: str) -> dict:
    """One run end to end; returns the artifact digests."""
    result = run_scenario(cfg, seed=seed)
    return write_run(result, out_dir)


# --------------------------------------------------------------------- run


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.scenario)
        changes = {}
        if args.topology:
            changes["topology"] = args.topology
        if args.protocol:
            changes["mac_protocol"] = args.protocol
        cfg = cfg.with_(**changes)
        problems = scenario.validate(cfg)
        if problems:
            raise ConfigError(problems)
    except ConfigError as e:
        for p in e.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot read scenario: {e}", file=sys.stderr)
        return EXIT_CONFIG
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else default_out_root() / f"{cfg.topology}_{cfg.mac.protocol}" / f"run_{seed}"
    try:
        digests = execute_run(cfg, seed, str(out))
        RunManifest(args.scenario, str(out), [seed], 1, digests).save(out / "manifest.json")
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # report, never a traceback-only failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, digest in digests.items():
        print(f"{out / name}  {digest}")
    return EXIT_OK


# ------------------------------------------------------------------- sweep


@dataclass
class SweepOutcome:
    manifest: RunManifest
    table: list[dict]
    interrupted: bool = False

    @property
    def failed(self) -> list[str]:
        return [k for k, c in self.manifest.cells.items() if c["status"] == "failed"]


def _cell_key(topology: str, protocol: str) -> str:
    return f"{topology}_{protocol}"


def _pool(rows: list[dict], runs: int) -> dict:
    out = {}
    for name, get in POOLED_METRICS:
        vals = [get(r) for r in rows]
        vals = [v for v in vals if v is not None]
        out[name] = statistics.fmean(vals) if vals else None
        if runs > 1:
            out[f"{name}_sd"] = statistics.stdev(vals) if len(vals) > 1 else None
    return out


def sweep(base: scenario.ScenarioConfig, protocols, topologies, runs: int, seed0: int,
          out_root: str | os.PathLike, parallel: int = 1, scenario_path: str | None = None) -> SweepOutcome:
    """Every (topology, protocol) cell over seeds seed0 .. seed0+runs-1, sharing seeds across cells."""
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    seeds = list(range(seed0, seed0 + runs))
    manifest = RunManifest(scenario_path, str(root), seeds, parallel)
    tasks = []
    for topo in topologies:
        for proto in protocols:
            key = _cell_key(topo, proto)
            cfg = base.with_(topology=topo, mac_protocol=proto)
            problems = scenario.validate(cfg)
            manifest.cells[key] = {"status": "pending", "topology": topo, "protocol": proto, "runs": {}}
            if problems:
                manifest.cells[key].update(status="failed", error="; ".join(problems))
                continue
            for s in seeds:
                tasks.append((key, cfg, s, str(root / key / f"run_{s}")))
                manifest.cells[key]["runs"][str(s)] = {"status": "pending"}
    mpath = root / "sweep_manifest.json"
    manifest.save(mpath)

    def record(key, s, digests=None, error=None):
        cell = manifest.cells[key]
        if error is None:
            cell["runs"][str(s)] = {"status": "done", "files": digests}
        else:
            cell["runs"][str(s)] = {"status": "failed", "error": error}
        manifest.save(mpath)

    interrupted = False
    try:
        if parallel > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                futs = {pool.submit(execute_run, cfg, s, out): (key, s) for key, cfg, s, out in tasks}
                try:
                    for fut in as_completed(futs):
                        key, s = futs[fut]
                        try:
                            record(key, s, fut.result())
                        except Exception as e:
                            record(key, s, error=f"{type(e).__name__}: {e}")
                except KeyboardInterrupt:
                    for f in futs:
                        f.cancel()
                    raise
        else:
            for key, cfg, s, out in tasks:
                try:
                    record(key, s, execute_run(cfg, s, out))
                except Exception as e:
                    record(key, s, error=f"{type(e).__name__}: {e}")
    except KeyboardInterrupt:
        interrupted = True

    table = []
    for key, cell in manifest.cells.items():
        states = [r["status"] for r in cell["runs"].values()]
        for r in cell["runs"].values():
            if r["status"] == "pending":
                r["status"] = "missing"
        if cell["status"] == "failed":
            pass  # rejected before any run
        elif any(st == "failed" for st in states):
            cell["status"] = "failed"
        elif any(st == "pending" for st in states):
            cell["status"] = "missing"
        else:
            cell["status"] = "done"
        summaries = []
        for s, r in cell["runs"].items():
            if r["status"] == "done":
                p = root / key / f"run_{s}" / "summary.json"
                summaries.append(json.loads(p.read_text(encoding="utf-8")))
        if summaries:
            table.append({"topology": cell["topology"], "protocol": cell["protocol"], "runs": len(summaries),
                          **_pool(summaries, runs)})
    manifest.save(mpath)
    if table:
        cols = list(table[0])
        with open(root / "pooled.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in table:
                w.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v)) for k, v in row.items()})
        manifest.files["pooled.csv"] = sha256_file(root / "pooled.csv")
        manifest.save(mpath)
    return SweepOutcome(manifest, table, interrupted)


def cmd_sweep(args) -> int:
    try:
        base = load_config(args.scenario)
        protocols = _split(args.protocols, mac.PROTOCOLS, "protocol")
        topologies = _split(args.topologies, scenario.TOPOLOGIES, "topology")
        if args.runs < 1:
            raise ConfigError(["--runs must be >= 1"])
    except ConfigError as e:
        for p in e.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot read scenario: {e}", file=sys.stderr)
        return EXIT_CONFIG
    runs = args.runs
    seed0 = base.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else default_out_root()
    t0 = time.perf_counter()
    res = sweep(base, protocols, topologies, runs, seed0, out, args.parallel, args.scenario)
    for row in res.table:
        print(f"{row['topology']:9s} {row['protocol']:9s} runs={row['runs']:3d} "
              f"p50={row['delay_p50']:.3f}s sensor_life={row['sensor_life_mean']:.0f}d "
              f"sd={row['sensor_life_sd']:.1f}d collided={row['collided']:.1f}")
    for key in res.failed:
        print(f"cell failed: {key}", file=sys.stderr)
    print(f"{len(res.table)} cells in {time.perf_counter() - t0:.1f}s; manifest {out / 'sweep_manifest.json'}")
    if res.interrupted:
        print("sweep interrupted; unfinished cells are marked missing", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME if res.failed else EXIT_OK


# ------------------------------------------------------------- verify-math


def cmd_verify_math(args) -> int:
    impl = None
    if args.mutate:
        name, fn = MUTATIONS[args.mutate]
        impl = {name: fn}
    results = run_oracles(impl, seed=args.seed if args.seed is not None else 20240601, quick=args.quick)
    for r in results:
        print(r.line())
    failed = sorted({r.function for r in results if not r.passed and not r.advisory})
    if failed:
        print(f"verification failed: {', '.join(failed)}")
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK if suite_passed(results) else EXIT_VERIFY


def cmd_defaults(args) -> int:
    sys.stdout.write(scenario.to_text(scenario.ScenarioConfig()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parksim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and write its artifacts")
    r.add_argument("scenario", nargs="?", help="scenario file (defaults when omitted)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<topology>_<protocol>/run_<seed>)")
    r.add_argument("--topology", choices=scenario.TOPOLOGIES)
    r.add_argument("--protocol", choices=mac.PROTOCOLS)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="protocol x topology x seed sweep with a pooled table")
    s.add_argument("scenario", nargs="?")
    s.add_argument("--protocols", help="comma list (default: all)")
    s.add_argument("--topologies", help="comma list (default: all)")
    s.add_argument("--runs", type=int, default=20)
    s.add_argument("--seed", type=int, help="first seed (default: scenario seed)")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./out)")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify-math", help="check the traffic mathematics against numerical oracles")
    v.add_argument("--quick", action="store_true", help="smaller Monte-Carlo samples")
    v.add_argument("--seed", type=int)
    v.add_argument("--mutate", choices=sorted(MUTATIONS), help="inject a known defect (sanity check)")
    v.set_defaults(func=cmd_verify_math)

    d = sub.add_parser("defaults", help="print the default scenario file")
    d.set_defaults(func=cmd_defaults)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
