"""Command line harness: ``dsoc run | bounds | analyze | presets``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import protocol as pr
from .analysis import dynamic_bounds, is_soc, rank_table, Allocation, static_bounds
from .env import gap_stats, load_matrix, save_matrix, validate_matrix
from .errors import ConfigError, DsocError
from .presets import build_scenario, get_preset, load_config, preset_names, PRESETS
from .sim import Engine, Scenario, TRACE_COLUMNS

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISMATCH = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _fail(code: int, msg: str) -> int:
    print(f"dsoc: {msg}", file=sys.stderr)
    return code


def _dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# run


def run_replication(cfg: dict, r: int, out: str, trace: bool) -> dict:
    """One replication; writes ``rep_XXXX/{metrics,matrix}.json`` and the trace."""
    sc = build_scenario(cfg, r)
    eng = Engine(sc, trace=trace).run()
    m = eng.metrics()
    rep = Path(out) / f"rep_{r:04d}"
    rep.mkdir(exist_ok=True)
    m.to_json(rep / "metrics.json")
    save_matrix(eng.full, rep / "matrix.json")
    if trace:
        eng.trace().to_csv(rep / "trace.csv")
    return m.to_dict()


def _mean_sem(values) -> dict:
    a = np.asarray([v for v in values if v is not None], dtype=float)
    if a.size == 0:
        return {"mean": None, "sem": None, "n": 0}
    sem = float(stats.sem(a)) if a.size > 1 else None
    return {"mean": float(a.mean()), "sem": sem, "n": int(a.size)}


def bounds_for(cfg: dict, metrics: list[dict]) -> dict:
    K, N = cfg["num_channels"], cfg["num_users"]
    if cfg["matrix"] is not None:
        gap = gap_stats(validate_matrix(cfg["matrix"])).min_gap
    else:
        gap = cfg["min_gap"]
    out = {"min_gap": gap}
    try:
        out["static"] = static_bounds(K, N, cfg["delta"], gap).to_dict()
    except (DsocError, ValueError) as exc:
        out["static"] = {"error": str(exc)}
    if cfg["variant"] == pr.DYNAMIC:
        e = sum(ev["kind"] == "enter" for ev in cfg["events"])
        l = sum(ev["kind"] == "leave" for ev in cfg["events"])
        try:
            out["dynamic"] = dynamic_bounds(K, N, cfg["delta"], gap, entries=max(e, 1), exits=l).dynamic
        except (DsocError, ValueError) as exc:
            out["dynamic"] = {"error": str(exc)}
    return out


def aggregate(cfg: dict, metrics: list[dict]) -> dict:
    """Means and standard errors across replications."""
    pots = np.array([m["potential_series"] for m in metrics], dtype=float)
    pot_sem = stats.sem(pots, axis=0).tolist() if len(metrics) > 1 else None
    agg = {
        "config": cfg,
        "replications": len(metrics),
        "seeds": [m["seed"] for m in metrics],
        "fraction_in_soc": float(np.mean([m["final_is_soc"] for m in metrics])),
        "soc_attainment_slot": _mean_sem(m["soc_attained_slot"] for m in metrics),
        "total_reward": _mean_sem(m["total_reward"] for m in metrics),
        "total_collisions": _mean_sem(m["total_collisions"] for m in metrics),
        "collisions_per_user": _mean_sem(np.mean(m["collisions_per_user"]) for m in metrics),
        "total_switch_attempts": _mean_sem(m["total_switch_attempts"] for m in metrics),
        "total_switch_successes": _mean_sem(m["total_switch_successes"] for m in metrics),
        "total_reservation_changes": _mean_sem(m["total_reservation_changes"] for m in metrics),
        "final_potential": _mean_sem(m["final_potential"] for m in metrics),
        "potential": {
            "stride": metrics[0]["potential_stride"],
            "mean": pots.mean(axis=0).tolist(),
            "sem": pot_sem,
        },
        "bounds": bounds_for(cfg, metrics),
    }
    return agg


def default_workers() -> int:
    raw = os.environ.get("SOC_SIM_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"SOC_SIM_WORKERS must be an integer, got {raw!r}")


def cmd_run(args) -> int:
    if bool(args.config) == bool(args.preset):
        raise CliError(EXIT_CONFIG, "give exactly one of --config or --preset")
    try:
        cfg = load_config(args.config) if args.config else get_preset(args.preset)
        if args.reps is not None:
            cfg["replications"] = args.reps
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.stride is not None:
            cfg["potential_stride"] = args.stride
        if cfg["replications"] < 1:
            raise ConfigError("--reps must be at least 1")
        if cfg["potential_stride"] is not None and cfg["potential_stride"] < 1:
            raise ConfigError("--stride must be positive")
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config: {exc}")
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise CliError(EXIT_CONFIG, "--workers must be at least 1")

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _dump(cfg, out / "config.json")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {out}: {exc}")

    R = cfg["replications"]
    try:
        if workers == 1 or R == 1:
            metrics = [run_replication(cfg, r, str(out), args.trace) for r in range(R)]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                metrics = list(pool.map(run_replication, [cfg] * R, range(R), [str(out)] * R, [args.trace] * R))
        agg = aggregate(cfg, metrics)
        _dump(agg, out / "aggregate.json")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write results to {out}: {exc}")
    print(f"{R} replication(s) of {cfg.get('name', args.config)} -> {out}")
    print(f"fraction_in_soc = {agg['fraction_in_soc']:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bounds


def cmd_bounds(args) -> int:
    try:
        if args.matrix:
            m = load_matrix(args.matrix)
            gaps = gap_stats(m)
            K = m.num_channels if args.K is None else args.K
            N = m.num_users if args.N is None else args.N
        else:
            if args.min_gap is None or args.K is None or args.N is None:
                raise ConfigError("need --K, --N and either --min-gap or --matrix")
            gaps, K, N = args.min_gap, args.K, args.N
        if args.exits or args.entries != 1 or args.dynamic:
            rep = dynamic_bounds(K, N, args.delta, gaps, entries=args.entries, exits=args.exits)
        else:
            rep = static_bounds(K, N, args.delta, gaps)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read matrix: {exc}")
    except (DsocError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    width = max(len(k) for k, _ in rep.rows())
    for k, v in rep.rows():
        print(f"{k:<{width}} = {v}")
    print(json.dumps(rep.to_dict()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def read_trace(path) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise ConfigError(f"{path}: header does not match {','.join(TRACE_COLUMNS)}")
        rows = list(rd)
    cols = {c: [r[i] if i < len(r) else "" for r in rows] for i, c in enumerate(TRACE_COLUMNS)}
    for n, r in enumerate(rows):
        if len(r) != len(TRACE_COLUMNS):
            raise ConfigError(f"{path}: row {n + 1} has {len(r)} cells")

    def ints(name):
        try:
            return np.array([int(v) if v != "" else -1 for v in cols[name]], dtype=np.int64)
        except ValueError as exc:
            raise ConfigError(f"{path}: column {name}: {exc}") from exc

    out = {c: ints(c) for c in ("slot", "user_id", "channel", "collided", "reward", "reserved_channel",
                                "potential")}
    out["phase"] = np.array(cols["phase"], dtype=object)
    out["mode"] = np.array(cols["mode"], dtype=object)
    out["action_kind"] = np.array(cols["action_kind"], dtype=object)
    return out


def verify_trace(tr: dict, means: np.ndarray, metrics: Optional[dict]) -> dict:
    """Recompute tallies from a trace and compare with recorded metrics.

    Returns a report dict with a ``mismatches`` list; each entry carries a
    1-based data row (the header is row 0) when a single row is at fault.
    """
    issues: list[dict] = []
    n = len(tr["slot"])
    N, K = means.shape
    user = tr["user_id"]
    if n and (user.max() >= N or user.min() < 0):
        raise ConfigError("trace has user ids outside the matrix")
    if n and tr["reserved_channel"].max() >= K:
        raise ConfigError("trace has channels outside the matrix")
    kind = tr["action_kind"]
    tx = kind == "Transmit"

    def flag(mask, what):
        bad = np.flatnonzero(mask)
        if len(bad):
            i = int(bad[0])
            issues.append({"check": what, "row": i + 1, "slot": int(tr["slot"][i]), "user": int(user[i]),
                           "count": int(len(bad))})

    flag(tx & ~np.isin(tr["collided"], (0, 1)), "collided flag on a transmission")
    flag(~tx & (tr["collided"] != -1), "collided flag without a transmission")
    clean = tx & (tr["collided"] == 0)
    flag(clean & ~np.isin(tr["reward"], (0, 1)), "reward on a clean transmission")
    flag(~clean & (tr["reward"] != -1), "reward without a clean transmission")
    flag((kind != "Idle") & (tr["channel"] < 0), "action without a channel")

    # potential from the reservation map
    rank = rank_table(means)
    res = tr["reserved_channel"]
    held = res >= 0
    contrib = np.zeros(n, dtype=np.int64)
    contrib[held] = rank[user[held], res[held]]
    slots = tr["slot"]
    T = int(slots.max()) + 1 if n else 0
    pot = np.bincount(slots, weights=contrib, minlength=T).astype(np.int64)
    flag(tr["potential"] != pot[slots], "potential")

    # collisions must be shared: a collided transmission has company on its channel
    key = slots * K + np.where(tx, tr["channel"], 0)
    senders = np.bincount(key[tx], minlength=T * K) if n else np.zeros(0, dtype=np.int64)
    cnt = np.zeros(n, dtype=np.int64)
    cnt[tx] = senders[key[tx]]
    flag(tx & ((cnt >= 2) != (tr["collided"] == 1)), "collision resolution")

    # reservation changes and SOC status at block boundaries
    changes = np.zeros(N, dtype=np.int64)
    grid = np.full((T, N), -1, dtype=np.int64)
    grid[slots, user] = res
    prev = np.vstack([np.full((1, N), -1), grid[:-1]]) if T else grid
    changes += ((grid >= 0) & (grid != prev)).sum(axis=0)

    recount = {
        "total_reward": int(tr["reward"][clean].sum()),
        "reward_per_user": np.bincount(user[clean], weights=tr["reward"][clean], minlength=N).astype(int).tolist(),
        "collisions_per_user": np.bincount(user[tx & (tr["collided"] == 1)], minlength=N).tolist(),
        "transmissions_per_user": np.bincount(user[tx], minlength=N).tolist(),
        "reservation_changes_per_user": changes.tolist(),
        "final_potential": int(pot[-1]) if T else 0,
    }

    timeline = []
    soc_state = []
    if metrics is not None:
        L = metrics["mb_len"]
        t0 = metrics["t_rh"]
        for s in range(t0, T, L):
            alloc = {u: int(c) for u, c in enumerate(grid[s]) if c >= 0}
            ok = is_soc(validate_matrix(means), Allocation(alloc))[0] if alloc else True
            soc_state.append((s, ok))
        ev = sorted(metrics["soc_events"])
        for s, ok in soc_state:
            rec = 0
            for es, flag_ in ev:
                if es <= s:
                    rec = flag_
            if bool(rec) != ok:
                issues.append({"check": "SOC status at block start", "slot": s, "recomputed": ok,
                               "recorded": bool(rec)})
                break
        for k in ("total_reward", "reward_per_user", "collisions_per_user", "transmissions_per_user",
                  "reservation_changes_per_user", "final_potential"):
            rec = metrics.get(k)
            if rec is None:
                continue
            got = recount[k]
            if isinstance(rec, list):
                rec = rec[:N]
                got = got[:len(rec)]
            if rec != got:
                issues.append({"check": f"metrics {k}", "recorded": rec, "recomputed": got})
        markers = [{"slot": e["slot"], "kind": e["kind"], "user": e["user"]} for e in metrics.get("events", [])]
        timeline = _soc_timeline(soc_state, markers)
    return {"rows": n, "recomputed": recount, "soc_timeline": timeline, "mismatches": issues,
            "status": "consistent" if not issues else "mismatch"}


def _soc_timeline(soc_state, markers) -> list[dict]:
    out = []
    last = None
    for s, ok in soc_state:
        if ok != last:
            out.append({"slot": s, "kind": "soc" if ok else "not_soc"})
            last = ok
    out += [dict(m, kind=m["kind"]) for m in markers]
    return sorted(out, key=lambda d: d["slot"])


def locate_by_replay(tr: dict, metrics: dict) -> Optional[dict]:
    """Re-run the recorded scenario and return the first row that differs."""
    sc = metrics.get("scenario")
    if not sc:
        return None
    eng = Engine(Scenario.from_dict(sc), trace=True).run()
    ref = eng.trace().columns()
    names = {"phase": pr.PHASE_NAMES, "mode": pr.MODE_NAMES, "action_kind": pr.ACTION_NAMES}
    if len(ref["slot"]) != len(tr["slot"]):
        return {"check": "replay row count", "recorded": len(tr["slot"]), "replayed": len(ref["slot"])}
    for col in TRACE_COLUMNS:
        a = tr[col]
        b = ref[col]
        if col in names:
            b = np.array([names[col][v] if v >= 0 else "" for v in b], dtype=object)
        bad = np.flatnonzero(a != b)
        if len(bad):
            i = int(bad[0])
            return {"check": f"replay column {col}", "row": i + 1, "slot": int(tr["slot"][i]),
                    "user": int(tr["user_id"][i]), "trace": str(a[i]), "replay": str(b[i])}
    return None


def cmd_analyze(args) -> int:
    trace_path = Path(args.trace)
    metrics_path = Path(args.metrics) if args.metrics else trace_path.with_name("metrics.json")
    try:
        m = load_matrix(args.matrix)
        tr = read_trace(trace_path)
        metrics = None
        if metrics_path.exists():
            with open(metrics_path, encoding="utf-8") as fh:
                metrics = json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc))
    except (DsocError, ValueError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    try:
        report = verify_trace(tr, np.asarray(m.means), metrics)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    if report["mismatches"] and metrics is not None and not any("row" in i for i in report["mismatches"]):
        hit = locate_by_replay(tr, metrics)
        if hit:
            report["mismatches"].insert(0, hit)
    if args.out:
        try:
            _dump(report, Path(args.out))
        except OSError as exc:
            raise CliError(EXIT_IO, str(exc))
    print(f"rows checked: {report['rows']}")
    tl = report["soc_timeline"]
    for ev in tl[:20]:
        print(f"  slot {ev['slot']:>8}  {ev['kind']}" + (f" user {ev['user']}" if "user" in ev else ""))
    if len(tl) > 20:
        print(f"  ... {len(tl) - 20} more timeline entries (see --out)")
    if report["mismatches"]:
        for i in report["mismatches"]:
            where = f" at row {i['row']} (slot {i['slot']}, user {i['user']})" if "row" in i else ""
            print(f"MISMATCH {i['check']}{where}", file=sys.stderr)
        print("mismatch")
        return EXIT_MISMATCH
    print("consistent")
    return EXIT_OK


# ---------------------------------------------------------------------------
# presets


def cmd_presets(args) -> int:
    if args.dump:
        try:
            cfg = get_preset(args.dump)
        except ConfigError as exc:
            raise CliError(EXIT_CONFIG, str(exc))
        text = json.dumps(cfg, indent=1) + "\n"
        if args.out:
            try:
                Path(args.out).write_text(text, encoding="utf-8")
            except OSError as exc:
                raise CliError(EXIT_IO, str(exc))
        else:
            sys.stdout.write(text)
        return EXIT_OK
    for name in preset_names():
        print(f"{name:<24} {PRESETS[name]['description']}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsoc", description="Multi-player bandit channel allocation simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run seeded replications of a scenario")
    r.add_argument("--config", help="scenario JSON file")
    r.add_argument("--preset", choices=preset_names())
    r.add_argument("--reps", type=int, help="replication count (overrides the config)")
    r.add_argument("--seed", type=int, help="base seed; replication r uses seed + r")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--trace", action="store_true", help="write a per-slot trace CSV per replication")
    r.add_argument("--stride", type=int, help="keep every n-th slot of the potential series")
    r.add_argument("--workers", type=int, help="parallel processes (default: $SOC_SIM_WORKERS or 1)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bounds", help="print the analytical convergence bounds")
    b.add_argument("--K", type=int)
    b.add_argument("--N", type=int)
    b.add_argument("--delta", type=float, default=0.05)
    b.add_argument("--min-gap", type=float)
    b.add_argument("--matrix", help="reward-matrix JSON; its minimum gap replaces --min-gap")
    b.add_argument("--entries", type=int, default=1)
    b.add_argument("--exits", type=int, default=0)
    b.add_argument("--dynamic", action="store_true", help="include the entry/exit bounds")
    b.set_defaults(func=cmd_bounds)

    a = sub.add_parser("analyze", help="recompute metrics from a trace and check them")
    a.add_argument("trace")
    a.add_argument("matrix")
    a.add_argument("--metrics", help="metrics JSON (default: metrics.json next to the trace)")
    a.add_argument("--out", help="write the verification report as JSON")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("presets", help="list or dump the built-in scenarios")
    s.add_argument("--dump", metavar="NAME", help="print a preset as an editable config")
    s.add_argument("--out", help="write the dumped preset to a file")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, str(exc))


if __name__ == "__main__":
    sys.exit(main())
