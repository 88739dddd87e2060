"""Built-in experiment configurations and the JSON config schema.

A run config is a JSON object::

    {
      "name": "static-small",          optional label
      "description": "...",            optional
      "num_channels": 6,               K
      "num_users": 4,                  initial users; ignored when "matrix" is given
      "matrix": null,                  fixed N x K table, or null to draw one per replication
      "min_gap": 0.1,                  gap floor for drawn rows (initial and newcomers)
      "delta": 0.05,
      "horizon": 200000,
      "variant": "static",             "static" | "static_heuristic" | "dynamic"
      "events": [                      dynamic variant only
        {"slot": 5000, "kind": "enter"},
        {"slot": 10000, "kind": "leave"}      "user": id, or omitted for a random SMCS user
      ],
      "replications": 100,
      "seed": 0,                       replication r uses seed + r
      "potential_stride": null,        null: every slot up to 2e5 slots, else one per master block
      "time_scale": 1.0                documentation only: horizon relative to the source setup
    }

Replication ``r`` draws its matrix from ``make_rng(seed + r, 1)`` so runs are
reproducible one by one.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .env import make_rng, random_matrix, validate_matrix
from .errors import ConfigError, DsocError
from .protocol import DYNAMIC, STATIC, STATIC_HEURISTIC, VARIANTS
from .sim import Event, Scenario

DEFAULTS = {
    "matrix": None,
    "min_gap": 0.05,
    "delta": 0.05,
    "variant": STATIC,
    "events": [],
    "replications": 1,
    "seed": 0,
    "potential_stride": None,
    "time_scale": 1.0,
}

# dynamic schedules come from 1e5-slot experiments; desk runs shrink them 5x
DYNAMIC_SCALE = 0.2


def _scaled(slot: int) -> int:
    return int(round(slot * DYNAMIC_SCALE))


def _events(enters, leaves) -> list[dict]:
    ev = [{"slot": _scaled(s), "kind": "enter"} for s in enters]
    ev += [{"slot": _scaled(s), "kind": "leave"} for s in leaves]
    return sorted(ev, key=lambda e: (e["slot"], e["kind"]))


PRESETS: dict[str, dict] = {
    "static-small": {
        "description": "Static network, K=6, N=4, gap floor 0.1; convergence to a stable allocation.",
        "num_channels": 6, "num_users": 4, "min_gap": 0.1, "delta": 0.05, "horizon": 200_000,
        "variant": STATIC, "replications": 100,
    },
    "static-large": {
        "description": "Static network, K=10, N=10 over 1e5 slots (potential, reward, switches, collisions).",
        "num_channels": 10, "num_users": 10, "min_gap": 0.05, "delta": 0.05, "horizon": 100_000,
        "variant": STATIC, "replications": 100,
    },
    "static-large-heuristic": {
        "description": "As static-large with the shortened-block backoff variant.",
        "num_channels": 10, "num_users": 10, "min_gap": 0.05, "delta": 0.05, "horizon": 100_000,
        "variant": STATIC_HEURISTIC, "replications": 100,
    },
    "homogeneous": {
        "description": "Every user sees the same means 0.1, 0.2, ..., 0.8 on K=8 channels, N=4.",
        "num_channels": 8, "matrix": [[round(0.1 * (k + 1), 1) for k in range(8)] for _ in range(4)],
        "delta": 0.05, "horizon": 100_000, "variant": STATIC, "replications": 100,
    },
    "dynamic-sparse": {
        "description": "K=10, one initial user; entries at 25k and 75k, one random exit at 50k (slots x0.2).",
        "num_channels": 10, "num_users": 1, "min_gap": 0.05, "delta": 0.05, "horizon": _scaled(100_000),
        "variant": DYNAMIC, "events": _events([25_000, 75_000], [50_000]),
        "replications": 100, "time_scale": DYNAMIC_SCALE,
    },
    "dynamic-alternating": {
        "description": "K=10, three initial users; an exit then an entry alternating every 10k slots (x0.2).",
        "num_channels": 10, "num_users": 3, "min_gap": 0.05, "delta": 0.05, "horizon": _scaled(100_000),
        "variant": DYNAMIC,
        "events": _events([20_000, 40_000, 60_000, 80_000], [10_000, 30_000, 50_000, 70_000, 90_000]),
        "replications": 100, "time_scale": DYNAMIC_SCALE,
    },
    "dynamic-mixed": {
        "description": "K=10, five initial users; entries at 20k, 30k, 50k and exits at 42k, 60k, 70k (x0.2).",
        "num_channels": 10, "num_users": 5, "min_gap": 0.05, "delta": 0.05, "horizon": _scaled(100_000),
        "variant": DYNAMIC, "events": _events([20_000, 30_000, 50_000], [42_000, 60_000, 70_000]),
        "replications": 100, "time_scale": DYNAMIC_SCALE,
    },
}


def preset_names() -> list[str]:
    return list(PRESETS)


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return normalize({"name": name, **copy.deepcopy(PRESETS[name])})


def load_config(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return normalize(raw)


def normalize(raw: dict) -> dict:
    """Fill defaults and check the config invariants; returns a new dict."""
    cfg = {**copy.deepcopy(DEFAULTS), **raw}
    unknown = set(cfg) - set(DEFAULTS) - {"name", "description", "num_channels", "num_users", "horizon"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("num_channels", "horizon"):
        if not isinstance(cfg.get(key), int) or cfg[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if cfg["variant"] not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}")
    if not isinstance(cfg["replications"], int) or cfg["replications"] < 1:
        raise ConfigError("replications must be an integer >= 1")
    if cfg["matrix"] is None:
        if not isinstance(cfg.get("num_users"), int) or cfg["num_users"] < 1:
            raise ConfigError("num_users must be a positive integer when no matrix is given")
    else:
        try:
            m = validate_matrix(cfg["matrix"])
        except (DsocError, ValueError) as exc:
            raise ConfigError(f"matrix: {exc}") from exc
        cfg["num_users"] = m.num_users
    if not isinstance(cfg["events"], list):
        raise ConfigError("events must be a list")
    # building one scenario runs every remaining check
    build_scenario(cfg, 0)
    return cfg


def build_scenario(cfg: dict, replication: int) -> Scenario:
    seed = int(cfg["seed"]) + replication
    K = cfg["num_channels"]
    try:
        if cfg["matrix"] is not None:
            m = validate_matrix(cfg["matrix"])
        else:
            m = random_matrix(cfg["num_users"], K, make_rng(seed, 1), cfg["min_gap"])
        events = [Event(int(e["slot"]), e["kind"], e.get("rewards"), e.get("user")) for e in cfg["events"]]
        return Scenario(num_channels=K, matrix=m, delta=float(cfg["delta"]), horizon=cfg["horizon"],
                        variant=cfg["variant"], events=events, seed=seed, min_gap=float(cfg["min_gap"]),
                        potential_stride=cfg["potential_stride"])
    except ConfigError:
        raise
    except (DsocError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
