"""Slot engine: steps every live agent, resolves collisions, draws rewards and
records what happened."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import protocol as pr
from .analysis import Allocation, is_soc, optimal_reward, rank_table, soc_kernel
from .env import RewardMatrix, make_rng, random_rows, sample_reward, validate_matrix
from .errors import ConfigError, UnknownUser
from .protocol import (ACQUIRING, DEPARTED, IDLE, MASTER, PENDING, RANDOM_HOPPING, SENSE, SMCS, SYNCHRONIZING,
                       TRANSMIT)

FULL_SERIES_LIMIT = 200_000

# violation counter slots
V_MODE, V_ORTHO, V_NARROW, V_GHOST, V_SYNC_TX = range(5)
VIOLATION_NAMES = ("mode_exclusivity", "reservation_orthogonality", "narrowband", "departed_idle", "sync_safety")


@dataclass(frozen=True)
class Event:
    slot: int
    kind: str                                 # "enter" or "leave"
    rewards: Optional[Sequence[float]] = None  # enter: the newcomer's row, generated when None
    user: Optional[int] = None                # leave: target id, a random SMCS user when None

    def to_dict(self) -> dict:
        d = {"slot": self.slot, "kind": self.kind}
        if self.kind == "enter":
            d["rewards"] = None if self.rewards is None else list(self.rewards)
        else:
            d["user"] = self.user
        return d


@dataclass
class Scenario:
    num_channels: int
    matrix: RewardMatrix            # rows of the initial users
    delta: float
    horizon: int
    variant: str = pr.STATIC
    events: list = field(default_factory=list)
    seed: int = 0
    min_gap: float = 0.05           # floor used when generating newcomer rows
    potential_stride: Optional[int] = None

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.slot)
        self.validate()

    def validate(self) -> None:
        if self.variant not in pr.VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.matrix.num_channels != self.num_channels:
            raise ConfigError("matrix width does not match num_channels")
        t_rh = pr.rh_duration(self.delta, self.num_channels)
        if self.horizon < t_rh and self.variant != pr.DYNAMIC:
            raise ConfigError(f"horizon {self.horizon} is shorter than the hopping phase ({t_rh} slots)")
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")
        if self.events and self.variant != pr.DYNAMIC:
            raise ConfigError("entry and exit events need the dynamic variant")
        for e in self.events:
            if e.kind not in ("enter", "leave"):
                raise ConfigError(f"unknown event kind {e.kind!r}")
            if not 0 <= e.slot < self.horizon:
                raise ConfigError(f"event slot {e.slot} outside the horizon")
            if e.kind == "enter" and e.rewards is not None and len(e.rewards) != self.num_channels:
                raise ConfigError("newcomer reward row has the wrong length")
        if self.potential_stride is not None and self.potential_stride < 1:
            raise ConfigError("potential_stride must be positive")

    @property
    def t_rh(self) -> int:
        return pr.rh_duration(self.delta, self.num_channels)

    def full_matrix(self) -> RewardMatrix:
        """Initial rows followed by one row per entry event, in event order."""
        rows = [self.matrix.means]
        rng = make_rng(self.seed, 2)
        for e in self.events:
            if e.kind == "enter":
                row = random_rows(1, self.num_channels, rng, self.min_gap) if e.rewards is None \
                    else np.asarray(e.rewards, dtype=float)[None, :]
                rows.append(row)
        return validate_matrix(np.vstack(rows))

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            events = [Event(int(e["slot"]), e["kind"], e.get("rewards"), e.get("user")) for e in d.get("events", [])]
            return cls(num_channels=int(d["num_channels"]), matrix=validate_matrix(d["matrix"]),
                       delta=float(d["delta"]), horizon=int(d["horizon"]), variant=d.get("variant", pr.STATIC),
                       events=events, seed=int(d.get("seed", 0)), min_gap=float(d.get("min_gap", 0.05)),
                       potential_stride=d.get("potential_stride"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed scenario: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "num_channels": self.num_channels,
            "variant": self.variant,
            "delta": self.delta,
            "horizon": self.horizon,
            "seed": self.seed,
            "matrix": self.matrix.to_list(),
            "min_gap": self.min_gap,
            "events": [e.to_dict() for e in self.events],
            "potential_stride": self.potential_stride,
        }


@njit(cache=True)
def _advance(st, P, S, pref, bcnt, buntil, hist, cfg, mu, rank, prng, rrng, start, stop,
             coll_s, neg_s, pot_s, alloc, soc_now, soc_ev, n_ev, viol, chg, check,
             trace_on, tr_phase, tr_mode, tr_kind, tr_ch, tr_coll, tr_rew, tr_res):
    cap = st.shape[0]
    K = cfg[0]
    L = 2 * cfg[1]
    O = K * L
    kinds = np.zeros(cap, dtype=np.int64)
    chs = np.zeros(cap, dtype=np.int64)
    live = np.zeros(cap, dtype=np.bool_)
    cnt = np.zeros(K, dtype=np.int64)
    probe_ch = np.zeros(K, dtype=np.bool_)
    new_alloc = np.empty(cap, dtype=np.int64)
    seen = np.zeros(K, dtype=np.bool_)
    for s in range(start, stop):
        cnt[:] = 0
        probe_ch[:] = False
        n_master = 0
        for i in range(cap):
            ph0 = st[i, pr.F_PHASE]
            live[i] = ph0 != PENDING and ph0 != DEPARTED
            if live[i]:
                k, c = pr.step_agent(st, P, S, pref, bcnt, buntil, hist, i, s, prng, cfg)
            else:
                k, c = IDLE, -1
            kinds[i] = k
            chs[i] = c
            if k == TRANSMIT:
                cnt[c] += 1
                if st[i, pr.F_MODE] == MASTER and st[i, pr.F_PHASE] == SMCS and c != st[i, pr.F_RES]:
                    probe_ch[c] = True
            if check:
                if k != IDLE and not (0 <= c < K):
                    viol[V_NARROW] += 1
                if ph0 == DEPARTED and k != IDLE:
                    viol[V_GHOST] += 1
                ph1 = st[i, pr.F_PHASE]
                if k == TRANSMIT and (ph1 == SYNCHRONIZING or ph1 == ACQUIRING):
                    viol[V_SYNC_TX] += 1
                if ph1 == SMCS and st[i, pr.F_MODE] == MASTER:
                    n_master += 1
                    if (st[i, pr.F_CLOCK] % O) // L != st[i, pr.F_RES]:
                        viol[V_MODE] += 1
        if check and n_master > 1:
            viol[V_MODE] += 1

        n_coll = 0
        n_neg = 0
        for i in range(cap):
            if not live[i]:
                continue
            k = kinds[i]
            c = chs[i]
            collided = 0
            reward = 0
            busy = 0
            if k == TRANSMIT:
                if cnt[c] >= 2:
                    collided = 1
                    n_coll += 1
                    if probe_ch[c]:
                        n_neg += 1
                else:
                    reward = 1 if rrng.random() < mu[i, c] else 0
            elif k == SENSE:
                busy = 1 if cnt[c] >= 1 else 0
            pr.deliver(st, P, S, i, k, c, collided, reward, busy)
            if trace_on:
                tr_coll[s, i] = collided
                tr_rew[s, i] = reward if (k == TRANSMIT and collided == 0) else -1

        # reservation map and potential
        changed = False
        pot = 0
        seen[:] = False
        dup = False
        for i in range(cap):
            ph = st[i, pr.F_PHASE]
            r = -1
            if (ph == RANDOM_HOPPING and st[i, pr.F_LOCKED] == 1) or (ph == SMCS and st[i, pr.F_FRESH] == 0):
                r = st[i, pr.F_RES]
            new_alloc[i] = r
            if r >= 0 and r != alloc[i]:
                chg[i] += 1
            if r >= 0:
                pot += rank[i, r]
                if seen[r]:
                    dup = True
                seen[r] = True
            if r != alloc[i]:
                changed = True
        if check and dup:
            viol[V_ORTHO] += 1
        if changed:
            alloc[:] = new_alloc
            if dup:
                flag = 0
            else:
                kind, a, b = soc_kernel(rank, alloc, K)
                flag = 1 if kind == 0 else 0
            if flag != soc_now[0]:
                soc_now[0] = flag
                if n_ev[0] < soc_ev.shape[0]:
                    soc_ev[n_ev[0], 0] = s
                    soc_ev[n_ev[0], 1] = flag
                n_ev[0] += 1
        coll_s[s] = n_coll
        neg_s[s] = n_neg
        pot_s[s] = pot
        if trace_on:
            for i in range(cap):
                tr_phase[s, i] = st[i, pr.F_PHASE]
                tr_mode[s, i] = st[i, pr.F_MODE]
                tr_kind[s, i] = kinds[i]
                tr_ch[s, i] = chs[i]
                tr_res[s, i] = alloc[i]


class Engine:
    """Holds one scenario's full mutable state; advance it with ``step_until``."""

    def __init__(self, scenario: Scenario, trace: bool = False, check: bool = False):
        self.scenario = sc = scenario
        self.full = sc.full_matrix()
        self.mu = np.ascontiguousarray(self.full.means)
        self.rank = rank_table(self.mu)
        K = sc.num_channels
        self.t_rh = sc.t_rh
        self.cfg = pr.make_config(K, sc.variant, self.t_rh)
        cap = self.full.num_users
        self.cap = cap
        H = int(self.cfg[pr.C_H])
        L = 2 * int(self.cfg[pr.C_NSB])
        self.mb_len, self.ohs_len = L, K * L
        self.st = np.zeros((cap, pr.NF), dtype=np.int64)
        self.P = np.zeros((cap, K))
        self.S = np.zeros((cap, K), dtype=np.int64)
        self.pref = np.zeros((cap, K), dtype=np.int64)
        self.bcnt = np.zeros((cap, K), dtype=np.int64)
        self.buntil = np.zeros((cap, K), dtype=np.int64)
        self.hist = np.zeros((cap, H), dtype=np.int8)
        for i in range(cap):
            pr.init_agent(self.st, self.bcnt, self.buntil, self.hist, i)
        for i in range(sc.matrix.num_users):
            self.st[i, pr.F_PHASE] = RANDOM_HOPPING
            self.st[i, pr.F_ENTER] = 0
        root = np.random.SeedSequence(int(sc.seed))
        pseq, rseq = root.spawn(2)
        self.prng = np.random.Generator(np.random.PCG64(pseq))
        self.rrng = np.random.Generator(np.random.PCG64(rseq))
        T = sc.horizon
        self.coll = np.zeros(T, dtype=np.int32)
        self.neg = np.zeros(T, dtype=np.int32)
        self.pot = np.zeros(T, dtype=np.int32)
        self.alloc = np.full(cap, -1, dtype=np.int64)
        self.soc_now = np.zeros(1, dtype=np.int64)
        self.soc_ev = np.zeros((4096, 2), dtype=np.int64)
        self.n_ev = np.zeros(1, dtype=np.int64)
        self.viol = np.zeros(len(VIOLATION_NAMES), dtype=np.int64)
        self.chg = np.zeros(cap, dtype=np.int64)
        self.check = check
        self.trace_on = trace
        shape = (T, cap) if trace else (0, 0)
        self.tr = {name: np.zeros(shape, dtype=dt) for name, dt in
                   (("phase", np.int8), ("mode", np.int8), ("kind", np.int8), ("ch", np.int16),
                    ("coll", np.int8), ("rew", np.int8), ("res", np.int16))}
        self.now = 0
        self._pending = list(sc.events)
        self._next_user = sc.matrix.num_users
        self.event_log: list[dict] = []

    # -- events -------------------------------------------------------------

    def _live(self, i: int) -> bool:
        ph = self.st[i, pr.F_PHASE]
        return ph != PENDING and ph != DEPARTED

    def apply_event(self, e: Event) -> None:
        if e.kind == "enter":
            i = self._next_user
            self._next_user += 1
            self.st[i, pr.F_PHASE] = SYNCHRONIZING
            self.st[i, pr.F_ENTER] = self.now
            self.st[i, pr.F_SWEEP_CH] = pr.random_channel(self.prng, self.scenario.num_channels) - 1
            self.st[i, pr.F_STAGE_START] = 0
            self.event_log.append({"slot": self.now, "kind": "enter", "user": i})
            return
        user = e.user
        if user is None:
            pool = [i for i in range(self.cap) if self.st[i, pr.F_PHASE] == SMCS
                    and self.st[i, pr.F_DEP_REQ] == 0 and self.st[i, pr.F_FRESH] == 0]
            if not pool:
                self.event_log.append({"slot": self.now, "kind": "leave", "user": None})
                return
            user = pool[pr.random_channel(self.prng, len(pool))]
        if not (0 <= user < self.cap) or not self._live(user):
            raise UnknownUser(f"user {user} is not live at slot {self.now}")
        self.request_departure(user)
        self.event_log.append({"slot": self.now, "kind": "leave", "user": int(user)})

    def request_departure(self, user: int) -> None:
        if not (0 <= user < self.cap) or not self._live(user):
            raise UnknownUser(f"user {user} is not live")
        # hopping or syncing users keep the flag and leave from their own master block later
        self.st[user, pr.F_DEP_REQ] = 1

    # -- stepping -----------------------------------------------------------

    def _run_kernel(self, stop: int) -> None:
        if stop <= self.now:
            return
        t = self.tr
        _advance(self.st, self.P, self.S, self.pref, self.bcnt, self.buntil, self.hist, self.cfg,
                 self.mu, self.rank, self.prng, self.rrng, self.now, stop,
                 self.coll, self.neg, self.pot, self.alloc, self.soc_now, self.soc_ev, self.n_ev, self.viol,
                 self.chg, self.check, self.trace_on, t["phase"], t["mode"], t["kind"], t["ch"], t["coll"], t["rew"],
                 t["res"])
        self.now = stop

    def step_until(self, slot: int) -> "Engine":
        slot = min(slot, self.scenario.horizon)
        while self.now < slot:
            if self._pending:
                # entries before the end of hopping join once the grid exists
                nxt = self._pending[0]
                at = max(nxt.slot, self.t_rh) if nxt.kind == "enter" else nxt.slot
                if at <= self.now:
                    self._pending.pop(0)
                    self.apply_event(nxt)
                    continue
                self._run_kernel(min(at, slot))
            else:
                self._run_kernel(slot)
        return self

    def run(self) -> "Engine":
        return self.step_until(self.scenario.horizon)

    def snapshot(self) -> "Engine":
        return copy.deepcopy(self)

    def reseed(self, seed: int) -> "Engine":
        """Replace both random streams, e.g. to branch replications off a snapshot."""
        pseq, rseq = np.random.SeedSequence(int(seed)).spawn(2)
        self.prng = np.random.Generator(np.random.PCG64(pseq))
        self.rrng = np.random.Generator(np.random.PCG64(rseq))
        return self

    # -- read-out -----------------------------------------------------------

    def allocation(self) -> Allocation:
        return Allocation({i: int(c) for i, c in enumerate(self.alloc) if c >= 0})

    def field(self, name: str) -> np.ndarray:
        return self.st[:, getattr(pr, name)].copy()

    def is_soc(self) -> bool:
        return is_soc(self.full, self.allocation())[0]

    def soc_events(self) -> list[tuple[int, int]]:
        n = min(int(self.n_ev[0]), len(self.soc_ev))
        return [(int(a), int(b)) for a, b in self.soc_ev[:n]]

    def violations(self) -> dict:
        return dict(zip(VIOLATION_NAMES, self.viol.tolist()))

    def metrics(self) -> "Metrics":
        return Metrics.from_engine(self)

    def trace(self) -> "Trace":
        if not self.trace_on:
            raise ValueError("engine was built without trace recording")
        return Trace(self.tr, self.pot, self.now)


def resolve_slot(actions, m: RewardMatrix, rng) -> list:
    """Collision resolution for one slot of ``(user, SlotAction)`` pairs."""
    counts: dict[int, int] = {}
    for _, a in actions:
        if a.kind == "Transmit":
            counts[a.channel] = counts.get(a.channel, 0) + 1
    out = {}
    for user, a in sorted(actions, key=lambda x: x[0]):
        if a.kind == "Transmit":
            if counts[a.channel] >= 2:
                out[user] = pr.Observation(collided=True)
            else:
                out[user] = pr.Observation(reward=sample_reward(m, user, a.channel, rng))
        elif a.kind == "Sense":
            out[user] = pr.Observation(channel_busy=counts.get(a.channel, 0) >= 1)
        else:
            out[user] = pr.Observation()
    return [out[u] for u, _ in actions]


def apply_event(engine: Engine, e: Event) -> Engine:
    engine.apply_event(e)
    return engine


# ---------------------------------------------------------------------------
# outputs

TRACE_COLUMNS = ("slot", "user_id", "phase", "mode", "action_kind", "channel", "collided", "reward",
                 "reserved_channel", "potential")


class Trace:
    def __init__(self, arrays: dict, potential: np.ndarray, upto: int):
        self.a = {k: v[:upto] for k, v in arrays.items()}
        self.potential = potential[:upto]

    def rows(self) -> int:
        return int(np.count_nonzero(self.a["phase"] != PENDING))

    def columns(self) -> dict:
        """Column arrays of the long-format trace (one row per entered agent per slot)."""
        ph = self.a["phase"]
        T, cap = ph.shape
        s_idx, u_idx = np.nonzero(ph != PENDING)
        phase = ph[s_idx, u_idx]
        kind = self.a["kind"][s_idx, u_idx]
        smcs = phase == SMCS
        mode = np.where(smcs, self.a["mode"][s_idx, u_idx], -1)
        ch = np.where(kind != IDLE, self.a["ch"][s_idx, u_idx], -1)
        coll = np.where(kind == TRANSMIT, self.a["coll"][s_idx, u_idx], -1)
        rew = self.a["rew"][s_idx, u_idx].astype(np.int64)
        rew = np.where(kind == TRANSMIT, rew, -1)
        res = self.a["res"][s_idx, u_idx]
        return {"slot": s_idx, "user_id": u_idx, "phase": phase, "mode": mode, "action_kind": kind,
                "channel": ch, "collided": coll, "reward": rew, "reserved_channel": res,
                "potential": self.potential[s_idx]}

    def to_csv(self, path) -> None:
        c = self.columns()
        cols = []
        for col in TRACE_COLUMNS:
            v = c[col]
            if col == "phase":
                s = np.array(pr.PHASE_NAMES)[v]
            elif col == "mode":
                s = np.array(pr.MODE_NAMES + ("",))[np.where(v < 0, 2, v)]
            elif col == "action_kind":
                s = np.array(pr.ACTION_NAMES)[v]
            elif col in ("slot", "user_id", "potential"):
                s = v.astype(str)
            else:
                s = np.where(v < 0, "", v.astype(str))
            cols.append(s.astype(object))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            if len(cols[0]):
                lines = cols[0]
                for s in cols[1:]:
                    lines = lines + "," + s
                fh.write("\n".join(lines.tolist()))
                fh.write("\n")


def _potential_stride(engine: Engine) -> int:
    sc = engine.scenario
    if sc.potential_stride:
        return sc.potential_stride
    return 1 if sc.horizon <= FULL_SERIES_LIMIT else engine.mb_len


@dataclass
class Metrics:
    data: dict

    @classmethod
    def from_engine(cls, e: Engine) -> "Metrics":
        sc = e.scenario
        st = e.st
        T = e.now
        stride = _potential_stride(e)
        rewards = st[:, pr.F_REWARDS]
        alloc = e.allocation()
        stable = e.is_soc()
        events = e.soc_events()
        attained = None
        if stable:
            attained = events[-1][0] if events else 0
        w0 = T - max(1, T // 10)
        entered = st[:, pr.F_ENTER] >= 0
        end = np.where(st[:, pr.F_DEPART_AT] >= 0, st[:, pr.F_DEPART_AT], T)
        live_slots = int(np.sum((end - st[:, pr.F_ENTER])[entered]))
        exp_reward = float(sum(e.mu[u, c] for u, c in alloc.assignment.items()))
        opt = None
        if len(alloc.assignment) <= sc.num_channels and len(alloc.assignment) > 0:
            live = sorted(alloc.assignment)
            opt = optimal_reward(RewardMatrix(e.mu[live]))[0]
        d = {
            "variant": sc.variant,
            "num_channels": sc.num_channels,
            "num_users_initial": sc.matrix.num_users,
            "num_users_total": e.cap,
            "horizon": sc.horizon,
            "slots_run": T,
            "seed": sc.seed,
            "delta": sc.delta,
            "t_rh": e.t_rh,
            "mb_len": e.mb_len,
            "ohs_len": e.ohs_len,
            "total_reward": int(rewards.sum()),
            "reward_per_user": rewards.tolist(),
            "transmissions_per_user": st[:, pr.F_TX].tolist(),
            "collisions_per_user": st[:, pr.F_COLLISIONS].tolist(),
            "total_collisions": int(st[:, pr.F_COLLISIONS].sum()),
            "switch_attempts_per_user": st[:, pr.F_ATTEMPTS].tolist(),
            "switch_successes_per_user": st[:, pr.F_SUCCESSES].tolist(),
            "total_switch_attempts": int(st[:, pr.F_ATTEMPTS].sum()),
            "total_switch_successes": int(st[:, pr.F_SUCCESSES].sum()),
            "reservation_changes_per_user": e.chg.tolist(),
            "total_reservation_changes": int(e.chg.sum()),
            "final_phase": [pr.PHASE_NAMES[p] for p in st[:, pr.F_PHASE]],
            "final_allocation": {str(u): c for u, c in alloc.assignment.items()},
            "final_potential": int(e.pot[T - 1]) if T else 0,
            "final_is_soc": bool(stable),
            "soc_events": [list(x) for x in events],
            "soc_attained_slot": attained,
            "final_window_start": w0,
            "final_window_collisions": int(e.coll[w0:T].sum()),
            "final_window_negotiation_collisions": int(e.neg[w0:T].sum()),
            "user_slots": live_slots,
            "expected_reward_final_allocation": exp_reward,
            "optimal_reward_live_users": opt,
            "enter_slot": st[:, pr.F_ENTER].tolist(),
            "smcs_slot": st[:, pr.F_SMCS_AT].tolist(),
            "depart_slot": st[:, pr.F_DEPART_AT].tolist(),
            "events": e.event_log,
            "violations": e.violations() if e.check else None,
            "potential_stride": stride,
            "potential_series": e.pot[:T:stride].tolist(),
            "scenario": sc.to_dict(),
        }
        return cls(d)

    def __getitem__(self, k):
        return self.data[k]

    def to_dict(self) -> dict:
        return dict(self.data)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=1)
            fh.write("\n")


def run_scenario(s: Scenario, trace: bool = False, check: bool = False) -> tuple[Optional[Trace], Metrics]:
    e = Engine(s, trace=trace, check=check).run()
    return (e.trace() if trace else None), e.metrics()
