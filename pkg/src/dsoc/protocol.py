"""Per-agent protocol state machine.

Every agent is one row of an int64 table (column indices ``F_*`` below) plus a
few per-channel side arrays. The jitted ``*_step`` kernels read the
observation left in the row by the engine, update the row in place and return
the slot action as ``(kind, channel)``. The Python functions at the bottom
wrap one agent at a time for inspection and testing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .errors import InvalidDelta, PhaseViolation
from .learning import ChannelStats, fill_preferences, ucb_value

# phases
PENDING, RANDOM_HOPPING, SYNCHRONIZING, ACQUIRING, SMCS, DEPARTED = 0, 1, 2, 3, 4, 5
PHASE_NAMES = ("Pending", "RandomHopping", "Synchronizing", "AcquiringReserved", "SMCS", "Departed")

# modes
NON_MASTER, MASTER = 0, 1
MODE_NAMES = ("NonMaster", "Master")

# action kinds; AGAIN asks the dispatcher to re-run after a phase change
IDLE, TRANSMIT, SENSE, AGAIN = 0, 1, 2, -1
ACTION_NAMES = ("Idle", "Transmit", "Sense")

# variants
STATIC, DYNAMIC, STATIC_HEURISTIC = "static", "dynamic", "static_heuristic"
VARIANTS = (STATIC, DYNAMIC, STATIC_HEURISTIC)

# agent row layout
F_PHASE = 0
F_MODE = 1
F_RES = 2          # reserved channel, -1 if none
F_LOCKED = 3
F_CLOCK = 4        # position on the block grid, valid in SMCS / acquiring
F_T = 5            # own elapsed slots since entering
F_LAST_KIND = 6    # what the agent did last slot
F_LAST_CH = 7
F_OBS_COLL = 8
F_OBS_REW = 9      # -1 when no reward was observed
F_OBS_BUSY = 10
F_PREF_LEN = 11
F_PREF_POS = 12
F_PROBE = 13
F_PSTAGE = 14      # 0 none, 1 CT probe sent, 2 CT collided, 3 CS repeat sent
F_MOVE_TO = 15     # accepted swap, applied next slot
F_DEP_REQ = 16
F_ATTEMPTS = 17
F_SUCCESSES = 18
F_COLLISIONS = 19
F_TX = 20
F_REWARDS = 21
F_ENTER = 22       # global slot of entry
F_SMCS_AT = 23     # global slot of (last) SMCS entry
F_DEPART_AT = 24
F_SYNC_STAGE = 25  # 0 sweeping, 1 piggybacking
F_SWEEP_CH = 26
F_PB_CH = 27
F_PB_START = 28
F_IDLE_RUN = 29
F_RUN_START = 30
F_H_VALID = 31
F_H_PHASE = 32
F_STAGE_START = 33
F_UNUSED = 34
F_CLAIM_FAILS = 35  # claims lost to a simultaneous claimant
F_ACQ_START = 36
F_FRESH = 37       # 2 claim made, 1 verification sent
F_IDLE_SWEEP = 38  # consecutive idle senses while sweeping
F_SWITCH_IN = 39   # reservation changes by any path
F_CAND_X = 40      # unconfirmed SSB start on the piggyback channel
F_HYP_CH = 41      # channel that went quiet while its occupant was master
F_HYP_Z = 42       # first silent slot on that channel
NF = 43

# config vector layout
C_K, C_NSB, C_TRH, C_DYN, C_HEUR, C_H = 0, 1, 2, 3, 4, 5
NC = 6

BACKOFF_CAP = 30


def rh_duration(delta: float, num_channels: int) -> int:
    """Length of the random-hopping phase for confidence ``delta``."""
    if not (0.0 < delta < 1.0) or not math.isfinite(delta):
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    if num_channels < 2:
        raise ValueError("need at least 2 channels")
    k = num_channels
    return int(math.ceil(math.log(delta / k) / math.log(1.0 - 1.0 / (4 * k))))


def subblocks_per_mb(num_channels: int, variant: str) -> int:
    # the heuristic variant halves the master block
    if variant == STATIC_HEURISTIC:
        return max(2, (num_channels + 1) // 2)
    return num_channels


def history_size(num_channels: int, nsb: int) -> int:
    L = 2 * nsb
    return 2 * num_channels * L + 4 * L + 8


def make_config(num_channels: int, variant: str, t_rh: int) -> np.ndarray:
    nsb = subblocks_per_mb(num_channels, variant)
    cfg = np.zeros(NC, dtype=np.int64)
    cfg[C_K] = num_channels
    cfg[C_NSB] = nsb
    cfg[C_TRH] = t_rh
    cfg[C_DYN] = variant == DYNAMIC
    cfg[C_HEUR] = variant == STATIC_HEURISTIC
    cfg[C_H] = history_size(num_channels, nsb)
    return cfg


@dataclass(frozen=True)
class BlockClock:
    """Grid position of an SMCS slot; indices are 1-based as in the protocol text."""

    num_channels: int
    smcs_slot: int
    subblocks: Optional[int] = None

    @property
    def _nsb(self) -> int:
        return self.subblocks or self.num_channels

    @property
    def mb_len(self) -> int:
        return 2 * self._nsb

    @property
    def ohs_len(self) -> int:
        return self.num_channels * self.mb_len

    @property
    def ohs_index(self) -> int:
        return self.smcs_slot // self.ohs_len

    @property
    def mb_index(self) -> int:
        return 1 + (self.smcs_slot % self.ohs_len) // self.mb_len

    @property
    def sb_index(self) -> int:
        return 1 + (self.smcs_slot % self.mb_len) // 2

    @property
    def slot_kind(self) -> str:
        return "CT" if self.smcs_slot % 2 == 0 else "CS"


# ---------------------------------------------------------------------------
# jitted kernels


@njit(cache=True)
def random_channel(rng, k):
    c = int(rng.random() * k)
    return c if c < k else k - 1


@njit(cache=True)
def reset_backoff(bcnt_row, buntil_row):
    bcnt_row[:] = 0
    buntil_row[:] = -1


@njit(cache=True)
def init_agent(st, bcnt, buntil, hist, i):
    st[i, :] = 0
    st[i, F_PHASE] = PENDING
    st[i, F_RES] = -1
    st[i, F_PROBE] = -1
    st[i, F_MOVE_TO] = -1
    st[i, F_OBS_REW] = -1
    st[i, F_PB_CH] = -1
    st[i, F_H_PHASE] = -1
    st[i, F_CAND_X] = -1
    st[i, F_HYP_CH] = -1
    st[i, F_ENTER] = -1
    st[i, F_SMCS_AT] = -1
    st[i, F_DEPART_AT] = -1
    reset_backoff(bcnt[i], buntil[i])
    hist[i, :] = 0


@njit(cache=True)
def decide_accept_kernel(P, S, t, current, offered):
    if current == offered:
        return False
    return ucb_value(P[offered], S[offered], t) > ucb_value(P[current], S[current], t)


@njit(cache=True)
def rh_kernel(st, i, now, rng, cfg):
    if st[i, F_LAST_KIND] == TRANSMIT and st[i, F_OBS_COLL] == 0 and st[i, F_LOCKED] == 0:
        st[i, F_LOCKED] = 1
        st[i, F_RES] = st[i, F_LAST_CH]
        st[i, F_SWITCH_IN] += 1
    if st[i, F_T] >= cfg[C_TRH]:
        st[i, F_LAST_KIND] = IDLE
        if st[i, F_LOCKED] == 1:
            st[i, F_PHASE] = SMCS
            st[i, F_CLOCK] = 0
            st[i, F_SMCS_AT] = now
            return AGAIN, -1
        st[i, F_PHASE] = DEPARTED
        st[i, F_DEPART_AT] = now
        return IDLE, -1
    if st[i, F_LOCKED] == 1:
        return TRANSMIT, st[i, F_RES]
    return TRANSMIT, random_channel(rng, cfg[C_K])


@njit(cache=True)
def _switch_master(st, i, bcnt, buntil):
    st[i, F_RES] = st[i, F_PROBE]
    st[i, F_MODE] = NON_MASTER
    st[i, F_PSTAGE] = 0
    st[i, F_PROBE] = -1
    st[i, F_SUCCESSES] += 1
    st[i, F_SWITCH_IN] += 1
    reset_backoff(bcnt[i], buntil[i])


@njit(cache=True)
def smcs_kernel(st, P, S, pref, bcnt, buntil, i, now, rng, cfg):
    K = cfg[C_K]
    L = 2 * cfg[C_NSB]
    O = K * L
    clk = st[i, F_CLOCK]
    pos = clk % O
    mb = pos // L
    within = pos % L
    sb = within // 2
    ct = within % 2 == 0
    ohs = clk // O
    lk = st[i, F_LAST_KIND]
    coll = st[i, F_OBS_COLL] == 1

    # newly claimed channel: the first transmission on it doubles as a check
    if st[i, F_FRESH] == 1:
        if lk == TRANSMIT:
            st[i, F_FRESH] = 0
            if coll:
                st[i, F_RES] = -1
                st[i, F_PHASE] = ACQUIRING
                st[i, F_MODE] = NON_MASTER
                st[i, F_CLAIM_FAILS] += 1
                st[i, F_ACQ_START] = st[i, F_T]
                st[i, F_LAST_KIND] = IDLE
                return AGAIN, -1
    elif st[i, F_FRESH] == 2:
        st[i, F_FRESH] = 1

    if st[i, F_MOVE_TO] >= 0:
        st[i, F_RES] = st[i, F_MOVE_TO]
        st[i, F_MOVE_TO] = -1
        st[i, F_SWITCH_IN] += 1
        reset_backoff(bcnt[i], buntil[i])

    ps = st[i, F_PSTAGE]
    if ps == 1:
        if lk == TRANSMIT and not coll:
            _switch_master(st, i, bcnt, buntil)  # vacant channel
        else:
            st[i, F_PSTAGE] = 2
    elif ps == 3:
        if coll:
            _switch_master(st, i, bcnt, buntil)  # swap accepted
        else:
            st[i, F_PSTAGE] = 0
            if cfg[C_HEUR] == 1:
                c = st[i, F_PROBE]
                n = min(bcnt[i, c] + 1, BACKOFF_CAP)
                bcnt[i, c] = n
                buntil[i, c] = (clk - 1) // O + (1 << n)
            st[i, F_PROBE] = -1

    res = st[i, F_RES]
    if within == 0:
        if st[i, F_DEP_REQ] == 1 and res == mb:
            st[i, F_PHASE] = DEPARTED
            st[i, F_MODE] = NON_MASTER
            st[i, F_DEPART_AT] = now
            return IDLE, -1
        if res == mb:
            st[i, F_MODE] = MASTER
            st[i, F_PREF_LEN] = fill_preferences(P[i], S[i], st[i, F_T], res, pref[i])
            st[i, F_PREF_POS] = 0
            st[i, F_PSTAGE] = 0
        else:
            st[i, F_MODE] = NON_MASTER

    if st[i, F_MODE] == MASTER:
        if sb == 0:
            return TRANSMIT, res
        if ct:
            j = st[i, F_PREF_POS]
            n = st[i, F_PREF_LEN]
            while j < n:
                c = pref[i, j]
                j += 1
                if cfg[C_HEUR] == 1 and buntil[i, c] >= ohs:
                    continue
                st[i, F_PREF_POS] = j
                st[i, F_PROBE] = c
                st[i, F_PSTAGE] = 1
                st[i, F_ATTEMPTS] += 1
                return TRANSMIT, c
            st[i, F_PREF_POS] = j
            return TRANSMIT, res
        if st[i, F_PSTAGE] == 2:
            st[i, F_PSTAGE] = 3
            return TRANSMIT, st[i, F_PROBE]
        return TRANSMIT, res

    if sb == 0:
        if cfg[C_DYN] == 1:
            return IDLE, -1
        return TRANSMIT, res
    if ct:
        return TRANSMIT, res
    if lk == TRANSMIT and coll:
        # the master of this block is asking for our channel
        if decide_accept_kernel(P[i], S[i], st[i, F_T], res, mb):
            st[i, F_MOVE_TO] = mb
            return TRANSMIT, res
        return IDLE, -1
    return TRANSMIT, res


@njit(cache=True)
def _restart_sweep(st, i, u):
    # the grid phase is shared by all channels, so a validated phase is kept
    st[i, F_SYNC_STAGE] = 0
    st[i, F_STAGE_START] = u
    st[i, F_IDLE_SWEEP] = 0
    st[i, F_CAND_X] = -1


@njit(cache=True)
def _anchor(st, i, u, start, channel, cfg):
    # ``start`` is the first slot of the master block whose index is ``channel``
    K = cfg[C_K]
    L = 2 * cfg[C_NSB]
    O = K * L
    st[i, F_CLOCK] = ((channel * L + (u - start)) % O + O) % O
    st[i, F_PHASE] = ACQUIRING
    st[i, F_ACQ_START] = u
    st[i, F_LAST_KIND] = IDLE
    return AGAIN, -1


@njit(cache=True)
def _ssb_seen_before(hist, x, since, L, H):
    # one block earlier: silent pair at x - L, then busy on every CT slot up to x
    y = x - L
    if y < since or hist[y % H] != 0 or hist[(y + 1) % H] != 0:
        return False
    for v in range(y + 2, x, 2):
        if hist[v % H] != 1:
            return False
    return True


@njit(cache=True)
def _sweep_next(st, i, K):
    c = (st[i, F_SWEEP_CH] + 1) % K
    st[i, F_SWEEP_CH] = c
    return SENSE, c


@njit(cache=True)
def sync_kernel(st, hist, i, now, rng, cfg):
    K = cfg[C_K]
    L = 2 * cfg[C_NSB]
    O = K * L
    H = cfg[C_H]
    u = st[i, F_T]
    lk = st[i, F_LAST_KIND]
    busy = lk == SENSE and st[i, F_OBS_BUSY] == 1

    if st[i, F_SYNC_STAGE] == 0:
        if busy:
            st[i, F_SYNC_STAGE] = 1
            st[i, F_PB_CH] = st[i, F_LAST_CH]
            st[i, F_PB_START] = u - 1
            st[i, F_STAGE_START] = u
            st[i, F_IDLE_RUN] = 0
            st[i, F_CAND_X] = -1
            hist[i, (u - 1) % H] = 1
            return SENSE, st[i, F_PB_CH]
        if lk == SENSE:
            st[i, F_IDLE_SWEEP] += 1
        if st[i, F_IDLE_SWEEP] >= 3 * K:
            # nobody is transmitting: open a fresh grid as the master of our channel
            c = st[i, F_SWEEP_CH]
            st[i, F_RES] = c
            st[i, F_PHASE] = SMCS
            st[i, F_MODE] = NON_MASTER
            st[i, F_CLOCK] = c * L
            st[i, F_SMCS_AT] = now
            st[i, F_SWITCH_IN] += 1
            st[i, F_LAST_KIND] = IDLE
            return AGAIN, -1
        return _sweep_next(st, i, K)

    # piggybacking: log the last observation of the piggyback channel
    s = u - 1
    b = 1 if busy else 0
    hist[i, s % H] = b
    pb = st[i, F_PB_CH]
    fresh_phase = False

    # a candidate SSB at x is genuine iff every later CT slot of that block is busy
    cx = st[i, F_CAND_X]
    if st[i, F_H_VALID] == 0 and cx >= 0:
        d = s - cx
        if d % 2 == 0 and 2 <= d <= L - 2:
            if b == 0:
                st[i, F_CAND_X] = -1
            elif d == L - 2:
                st[i, F_H_VALID] = 1
                st[i, F_H_PHASE] = cx % L
                st[i, F_CAND_X] = -1
                fresh_phase = True

    if b == 1:
        if st[i, F_IDLE_RUN] >= 2 and st[i, F_H_VALID] == 0 and st[i, F_CAND_X] < 0:
            st[i, F_CAND_X] = s - 2
            if L == 4 or _ssb_seen_before(hist[i], s - 2, st[i, F_PB_START], L, H):
                st[i, F_H_VALID] = 1
                st[i, F_H_PHASE] = (s - 2) % L
                st[i, F_CAND_X] = -1
                fresh_phase = True
        st[i, F_IDLE_RUN] = 0
    else:
        if st[i, F_IDLE_RUN] == 0:
            st[i, F_RUN_START] = s
        st[i, F_IDLE_RUN] += 1

    ph = st[i, F_H_PHASE]
    if fresh_phase:
        # a channel we watched earlier went quiet while its occupant was master
        hc = st[i, F_HYP_CH]
        if hc >= 0:
            z = st[i, F_HYP_Z]
            for h in (z - 2, z, z + 1):
                if (h - ph) % L == 0:
                    return _anchor(st, i, u, h, hc, cfg)
        # busy SSBs come only from the channel's own master
        lo = max(st[i, F_PB_START], u - H + 1)
        y = s - 1 - ((s - 1 - ph) % L)
        while y >= lo:
            if hist[i, y % H] == 1 and hist[i, (y + 1) % H] == 1:
                return _anchor(st, i, u, y, pb, cfg)
            y -= L

    if st[i, F_H_VALID] == 1:
        if b == 1:
            y = s - 1
            if y >= st[i, F_PB_START] and (y - ph) % L == 0 and hist[i, y % H] == 1:
                return _anchor(st, i, u, y, pb, cfg)
        elif st[i, F_IDLE_RUN] >= L:
            # occupant went quiet: it left during its own master block
            z = st[i, F_RUN_START]
            if (z - ph) % 2 != 0:
                z += 1
            return _anchor(st, i, u, z - ((z - ph) % L), pb, cfg)
    elif b == 0 and st[i, F_IDLE_RUN] > L:
        # longer than any live occupant stays silent: it left as master, the
        # block having started 2 slots before the silence (switch), at it, or 1 after
        st[i, F_HYP_CH] = pb
        st[i, F_HYP_Z] = st[i, F_RUN_START]
        _restart_sweep(st, i, u)
        return _sweep_next(st, i, K)

    if u - st[i, F_STAGE_START] > 2 * O + 4 * L:
        _restart_sweep(st, i, u)
        return _sweep_next(st, i, K)
    return SENSE, pb


@njit(cache=True)
def acquire_kernel(st, bcnt, buntil, i, now, rng, cfg):
    K = cfg[C_K]
    L = 2 * cfg[C_NSB]
    O = K * L
    idle_seen = st[i, F_LAST_KIND] == SENSE and st[i, F_OBS_BUSY] == 0
    # after losing a claim, a coin flip separates agents that sense in lockstep
    if idle_seen and (st[i, F_CLAIM_FAILS] == 0 or rng.random() < 0.5):
        st[i, F_RES] = st[i, F_LAST_CH]
        st[i, F_PHASE] = SMCS
        st[i, F_MODE] = NON_MASTER
        st[i, F_FRESH] = 2
        st[i, F_PSTAGE] = 0
        st[i, F_MOVE_TO] = -1
        st[i, F_SMCS_AT] = now
        st[i, F_SWITCH_IN] += 1
        st[i, F_LAST_KIND] = IDLE
        reset_backoff(bcnt[i], buntil[i])
        return AGAIN, -1
    if st[i, F_T] - st[i, F_ACQ_START] >= O + 2 * K + 1:
        st[i, F_PHASE] = DEPARTED
        st[i, F_DEPART_AT] = now
        return IDLE, -1
    pos = st[i, F_CLOCK] % O
    mb = pos // L
    within = pos % L
    if within % 2 == 0:
        # the master's channel only at the block's first slot, where a live
        # master always transmits; every other channel once per block
        return SENSE, (mb - within // 2) % K
    return IDLE, -1


@njit(cache=True)
def step_agent(st, P, S, pref, bcnt, buntil, hist, i, now, rng, cfg):
    for _ in range(4):
        ph = st[i, F_PHASE]
        if ph == RANDOM_HOPPING:
            kind, ch = rh_kernel(st, i, now, rng, cfg)
        elif ph == SMCS:
            kind, ch = smcs_kernel(st, P, S, pref, bcnt, buntil, i, now, rng, cfg)
        elif ph == SYNCHRONIZING:
            kind, ch = sync_kernel(st, hist, i, now, rng, cfg)
        elif ph == ACQUIRING:
            kind, ch = acquire_kernel(st, bcnt, buntil, i, now, rng, cfg)
        else:
            return IDLE, -1
        if kind != AGAIN:
            return kind, ch
    return IDLE, -1


@njit(cache=True)
def deliver(st, P, S, i, kind, ch, collided, reward, busy):
    """End-of-slot bookkeeping for one live agent."""
    st[i, F_LAST_KIND] = kind
    st[i, F_LAST_CH] = ch
    st[i, F_OBS_COLL] = collided
    st[i, F_OBS_REW] = reward
    st[i, F_OBS_BUSY] = busy
    if kind == TRANSMIT:
        st[i, F_TX] += 1
        if collided == 1:
            st[i, F_COLLISIONS] += 1
        else:
            P[i, ch] += reward
            S[i, ch] += 1
            st[i, F_REWARDS] += reward
    st[i, F_T] += 1
    ph = st[i, F_PHASE]
    if ph == SMCS or ph == ACQUIRING:
        st[i, F_CLOCK] += 1


# ---------------------------------------------------------------------------
# single-agent Python API


@dataclass(frozen=True)
class SlotAction:
    kind: str
    channel: Optional[int] = None

    @staticmethod
    def transmit(channel: int) -> "SlotAction":
        return SlotAction("Transmit", int(channel))

    @staticmethod
    def sense(channel: int) -> "SlotAction":
        return SlotAction("Sense", int(channel))

    @staticmethod
    def idle() -> "SlotAction":
        return SlotAction("Idle")

    @staticmethod
    def from_code(kind: int, ch: int) -> "SlotAction":
        if kind == IDLE:
            return SlotAction("Idle")
        return SlotAction(ACTION_NAMES[kind], int(ch))


@dataclass(frozen=True)
class Observation:
    collided: bool = False
    reward: Optional[int] = None
    channel_busy: bool = False


class AgentState:
    """One agent's full protocol state, detached from any engine."""

    def __init__(self, num_channels: int, variant: str = STATIC, t_rh: int = 0, user_id: int = 0):
        self.user_id = user_id
        self.variant = variant
        self.cfg = make_config(num_channels, variant, t_rh)
        K = num_channels
        self.st = np.zeros((1, NF), dtype=np.int64)
        self.P = np.zeros((1, K))
        self.S = np.zeros((1, K), dtype=np.int64)
        self.pref = np.zeros((1, K), dtype=np.int64)
        self.bcnt = np.zeros((1, K), dtype=np.int64)
        self.buntil = np.zeros((1, K), dtype=np.int64)
        self.hist = np.zeros((1, int(self.cfg[C_H])), dtype=np.int8)
        init_agent(self.st, self.bcnt, self.buntil, self.hist, 0)
        self.now = 0

    # constructors for the common starting points
    @classmethod
    def hopping(cls, num_channels: int, t_rh: int, **kw) -> "AgentState":
        a = cls(num_channels, t_rh=t_rh, **kw)
        a.st[0, F_PHASE] = RANDOM_HOPPING
        a.st[0, F_ENTER] = 0
        return a

    @classmethod
    def in_smcs(cls, num_channels: int, reserved: int, clock: int = 0, variant: str = STATIC, **kw) -> "AgentState":
        a = cls(num_channels, variant=variant, **kw)
        a.st[0, F_PHASE] = SMCS
        a.st[0, F_RES] = reserved
        a.st[0, F_LOCKED] = 1
        a.st[0, F_CLOCK] = clock
        a.st[0, F_T] = max(clock, 1)
        return a

    @classmethod
    def synchronizing(cls, num_channels: int, start_channel: int = 0, **kw) -> "AgentState":
        a = cls(num_channels, variant=DYNAMIC, **kw)
        a.st[0, F_PHASE] = SYNCHRONIZING
        a.st[0, F_SWEEP_CH] = (start_channel - 1) % num_channels
        a.st[0, F_ENTER] = 0
        return a

    def copy(self) -> "AgentState":
        out = object.__new__(AgentState)
        out.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})
        return out

    def _get(self, f: int) -> int:
        return int(self.st[0, f])

    @property
    def num_channels(self) -> int:
        return int(self.cfg[C_K])

    @property
    def phase(self) -> str:
        return PHASE_NAMES[self._get(F_PHASE)]

    @property
    def mode(self) -> str:
        return MODE_NAMES[self._get(F_MODE)]

    @property
    def reserved_channel(self) -> Optional[int]:
        r = self._get(F_RES)
        return None if r < 0 else r

    @property
    def locked(self) -> bool:
        return bool(self._get(F_LOCKED))

    @property
    def clock(self) -> BlockClock:
        return BlockClock(self.num_channels, self._get(F_CLOCK), int(self.cfg[C_NSB]))

    @property
    def pending_probe(self) -> Optional[int]:
        return self._get(F_PROBE) if self._get(F_PSTAGE) in (1, 2, 3) else None

    @property
    def departure_requested(self) -> bool:
        return bool(self._get(F_DEP_REQ))

    @property
    def piggyback_channel(self) -> Optional[int]:
        c = self._get(F_PB_CH)
        return None if c < 0 else c

    @property
    def backoff(self) -> list[tuple[int, int]]:
        return list(zip(self.bcnt[0].tolist(), self.buntil[0].tolist()))

    @property
    def stats(self) -> ChannelStats:
        return ChannelStats(self.P[0].copy(), self.S[0].copy(), max(self._get(F_T), 1))

    def set_stats(self, stats: ChannelStats) -> None:
        self.P[0] = stats.cumulative_reward
        self.S[0] = stats.sample_count
        self.st[0, F_T] = stats.slot_clock

    def observe(self, obs: Optional[Observation]) -> None:
        """Close the previous slot with ``obs`` (what the engine does after resolving)."""
        if obs is None:
            return
        kind, ch = self._last
        rew = -1 if obs.reward is None else int(obs.reward)
        deliver(self.st, self.P, self.S, 0, kind, ch, int(obs.collided), max(rew, 0) if kind == TRANSMIT else 0,
                int(obs.channel_busy))
        self.st[0, F_OBS_REW] = rew
        self.now += 1

    def _step(self, rng) -> SlotAction:
        kind, ch = step_agent(self.st, self.P, self.S, self.pref, self.bcnt, self.buntil, self.hist,
                              0, self.now, rng, self.cfg)
        self._last = (kind, ch)
        return SlotAction.from_code(kind, ch)

    _last = (IDLE, -1)


_NULL_RNG = np.random.default_rng(0)


def _require(state: AgentState, *phases: int) -> None:
    if state._get(F_PHASE) not in phases:
        raise PhaseViolation(f"agent is in phase {state.phase}")


def _transition(state, stats, last_obs, rng, phases, mode=None):
    new = state.copy()
    new.observe(last_obs)
    if stats is not None:
        new.set_stats(stats)
    _require(new, *phases)
    if mode is not None:
        clk = new.clock
        # the mode is fixed at each block boundary and held for the whole block
        if clk.smcs_slot % clk.mb_len == 0:
            is_master = new._get(F_RES) == clk.mb_index - 1
        else:
            is_master = new._get(F_MODE) == MASTER
        if is_master != (mode == MASTER):
            raise PhaseViolation(f"agent is not in {MODE_NAMES[mode]} mode")
    action = new._step(rng if rng is not None else _NULL_RNG)
    return new, action


def rh_step(state: AgentState, last_obs: Optional[Observation], rng) -> tuple[AgentState, SlotAction]:
    return _transition(state, None, last_obs, rng, (RANDOM_HOPPING,))


def master_step(state: AgentState, stats: Optional[ChannelStats] = None,
                last_obs: Optional[Observation] = None) -> tuple[AgentState, SlotAction]:
    return _transition(state, stats, last_obs, None, (SMCS,), mode=MASTER)


def non_master_step(state: AgentState, stats: Optional[ChannelStats] = None,
                    last_obs: Optional[Observation] = None) -> tuple[AgentState, SlotAction]:
    return _transition(state, stats, last_obs, None, (SMCS,), mode=NON_MASTER)


def sync_step(state: AgentState, last_obs: Optional[Observation], rng) -> tuple[AgentState, SlotAction]:
    return _transition(state, None, last_obs, rng, (SYNCHRONIZING,))


def acquire_reserved_step(state: AgentState, last_obs: Optional[Observation]) -> tuple[AgentState, SlotAction]:
    return _transition(state, None, last_obs, None, (ACQUIRING,))


def decide_accept(stats: ChannelStats, current: int, offered: int) -> bool:
    if current == offered:
        raise ValueError("offered channel equals the current one")
    return bool(decide_accept_kernel(stats.cumulative_reward.astype(np.float64), stats.sample_count.astype(np.int64),
                                     int(stats.slot_clock), int(current), int(offered)))


def request_departure(state: AgentState) -> AgentState:
    _require(state, SMCS)
    new = state.copy()
    new.st[0, F_DEP_REQ] = 1
    return new
