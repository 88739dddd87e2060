"""Ground-truth evaluation of allocations and the analytical convergence bounds."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np
from numba import njit
from scipy.optimize import brentq, linear_sum_assignment

from .env import GapStats, RewardMatrix
from .errors import IndexOutOfRange, InvalidConfiguration, InvalidDelta, NonOrthogonal, TooManyUsers
from .protocol import rh_duration


@dataclass(frozen=True)
class Allocation:
    assignment: Mapping[int, int]

    def __post_init__(self):
        chans = list(self.assignment.values())
        if len(set(chans)) != len(chans):
            raise NonOrthogonal(f"channels assigned more than once: {sorted(self.assignment.items())}")

    @classmethod
    def from_pairs(cls, pairs) -> "Allocation":
        return cls(dict(pairs))


@dataclass(frozen=True)
class SocWitness:
    kind: str                 # "swap" or "move"
    users: tuple
    channels: tuple           # channels after the move
    potential_before: int
    potential_after: int


def rank_table(means: np.ndarray) -> np.ndarray:
    """``rank[n, k]`` = number of channels strictly better than ``k`` for user ``n``."""
    return (means[:, None, :] > means[:, :, None]).sum(axis=2)


def user_rank(m: RewardMatrix, user: int, channel: int) -> int:
    if not (0 <= user < m.num_users and 0 <= channel < m.num_channels):
        raise IndexOutOfRange(f"(user={user}, channel={channel}) outside {m.means.shape}")
    row = m.means[user]
    return int(np.sum(row > row[channel]))


def network_potential(m: RewardMatrix, a: Allocation) -> int:
    return sum(user_rank(m, n, k) for n, k in a.assignment.items())


@njit(cache=True)
def soc_kernel(rank, alloc, K):
    """Scan the one-swap and one-move neighbourhood of ``alloc``.

    ``alloc[n]`` is user n's channel or -1 when the user holds none. Returns
    ``(kind, a, b)``: kind 0 means stable, 1 a swap of users a and b, 2 a move
    of user a to vacant channel b.
    """
    n_users = alloc.shape[0]
    taken = np.zeros(K, dtype=np.bool_)
    for n in range(n_users):
        if alloc[n] >= 0:
            taken[alloc[n]] = True
    for a in range(n_users):
        ca = alloc[a]
        if ca < 0:
            continue
        for b in range(a + 1, n_users):
            cb = alloc[b]
            if cb < 0:
                continue
            if rank[a, cb] + rank[b, ca] < rank[a, ca] + rank[b, cb]:
                return 1, a, b
    for a in range(n_users):
        ca = alloc[a]
        if ca < 0:
            continue
        for c in range(K):
            if not taken[c] and rank[a, c] < rank[a, ca]:
                return 2, a, c
    return 0, -1, -1


def is_soc(m: RewardMatrix, a: Allocation) -> tuple[bool, Optional[SocWitness]]:
    users = sorted(a.assignment)
    for n in users:
        if not (0 <= n < m.num_users and 0 <= a.assignment[n] < m.num_channels):
            raise IndexOutOfRange(f"user {n} or its channel is outside {m.means.shape}")
    rank = rank_table(m.means)
    alloc = np.full(m.num_users, -1, dtype=np.int64)
    for n in users:
        alloc[n] = a.assignment[n]
    kind, x, y = soc_kernel(rank, alloc, m.num_channels)
    if kind == 0:
        return True, None
    before = network_potential(m, a)
    new = dict(a.assignment)
    if kind == 1:
        new[x], new[y] = new[y], new[x]
        w = SocWitness("swap", (int(x), int(y)), (new[x], new[y]), before, 0)
    else:
        new[x] = int(y)
        w = SocWitness("move", (int(x),), (int(y),), before, 0)
    after = network_potential(m, Allocation(new))
    return False, SocWitness(w.kind, w.users, w.channels, before, after)


def optimal_reward(m: RewardMatrix) -> tuple[float, Allocation]:
    if m.num_users > m.num_channels:
        raise TooManyUsers(f"{m.num_users} users cannot be orthogonal on {m.num_channels} channels")
    rows, cols = linear_sum_assignment(m.means, maximize=True)
    return float(m.means[rows, cols].sum()), Allocation(dict(zip(rows.tolist(), cols.tolist())))


# ---------------------------------------------------------------------------
# bounds


def smallest_t_above(M: float) -> int:
    """Least integer t >= 2 with t >= M ln t."""
    def ok(t: int) -> bool:
        return t >= M * math.log(t)

    if ok(2):
        return 2
    # f(t) = t - M ln t is decreasing up to t = M and increasing after, and f(2) < 0
    hi = max(2.0 * M, 4.0)
    while not ok(math.ceil(hi)):
        hi *= 2
    root = brentq(lambda t: t - M * math.log(t), max(M, 2.0), hi, xtol=1e-9)
    t = max(2, math.ceil(root))
    while not ok(t):
        t += 1
    while t > 2 and ok(t - 1):
        t -= 1
    return t


def closed_form_t_m(M: float) -> Optional[float]:
    disc = (M - 1) ** 2 - 4 * M
    if disc < 0:
        return None
    return (M - 1 - math.sqrt(disc)) / 2


def _one_minus_psoc(t_m: int, exponent: int) -> float:
    # 1 - (1 - 2 t^-4)^n without cancellation
    return -math.expm1(exponent * math.log1p(-2.0 * float(t_m) ** -4))


def _min_gap(gaps) -> float:
    d = gaps.min_gap if isinstance(gaps, GapStats) else float(gaps)
    if not d > 0:
        raise ValueError(f"minimum gap must be positive, got {d}")
    return d


def _check_delta(delta: float) -> None:
    if not (0.0 < delta < 1.0):
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")


@dataclass
class BoundReport:
    K: int
    N: int
    delta: float
    min_gap: float
    T_rh: int
    s_min_at_t_m: float
    M: float
    t_m: int
    t_m_closed_form: Optional[float]
    negative_discriminant: bool
    tau: int
    P_soc: float
    one_minus_P_soc: float
    T_delta: float
    dynamic: Optional[dict] = field(default=None)

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> list[tuple[str, object]]:
        out = [("T_rh", self.T_rh), ("M", self.M), ("t_m", self.t_m),
               ("t_m_closed_form", "n/a (negative discriminant)" if self.t_m_closed_form is None else self.t_m_closed_form),
               ("s_min(t_m)", self.s_min_at_t_m), ("tau", self.tau), ("P_soc", self.P_soc),
               ("T_delta", self.T_delta)]
        if self.dynamic:
            out += list(self.dynamic.items())
        return out


def static_bounds(K: int, N: int, delta: float, gaps) -> BoundReport:
    _check_delta(delta)
    d = _min_gap(gaps)
    M = 16.0 * K / d**2
    t_m = smallest_t_above(M)
    closed = closed_form_t_m(M)
    tau = 2 * K * K * (K - 1)
    q = _one_minus_psoc(t_m, N * (K - 1))
    return BoundReport(
        K=K, N=N, delta=delta, min_gap=d, T_rh=rh_duration(delta, K),
        s_min_at_t_m=8.0 * math.log(t_m) / d**2, M=M, t_m=t_m, t_m_closed_form=closed,
        negative_discriminant=closed is None, tau=tau, P_soc=1.0 - q, one_minus_P_soc=q,
        T_delta=t_m + tau * math.log(delta / q) if q > 0 else math.inf,
    )


def sync_bound(K: int) -> int:
    return K * (2 * K + 4) + 1


def exit_bound(K: int) -> int:
    return 2 * K * K * (K - 1)


def dynamic_bounds(K: int, N: int, delta: float, gaps, entries: int = 1, exits: int = 0) -> BoundReport:
    if K <= N + exits:
        raise InvalidConfiguration(f"need K > N + l, got K={K}, N={N}, l={exits}")
    if entries < 1:
        raise InvalidConfiguration("the entry-recovery bound needs at least one entering user")
    rep = static_bounds(K, N, delta, gaps)
    d = rep.min_gap
    M_nu = 16.0 * (K - N) / d**2
    t_nu = smallest_t_above(M_nu)
    q_nu = _one_minus_psoc(t_nu, 1)
    M_d = 16.0 * (K - N - exits) / d**2
    t_d = smallest_t_above(M_d)
    q_d = _one_minus_psoc(t_d, entries * (K - 1))
    tau_d = 2 * K * entries * (K - 1)
    T_d = t_d + tau_d * math.log(delta / q_d)
    T_s, T_l = sync_bound(K), exit_bound(K)
    rep.dynamic = {
        "T_s_d": T_s,
        "M_nu": M_nu,
        "t_m_nu": t_nu,
        "t_m_nu_closed_form": closed_form_t_m(M_nu),
        "P_soc_nu": 1.0 - q_nu,
        "T_e_d": t_nu + math.log(delta / q_nu),
        "M_d": M_d,
        "t_m_d": t_d,
        "P_soc_d": 1.0 - q_d,
        "tau_d": tau_d,
        "T_d": T_d,
        "T_l_d": T_l,
        "T_total_d": T_s + T_d + T_l,
        "entries": entries,
        "exits": exits,
    }
    return rep
