"""UCB estimation of per-channel quality from collision-free samples."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .env import GapStats
from .errors import IndexOutOfRange


@dataclass
class ChannelStats:
    """Cumulative reward ``P`` and sample count ``S`` per channel, plus the
    agent's own slot clock ``t``."""

    cumulative_reward: np.ndarray
    sample_count: np.ndarray
    slot_clock: int = 1

    @classmethod
    def empty(cls, num_channels: int, slot_clock: int = 1) -> "ChannelStats":
        return cls(np.zeros(num_channels), np.zeros(num_channels, dtype=np.int64), slot_clock)

    @property
    def num_channels(self) -> int:
        return len(self.sample_count)

    def copy(self) -> "ChannelStats":
        return ChannelStats(self.cumulative_reward.copy(), self.sample_count.copy(), self.slot_clock)


def _check_channel(stats: ChannelStats, channel: int) -> None:
    if not 0 <= channel < stats.num_channels:
        raise IndexOutOfRange(f"channel {channel} outside 0..{stats.num_channels - 1}")


def update_stats(stats: ChannelStats, channel: int, reward: int) -> ChannelStats:
    """Return a copy of ``stats`` with one more sample of ``reward`` on ``channel``."""
    _check_channel(stats, channel)
    out = stats.copy()
    out.cumulative_reward[channel] += reward
    out.sample_count[channel] += 1
    return out


@njit(cache=True)
def ucb_value(p: float, s: int, t: int) -> float:
    if s == 0:
        return np.inf
    return p / s + math.sqrt(2.0 * math.log(max(t, 1)) / s)


@njit(cache=True)
def ucb_row(P, S, t):
    k = P.shape[0]
    q = np.empty(k)
    for c in range(k):
        q[c] = ucb_value(P[c], S[c], t)
    return q


@njit(cache=True)
def ranking_of(P, S, t):
    # mergesort is stable, so equal indices keep ascending channel order
    return np.argsort(-ucb_row(P, S, t), kind="mergesort")


@njit(cache=True)
def fill_preferences(P, S, t, reserved, out):
    """Write the channels ranked above ``reserved`` into ``out``; return how many."""
    order = ranking_of(P, S, t)
    n = 0
    for c in order:
        if c == reserved:
            break
        out[n] = c
        n += 1
    return n


def ucb_index(stats: ChannelStats, channel: int) -> float:
    _check_channel(stats, channel)
    return float(ucb_value(float(stats.cumulative_reward[channel]), int(stats.sample_count[channel]),
                           int(stats.slot_clock)))


def rank_channels(stats: ChannelStats) -> list[int]:
    return ranking_of(stats.cumulative_reward.astype(np.float64), stats.sample_count.astype(np.int64),
                      int(stats.slot_clock)).tolist()


def preference_list(stats: ChannelStats, reserved: int) -> list[int]:
    _check_channel(stats, reserved)
    out = np.empty(stats.num_channels, dtype=np.int64)
    n = fill_preferences(stats.cumulative_reward.astype(np.float64), stats.sample_count.astype(np.int64),
                         int(stats.slot_clock), int(reserved), out)
    return out[:n].tolist()


def s_min(t: float, gaps: GapStats | float) -> float:
    """Samples per channel after which the UCB ranking is correct with high probability."""
    d = gaps.min_gap if isinstance(gaps, GapStats) else float(gaps)
    return 8.0 * math.log(t) / d**2
