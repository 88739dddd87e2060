"""Ground-truth channel environment.

Each user ``n`` sees channel ``k`` with a Bernoulli throughput of mean
``means[n, k]``. The matrix is hidden from the agents; only the engine and
the analysis code read it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateRow, EntryOutOfRange, IndexOutOfRange

# The generator type used everywhere a random stream is needed.
RngStream = np.random.Generator


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 stream derived from ``seed`` and an optional integer key path.

    Streams with different keys are statistically independent, which is what
    lets parallel replications and the engine's two internal streams
    (protocol choices, reward draws) never interfere.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, key)])))


@dataclass(frozen=True)
class RewardMatrix:
    means: np.ndarray

    @property
    def num_users(self) -> int:
        return self.means.shape[0]

    @property
    def num_channels(self) -> int:
        return self.means.shape[1]

    def row(self, user: int) -> np.ndarray:
        return self.means[user]

    def to_list(self) -> list[list[float]]:
        return self.means.tolist()


@dataclass(frozen=True)
class GapStats:
    per_user_gap: np.ndarray
    min_gap: float


def validate_matrix(raw) -> RewardMatrix:
    means = np.array(raw, dtype=np.float64)
    if means.ndim == 1:
        means = means[None, :]
    if means.ndim != 2 or means.shape[0] < 1 or means.shape[1] < 2:
        raise ValueError(f"expected an N x K table with N >= 1 and K >= 2, got shape {means.shape}")
    if not np.all(np.isfinite(means)):
        raise ValueError("reward table contains non-finite entries")
    bad = np.argwhere((means < 0.0) | (means > 1.0))
    if len(bad):
        n, k = bad[0]
        raise EntryOutOfRange(f"mean[{n}][{k}] = {means[n, k]} is outside [0, 1]")
    for n, row in enumerate(means):
        if len(np.unique(row)) != len(row):
            raise DegenerateRow(f"row {n} has repeated means; its gap would be zero")
    means.setflags(write=False)
    return RewardMatrix(means)


def gap_stats(m: RewardMatrix) -> GapStats:
    # adjacent differences of a sorted row are exactly the pairwise minimum
    gaps = np.diff(np.sort(m.means, axis=1), axis=1).min(axis=1)
    return GapStats(per_user_gap=gaps, min_gap=float(gaps.min()))


def sample_reward(m: RewardMatrix, user: int, channel: int, rng: RngStream) -> int:
    if not (0 <= user < m.num_users and 0 <= channel < m.num_channels):
        raise IndexOutOfRange(f"(user={user}, channel={channel}) outside {m.means.shape}")
    return int(rng.random() < m.means[user, channel])


def random_rows(num_users: int, num_channels: int, rng: RngStream, min_gap: float = 0.05) -> np.ndarray:
    """Uniform means conditioned on every within-row gap being >= ``min_gap``.

    Sampling is exact rather than by rejection: draw K uniforms on the shrunken
    interval [0, 1 - (K-1) g], sort them, spread the i-th order statistic by
    i*g, then shuffle. This keeps large K with a gap floor tractable.
    """
    slack = 1.0 - (num_channels - 1) * min_gap
    if slack < 0:
        raise ValueError(f"min_gap={min_gap} is infeasible for {num_channels} channels")
    rows = np.empty((num_users, num_channels))
    spread = np.arange(num_channels) * min_gap
    for n in range(num_users):
        row = np.sort(rng.random(num_channels) * slack) + spread
        rows[n] = row[rng.permutation(num_channels)]
    return rows


def random_matrix(num_users: int, num_channels: int, rng: RngStream, min_gap: float = 0.05) -> RewardMatrix:
    return validate_matrix(random_rows(num_users, num_channels, rng, min_gap))


def load_matrix(path: str | Path) -> RewardMatrix:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data["means"]
    return validate_matrix(data)


def save_matrix(m: RewardMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(m.to_list(), fh)
        fh.write("\n")
