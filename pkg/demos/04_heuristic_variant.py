"""
Shortened blocks with probe backoff
===================================

The heuristic variant halves the master block and skips a channel for
2, 4, 8, ... rounds after each rejected probe. Same matrices and seeds as the
base protocol, compared on probes, collisions and reward.
"""
import numpy as np

from dsoc import protocol as pr
from dsoc.env import make_rng, random_matrix
from dsoc.sim import Engine, Scenario

rows = []
for r in range(5):
    m = random_matrix(10, 10, make_rng(9000 + r), 0.05)
    out = []
    for variant in (pr.STATIC, pr.STATIC_HEURISTIC):
        met = Engine(Scenario(10, m, 0.05, 100_000, seed=r, variant=variant)).run().metrics()
        out.append((met["total_switch_attempts"], met["total_collisions"], met["total_reward"]))
    rows.append(out)
    print(f"rep {r}: base attempts/collisions/reward {out[0]}   heuristic {out[1]}")

a = np.array(rows, dtype=float)
print("mean ratio heuristic/base  attempts %.2f  collisions %.2f  reward %.3f"
      % tuple((a[:, 1] / a[:, 0]).mean(axis=0)))
