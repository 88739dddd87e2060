"""
Static network converging to a stable allocation
================================================

Four users share six channels. Users first hop at random until each holds a
channel alone, then take turns as master to probe better channels. The
potential falls as users learn and swap.
"""
import numpy as np

from dsoc.analysis import optimal_reward, static_bounds
from dsoc.env import make_rng, random_matrix
from dsoc.sim import Engine, Scenario

K, N, seed = 6, 4, 3
m = random_matrix(N, K, make_rng(seed, 1), min_gap=0.1)
print(np.round(m.means, 2))

sc = Scenario(K, m, delta=0.05, horizon=100_000, seed=seed)
eng = Engine(sc)
print("random hopping lasts", eng.t_rh, "slots; one switching round is", eng.ohs_len, "slots")

# advance in chunks and watch the allocation settle
for stop in (eng.t_rh, 2_000, 10_000, 50_000, 100_000):
    eng.step_until(stop)
    print(f"slot {stop:>7}  allocation {dict(eng.allocation().assignment)}  "
          f"potential {int(eng.pot[stop - 1])}  stable {eng.is_soc()}")

met = eng.metrics()
best, _ = optimal_reward(m)
# UCB keeps exploring: a master may hop to a vacant channel it has rarely
# sampled and return a block later, so stability briefly lapses
first = next(s for s, f in eng.soc_events() if f == 1)
print("first stable slot:", first, " start of the final stable run:", met["soc_attained_slot"])
print("expected reward of the final allocation", round(met["expected_reward_final_allocation"], 3),
      "optimum", round(best, 3))
print("collisions", met["total_collisions"], "switch attempts", met["total_switch_attempts"],
      "successes", met["total_switch_successes"])

# the analytical horizon is very conservative next to the observed convergence
print("analytical horizon:", round(static_bounds(K, N, 0.05, 0.1).to_dict()["T_delta"]))
