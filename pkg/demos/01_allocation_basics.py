"""
Ranks, potential and stable allocations
=======================================

A small reward table, the potential of a few allocations, the stability
check with its improving move, and the reward-optimal assignment.
"""

from dsoc.analysis import Allocation, is_soc, network_potential, optimal_reward, rank_table
from dsoc.env import gap_stats, validate_matrix

# three users, four channels; row n holds user n's mean reward per channel
m = validate_matrix([[0.9, 0.6, 0.4, 0.2],
                     [0.8, 0.7, 0.3, 0.1],
                     [0.5, 0.4, 0.9, 0.3]])
print("rank table (channels strictly better than each one):")
print(rank_table(m.means))
print("smallest per-user gap:", gap_stats(m).min_gap)

# an allocation maps users to distinct channels
for asg in ({0: 1, 1: 0, 2: 2}, {0: 0, 1: 1, 2: 2}, {0: 3, 1: 1, 2: 2}):
    a = Allocation(asg)
    stable, witness = is_soc(m, a)
    print(f"{asg}  potential={network_potential(m, a)}  stable={stable}")
    if witness is not None:
        print(f"    improving {witness.kind}: users {witness.users} -> channels {witness.channels}, "
              f"potential {witness.potential_before} -> {witness.potential_after}")

# the reward-optimal assignment need not be the only stable one
best, a = optimal_reward(m)
print("optimal total reward", round(best, 3), "with", dict(a.assignment))
