"""
Analytical bounds
=================

Hopping length, the sample-count horizon t_m, the switching horizon and the
dynamic-network bounds. t_m is the least integer with t >= M ln t; the
printed closed form picks the small root of the quadratic and is shown for
comparison only.
"""
import math

from dsoc.analysis import closed_form_t_m, dynamic_bounds, smallest_t_above, static_bounds

for k, v in static_bounds(10, 10, 0.05, 0.05).rows():
    print(f"{k:<14} {v}")

M = 16_000
t = smallest_t_above(M)
print(f"\nM={M}: t_m={t}, check t >= M ln t: {t >= M * math.log(t)}, t-1 fails: {t - 1 < M * math.log(t - 1)}")
print("closed form gives", closed_form_t_m(M))

print()
for k, v in dynamic_bounds(10, 5, 0.05, 0.1, entries=1, exits=1).rows():
    print(f"{k:<14} {v}")
