"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is
printed in the terminal summary."""
import hashlib
import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from dsoc import protocol as pr
from dsoc.analysis import Allocation, is_soc, optimal_reward, sync_bound
from dsoc.cli import main
from dsoc.env import make_rng, random_matrix, validate_matrix
from dsoc.sim import Engine, Event, Scenario

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []
GOLDEN = Path(__file__).parent / "golden" / "static_small_seed42.sha256"


def report(n, ok, detail, started, limit):
    elapsed = time.perf_counter() - started
    passed = ok and elapsed < limit
    RESULTS.append(f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}  [{elapsed:.1f}s / {limit}s]")
    assert ok, detail
    assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit}s"


def test_c01_hopping_orthogonalizes():
    t0 = time.perf_counter()
    K = N = 10
    t_rh = pr.rh_duration(0.1, K)
    hits = 0
    for r in range(2000):
        m = random_matrix(N, K, make_rng(100, r), 0.05)
        e = Engine(Scenario(K, m, 0.1, t_rh + 1, seed=r)).step_until(t_rh)
        res = e.st[:, pr.F_RES]
        hits += bool(np.all(e.st[:, pr.F_LOCKED] == 1)) and len(set(res.tolist())) == N
    frac = hits / 2000
    report(1, t_rh == 182 and frac >= 0.90, f"T_rh={t_rh}, locked fraction {frac:.4f} (need >= 0.90)", t0, 10)


def test_c02_static_convergence():
    t0 = time.perf_counter()
    ok = 0
    for r in range(100):
        m = random_matrix(4, 6, make_rng(1000 + r), 0.1)
        ok += Engine(Scenario(6, m, 0.05, 200_000, seed=r)).run().metrics()["final_is_soc"]
    report(2, ok / 100 >= 0.90, f"terminal SOC fraction {ok / 100:.2f} (need >= 0.90)", t0, 120)


def _rank(means, n, k):
    return sum(1 for x in means[n] if x > means[n][k])


def _pot(means, asg):
    return sum(_rank(means, n, k) for n, k in asg.items())


def _exhaustive_stable(means, asg, K):
    base = _pot(means, asg)
    for x, y in itertools.combinations(asg, 2):
        if _pot(means, {**asg, x: asg[y], y: asg[x]}) < base:
            return False
    free = set(range(K)) - set(asg.values())
    return not any(_pot(means, {**asg, x: c}) < base for x in asg for c in free)


def test_c03_soc_oracle():
    t0 = time.perf_counter()
    g = make_rng(303)
    checked = disagree = 0
    for _ in range(50):
        K = int(g.integers(2, 5))
        N = int(g.integers(1, min(3, K) + 1))
        m = validate_matrix(np.array([g.permutation(K) + 1 for _ in range(N)]) / (K + 1))
        means = m.means.tolist()
        for size in range(1, N + 1):
            for users in itertools.combinations(range(N), size):
                for chans in itertools.permutations(range(K), size):
                    asg = dict(zip(users, chans))
                    checked += 1
                    disagree += is_soc(m, Allocation(asg))[0] != _exhaustive_stable(means, asg, K)
    report(3, disagree == 0, f"{checked} allocations, {disagree} disagreements", t0, 5)


def test_c04_hungarian():
    t0 = time.perf_counter()
    g = make_rng(404)
    worst = 0.0
    for _ in range(100):
        K = int(g.integers(2, 8))
        N = int(g.integers(1, min(5, K) + 1))
        m = random_matrix(N, K, g, 0.0)
        value, _ = optimal_reward(m)
        brute = max(sum(m.means[n, p[n]] for n in range(N)) for p in itertools.permutations(range(K), N))
        worst = max(worst, abs(value - brute))
    report(4, worst <= 1e-12, f"max |hungarian - brute| = {worst:.2e}", t0, 5)


def test_c05_sync_bound():
    t0 = time.perf_counter()
    lines, ok = [], True
    for K in (4, 6, 10):
        bound = sync_bound(K)
        worst, fails = 0, 0
        for r in range(50):
            g = make_rng(5000 + K, r)
            n0 = max(1, K // 2)
            m = random_matrix(n0, K, g, 0.05)
            ohs = 2 * K * K
            # inject into a settled network: 100 to 120 OHS blocks after hopping ends
            slot = int(g.integers(pr.rh_duration(0.05, K) + 100 * ohs, pr.rh_duration(0.05, K) + 120 * ohs))
            e = Engine(Scenario(K, m, 0.05, slot + 3 * bound, variant="dynamic", seed=r,
                                events=[Event(slot, "enter")])).run()
            at = int(e.st[n0, pr.F_SMCS_AT])
            d = at - int(e.st[n0, pr.F_ENTER]) if at >= 0 else math.inf
            worst = max(worst, d)
            fails += d > bound
        ok &= fails == 0
        lines.append(f"K={K}: worst {worst} <= {bound}" if not fails else f"K={K}: {fails} over {bound}")
    report(5, ok, "; ".join(lines), t0, 60)


def _soc_from(e, d):
    """Slots from ``d`` until the allocation is stable, or None."""
    state = 0
    for s, f in e.soc_events():
        if s <= d:
            state = f
        elif state == 1:
            break
        elif f == 1:
            return s - d
    return 0 if state == 1 else None


def test_c06_recovery_after_exit():
    t0 = time.perf_counter()
    K, N = 6, 5
    limit = 2 * K * K * (K - 1)
    bases, b = [], 0
    while len(bases) < 10:
        m = random_matrix(N, K, make_rng(7000 + b, 1), 0.1)
        e = Engine(Scenario(K, m, 0.05, 100_000, variant="dynamic", seed=b)).step_until(60_000)
        b += 1
        if e.is_soc():
            bases.append(e)
    within, worst = 0, 0
    for j in range(200):
        e = bases[j % 10].snapshot().reseed(10_000 + j)
        e.apply_event(Event(e.now, "leave"))
        leaver = int(np.argmax(e.st[:, pr.F_DEP_REQ]))
        e.step_until(e.now + e.ohs_len + limit + 1)
        lat = _soc_from(e, int(e.st[leaver, pr.F_DEPART_AT]))
        if lat is not None and lat <= limit:
            within += 1
            worst = max(worst, lat)
    frac = within / 200
    report(6, frac >= 0.95, f"{frac:.3f} recovered within {limit} slots (worst {worst})", t0, 60)


def test_c07_safety_suite():
    t0 = time.perf_counter()
    totals = dict.fromkeys(("mode_exclusivity", "reservation_orthogonality", "narrowband", "departed_idle",
                            "sync_safety"), 0)
    for r in range(10_000):
        g = make_rng(77, r)
        K = int(g.integers(2, 7))
        N = int(g.integers(1, K + 2))
        variant = pr.VARIANTS[int(g.integers(3))]
        H = int(g.integers(pr.rh_duration(0.05, K) + 1, 10_001))
        events = []
        if variant == pr.DYNAMIC:
            events = sorted((Event(int(g.integers(1, H)), "enter" if g.random() < 0.5 else "leave")
                             for _ in range(int(g.integers(0, 5)))), key=lambda e: e.slot)
        m = random_matrix(N, K, g, 0.05)
        e = Engine(Scenario(K, m, 0.05, H, variant=variant, events=events, seed=r), check=True).run()
        for k, v in e.violations().items():
            totals[k] += v
    bad = sum(totals.values())
    report(7, bad == 0, f"10000 scenarios, violations {totals}", t0, 120)


def test_c08_collision_economy():
    t0 = time.perf_counter()
    per_user, rates = [], []
    for r in range(20):
        m = random_matrix(10, 10, make_rng(2000 + r), 0.05)
        met = Engine(Scenario(10, m, 0.05, 100_000, seed=r)).run().metrics()
        per_user.append(np.mean(met["collisions_per_user"]))
        rates.append(met["final_window_collisions"] / (10 * (100_000 - met["final_window_start"])))
    mc, rate = float(np.mean(per_user)), float(np.mean(rates))
    report(8, mc < 1000 and rate < 0.01,
           f"collisions/user {mc:.0f} (need < 1000), final-window rate {rate:.4f} (need < 0.01)", t0, 60)


def test_c09_heuristic_ordering():
    t0 = time.perf_counter()
    more_attempts = fewer_collisions = 0
    for r in range(50):
        m = random_matrix(10, 10, make_rng(9000 + r), 0.05)
        base = Engine(Scenario(10, m, 0.05, 100_000, seed=r)).run().metrics()
        heur = Engine(Scenario(10, m, 0.05, 100_000, seed=r, variant=pr.STATIC_HEURISTIC)).run().metrics()
        more_attempts += heur["total_switch_attempts"] >= base["total_switch_attempts"]
        fewer_collisions += base["total_collisions"] < heur["total_collisions"]
    report(9, more_attempts >= 45 and fewer_collisions >= 40,
           f"heuristic attempts >= base in {more_attempts}/50 (need 45); "
           f"base fewer collisions in {fewer_collisions}/50 (need 40)", t0, 120)


def test_c10_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    digests = []
    for d in ("a", "b"):
        assert main(["run", "--preset", "static-small", "--reps", "1", "--seed", "42", "--trace",
                     "--out", str(tmp_path / d)]) == 0
        digests.append(hashlib.sha256((tmp_path / d / "rep_0000" / "trace.csv").read_bytes()).hexdigest())
    capsys.readouterr()
    golden = GOLDEN.read_text().split()[0]
    report(10, digests[0] == digests[1] == golden, f"sha256 {digests[0][:16]}... golden {golden[:16]}...", t0, 10)


def test_c11_bounds_table(capsys):
    t0 = time.perf_counter()
    code = main(["bounds", "--K", "10", "--N", "5", "--delta", "0.05", "--min-gap", "0.1",
                 "--entries", "1", "--exits", "1", "--dynamic"])
    rep = json.loads(capsys.readouterr().out.splitlines()[-1])
    t_m, M = rep["t_m"], rep["M"]
    fixed_point = t_m >= M * math.log(t_m) and not (t_m - 1 >= M * math.log(t_m - 1))
    ok = (code == 0 and rep["T_rh"] == 210 and rep["dynamic"]["T_s_d"] == 241 and rep["dynamic"]["T_l_d"] == 1800
          and rep["tau"] == 1800 and abs(M - 16000) < 1e-6 and fixed_point)
    report(11, ok, f"T_rh={rep['T_rh']} T_s_d={rep['dynamic']['T_s_d']} T_l_d={rep['dynamic']['T_l_d']} "
                   f"tau={rep['tau']} t_m={t_m} (M={M:.0f})", t0, 1)
