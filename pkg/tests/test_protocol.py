import numpy as np
import pytest

from dsoc import protocol as pr
from dsoc.errors import InvalidDelta, PhaseViolation
from dsoc.learning import ChannelStats

K, L = 6, 12


def stats_preferring(best, K=K, reserved_value=10.0):
    """Learned stats whose ranking puts ``best`` first and the rest tied below."""
    P = np.full(K, reserved_value)
    P[best] = 90.0
    return ChannelStats(P, np.full(K, 100, dtype=np.int64), 1000)


def smcs_step(a, stats=None, obs=None):
    # whichever of the two entry points matches the agent's mode this slot
    try:
        return pr.non_master_step(a, stats, obs)
    except PhaseViolation:
        return pr.master_step(a, stats, obs)


def test_rh_duration_values():
    assert pr.rh_duration(0.05, 10) == 210
    assert pr.rh_duration(0.1, 2) == 23
    assert pr.rh_duration(0.1, 10) == 182
    with pytest.raises(InvalidDelta):
        pr.rh_duration(1.0, 4)


def test_block_clock_positions():
    c = pr.BlockClock(4, 8 * 2 + 5)
    assert (c.mb_len, c.ohs_len) == (8, 32)
    assert (c.ohs_index, c.mb_index, c.sb_index, c.slot_kind) == (0, 3, 3, "CS")


def _first_hop_on(channel, t_rh=50):
    for seed in range(200):
        a = pr.AgentState.hopping(K, t_rh)
        a, act = pr.rh_step(a, None, np.random.default_rng(seed))
        if act.channel == channel:
            return a
    raise AssertionError("no seed hopped onto the channel")


def test_clean_hop_locks_channel():
    a = _first_hop_on(3)
    a, act = pr.rh_step(a, pr.Observation(reward=0), np.random.default_rng(0))
    assert a.locked and a.reserved_channel == 3
    assert act == pr.SlotAction("Transmit", 3)


def test_locked_agent_keeps_transmitting():
    a = _first_hop_on(5)
    a, _ = pr.rh_step(a, pr.Observation(reward=1), np.random.default_rng(0))
    r = np.random.default_rng(1)
    for _ in range(30):
        a, act = pr.rh_step(a, pr.Observation(collided=True), r)
        assert act == pr.SlotAction("Transmit", 5)


def test_unlocked_agent_departs_after_hopping():
    a = pr.AgentState.hopping(K, 10)
    r = np.random.default_rng(0)
    obs = None
    for _ in range(11):
        a, act = pr.rh_step(a, obs, r)
        obs = pr.Observation(collided=True)
    assert a.phase == "Departed" and not a.locked and act.kind == "Idle"


def _master_to_probe(probe):
    a = pr.AgentState.in_smcs(K, reserved=0, clock=0)
    a, act = pr.master_step(a, stats_preferring(probe))
    assert a.mode == "Master" and act == pr.SlotAction("Transmit", 0)
    a, act = pr.master_step(a, None, pr.Observation(reward=1))
    assert act == pr.SlotAction("Transmit", 0)
    a, act = pr.master_step(a, None, pr.Observation(reward=1))
    assert act == pr.SlotAction("Transmit", probe) and a.pending_probe == probe
    return a


def test_master_takes_vacant_channel():
    a = _master_to_probe(4)
    a, act = pr.master_step(a, None, pr.Observation(reward=1))
    assert a.reserved_channel == 4 and a.mode == "NonMaster"
    assert act == pr.SlotAction("Transmit", 4)


def test_master_swap_accepted():
    a = _master_to_probe(2)
    a, act = pr.master_step(a, None, pr.Observation(collided=True))
    assert act == pr.SlotAction("Transmit", 2)
    a, _ = pr.master_step(a, None, pr.Observation(collided=True))
    assert a.reserved_channel == 2


def test_master_swap_rejected_keeps_reserved_and_learns():
    a = _master_to_probe(2)
    a, _ = pr.master_step(a, None, pr.Observation(collided=True))
    before = a.stats.sample_count[2]
    a, act = pr.master_step(a, None, pr.Observation(reward=1))
    assert a.reserved_channel == 0 and a.mode == "Master"
    assert a.stats.sample_count[2] == before + 1
    assert act == pr.SlotAction("Transmit", 0)


def _non_master_after_ct_collision(stats):
    a = pr.AgentState.in_smcs(K, reserved=2, clock=4 * L + 2, variant=pr.DYNAMIC)
    a, act = pr.non_master_step(a, stats)
    assert act == pr.SlotAction("Transmit", 2) and a.clock.slot_kind == "CT"
    return pr.non_master_step(a, None, pr.Observation(collided=True))


def test_non_master_accepts_preferred_channel():
    a, act = _non_master_after_ct_collision(stats_preferring(4))
    assert act == pr.SlotAction("Transmit", 2)
    a, act = pr.non_master_step(a, None, pr.Observation(collided=True))
    assert a.reserved_channel == 4 and act == pr.SlotAction("Transmit", 4)


def test_non_master_rejects_worse_channel():
    a, act = _non_master_after_ct_collision(stats_preferring(2))
    assert act.kind == "Idle"
    a, act = pr.non_master_step(a, None, pr.Observation())
    assert a.reserved_channel == 2


def test_non_master_clean_ct_then_transmit():
    a = pr.AgentState.in_smcs(K, reserved=2, clock=4 * L + 2, variant=pr.DYNAMIC)
    a, _ = pr.non_master_step(a, stats_preferring(4))
    a, act = pr.non_master_step(a, None, pr.Observation(reward=1))
    assert act == pr.SlotAction("Transmit", 2)


def test_ssb_silence_depends_on_variant():
    for variant, kind in ((pr.DYNAMIC, "Idle"), (pr.STATIC, "Transmit")):
        a = pr.AgentState.in_smcs(K, reserved=2, clock=4 * L, variant=variant)
        _, act = pr.non_master_step(a, stats_preferring(4))
        assert act.kind == kind


def test_mode_entry_points_are_checked():
    with pytest.raises(PhaseViolation):
        pr.master_step(pr.AgentState.in_smcs(K, reserved=2, clock=4 * L), stats_preferring(4))
    with pytest.raises(PhaseViolation):
        pr.non_master_step(pr.AgentState.in_smcs(K, reserved=4, clock=4 * L), stats_preferring(4))
    with pytest.raises(PhaseViolation):
        pr.rh_step(pr.AgentState.in_smcs(K, reserved=4), None, np.random.default_rng(0))


def test_decide_accept_rules():
    s = ChannelStats(np.array([5.0, 0.0]), np.array([10, 0]), 50)
    assert pr.decide_accept(s, 0, 1)
    s = ChannelStats(np.array([2.1, 1.0]), np.array([1, 1]), 1)
    assert not pr.decide_accept(s, 0, 1)
    s = ChannelStats(np.array([1.0, 1.0]), np.array([2, 2]), 9)
    assert not pr.decide_accept(s, 0, 1)
    with pytest.raises(ValueError):
        pr.decide_accept(s, 1, 1)


def test_sync_enters_piggyback_on_first_busy_sense():
    a = pr.AgentState.synchronizing(K, start_channel=2)
    a, act = pr.sync_step(a, None, np.random.default_rng(0))
    assert act == pr.SlotAction("Sense", 2)
    a, act = pr.sync_step(a, pr.Observation(channel_busy=True), np.random.default_rng(0))
    assert a.piggyback_channel == 2 and act == pr.SlotAction("Sense", 2)


def test_sync_never_transmits_on_idle_network():
    a = pr.AgentState.synchronizing(K, start_channel=0)
    r = np.random.default_rng(0)
    obs = None
    for _ in range(3 * K - 1):
        a, act = pr.sync_step(a, obs, r)
        assert act.kind == "Sense"
        obs = pr.Observation(channel_busy=False)


def _acquire_from(clock, vacant, K=4):
    a = pr.AgentState(K, variant=pr.DYNAMIC)
    a.st[0, pr.F_PHASE] = pr.ACQUIRING
    a.st[0, pr.F_CLOCK] = clock
    obs, n = None, 0
    while a.phase == "AcquiringReserved":
        a, act = pr.acquire_reserved_step(a, obs)
        assert act.kind != "Transmit" or a.phase == "SMCS"
        obs = pr.Observation(channel_busy=act.channel != vacant) if act.kind == "Sense" else pr.Observation()
        n += 1
    return a, n - 1


def test_acquire_claims_the_vacant_channel():
    # one sensing pass covers every channel in 2K slots; the channel sensed in
    # the block's first slot can be due one slot later, hence 2K + 2
    worst = 0
    for clock in range(32):
        a, slots = _acquire_from(clock, vacant=3)
        assert a.reserved_channel == 3
        worst = max(worst, slots)
    assert worst <= 2 * 4 + 2


def test_acquire_departs_when_everything_is_busy():
    a, _ = _acquire_from(5, vacant=-1)
    assert a.phase == "Departed" and a.reserved_channel is None


def test_departure_waits_for_own_block():
    a = pr.request_departure(pr.AgentState.in_smcs(4, reserved=2, clock=3, variant=pr.DYNAMIC))
    obs, stats, n = None, ChannelStats(np.full(4, 50.0), np.full(4, 100), 1000), 0
    while a.phase == "SMCS":
        a, act = smcs_step(a, stats, obs)
        stats = None
        obs = pr.Observation(reward=1) if act.kind == "Transmit" else pr.Observation()
        n += 1
    assert a.clock.smcs_slot == 2 * 8 and act.kind == "Idle"


def test_departure_at_own_block_start_is_immediate():
    a = pr.request_departure(pr.AgentState.in_smcs(4, reserved=2, clock=16, variant=pr.DYNAMIC))
    a, act = smcs_step(a, ChannelStats(np.full(4, 50.0), np.full(4, 100), 1000))
    assert a.phase == "Departed" and act.kind == "Idle"


def test_departure_needs_smcs():
    with pytest.raises(PhaseViolation):
        pr.request_departure(pr.AgentState.hopping(4, 10))


def test_heuristic_backoff_doubles():
    # every probe on channel 1 is rejected; after the i-th rejection the
    # channel sits out 2**i OHS blocks, so probe blocks are 0, 3, 8, 17, ...
    a = pr.AgentState.in_smcs(4, reserved=0, clock=0, variant=pr.STATIC_HEURISTIC)
    a, _ = pr.master_step(a, stats_preferring(1, K=4))
    obs = pr.Observation(reward=1)
    probes = []
    for _ in range(16 * 40):
        a, act = smcs_step(a, None, obs)
        clk = a.clock
        probing = act == pr.SlotAction("Transmit", 1) and clk.slot_kind == "CT"
        if probing:
            probes.append(clk.ohs_index)
        obs = pr.Observation(collided=True) if probing else pr.Observation(reward=1)
    assert probes[:5] == [0, 3, 8, 17, 34]
