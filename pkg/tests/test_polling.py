import numpy as np
import pytest
from pydantic import ValidationError

from intersection.errors import ContractViolation
from intersection.model import LaneId
from intersection.polling import (
    GatedRule,
    KLimitedRule,
    PolicyKind,
    PollingPolicy,
    PollingSystem,
    RegularityScenario,
    check_regularity,
    merge_arrivals,
    random_scenario,
    run_polling,
)

# (name, lane, arrival) of the worked two-queue example, server parked at queue 2
FIGURE_ARRIVALS = [
    ("a", LaneId.TWO, 1.0),
    ("c", LaneId.ONE, 1.5),
    ("b", LaneId.TWO, 1.8),
    ("d", LaneId.ONE, 2.5),
    ("g", LaneId.TWO, 3.5),
    ("e", LaneId.ONE, 4.5),
    ("h", LaneId.TWO, 5.5),
    ("f", LaneId.ONE, 6.5),
    ("i", LaneId.TWO, 7.5),
    ("j", LaneId.ONE, 9.5),
]


def figure_system():
    system = PollingSystem(1.0, 1.0, PollingPolicy(), initial_queue=LaneId.TWO)
    names = {}
    for name, lane, t in FIGURE_ARRIVALS:
        names[system.add_to_queue(lane, t).id] = name
    return system, names


def test_worked_example_schedule():
    system, names = figure_system()
    schedule = system.simulate(include_history=True)
    assert schedule.T1 == pytest.approx([4, 5, 6, 7, 13])
    assert schedule.T2 == pytest.approx([1, 2, 9, 10, 11])
    order = "".join(names[cid] for cid in schedule.order_ids())
    assert order == "abcdefghij"


def test_simulate_leaves_system_untouched():
    system, _ = figure_system()
    before = system.describe()
    system.simulate()
    system.simulate(include_history=True)
    assert system.describe() == before


def test_simulate_without_history_starts_at_current_service():
    system, names = figure_system()
    order = [names[cid] for cid in system.simulate().order_ids()]
    # g is in service at t = 9.5
    assert order == ["g", "h", "i", "j"]


def test_unparked_server_serves_first_arrival_immediately():
    system = PollingSystem(0.2, 0.1, PollingPolicy())
    customer = system.add_to_queue(LaneId.TWO, 3.0)
    assert system.simulate().times[customer.id] == pytest.approx(3.0)


def test_parked_server_pays_switchover():
    system = PollingSystem(0.2, 0.1, PollingPolicy(), initial_queue=LaneId.ONE)
    customer = system.add_to_queue(LaneId.TWO, 3.0)
    assert system.simulate().times[customer.id] == pytest.approx(3.1)


def test_switch_after_busy_period():
    system = PollingSystem(0.2, 0.1, PollingPolicy())
    first = system.add_to_queue(LaneId.ONE, 0.0)
    second = system.add_to_queue(LaneId.TWO, 0.05)
    times = system.simulate().times
    assert times[first.id] == pytest.approx(0.0)
    assert times[second.id] == pytest.approx(0.3)


def test_arrival_in_the_past_is_rejected():
    system = PollingSystem(1.0, 0.5, PollingPolicy())
    system.add_to_queue(LaneId.ONE, 2.0)
    with pytest.raises(ContractViolation):
        system.add_to_queue(LaneId.ONE, 1.0)
    with pytest.raises(ContractViolation):
        system.advance(1.0)


def test_gated_policy_defers_arrivals_behind_the_gate():
    system = PollingSystem(1.0, 0.5, GatedRule())
    a = system.add_to_queue(LaneId.ONE, 0.0)
    b = system.add_to_queue(LaneId.TWO, 0.1)
    c = system.add_to_queue(LaneId.ONE, 0.2)
    order = system.simulate().order_ids()
    assert order == [a.id, b.id, c.id]


def test_k_limited_caps_each_visit():
    system = PollingSystem(1.0, 0.5, KLimitedRule(1))
    a = system.add_to_queue(LaneId.ONE, 0.0)
    b = system.add_to_queue(LaneId.ONE, 0.1)
    c = system.add_to_queue(LaneId.TWO, 0.2)
    assert system.simulate().order_ids() == [a.id, c.id, b.id]


def test_exhaustive_empties_the_queue_first():
    system = PollingSystem(1.0, 0.5, PollingPolicy(kind=PolicyKind.EXHAUSTIVE))
    a = system.add_to_queue(LaneId.ONE, 0.0)
    b = system.add_to_queue(LaneId.TWO, 0.1)
    c = system.add_to_queue(LaneId.ONE, 0.2)
    assert system.simulate().order_ids() == [a.id, c.id, b.id]


def test_k_limited_requires_k():
    with pytest.raises(ValidationError):
        PollingPolicy(kind=PolicyKind.K_LIMITED)
    assert PollingPolicy(kind=PolicyKind.K_LIMITED, k=4).label == "k_limited(4)"
    with pytest.raises(ContractViolation):
        KLimitedRule(0)


def test_service_times_are_spaced_by_s():
    system = PollingSystem(0.2, 0.1, PollingPolicy())
    for t in (0.0, 0.01, 0.02, 0.03):
        system.add_to_queue(LaneId.ONE, t)
    times = system.simulate().T1
    assert np.diff(times) == pytest.approx([0.2, 0.2, 0.2])


def test_merge_arrivals_breaks_ties_by_lane():
    events = merge_arrivals({LaneId.TWO: [1.0, 2.0], LaneId.ONE: [1.0]})
    assert events == [(1.0, LaneId.ONE), (1.0, LaneId.TWO), (2.0, LaneId.TWO)]


def test_run_polling_waits():
    arrivals = {LaneId.ONE: [0.0, 0.1], LaneId.TWO: [0.05]}
    result = run_polling(arrivals, PollingPolicy(), 1.0, 0.5)
    # lane 1 at 0 and 1, lane 2 after the switchover at 2.5
    assert sorted(result.waits()) == pytest.approx([0.0, 0.9, 2.45])
    assert result.mean_wait == pytest.approx((0.9 + 2.45) / 3)
    assert result.max_queue_length == 2


def test_run_polling_rejects_unsorted_arrivals():
    with pytest.raises(ContractViolation):
        run_polling({LaneId.ONE: [1.0, 0.5]}, PollingPolicy(), 1.0, 0.5)


def test_regularity_on_a_fixed_scenario():
    scenario = RegularityScenario(
        arrivals=[(0.0, LaneId.ONE), (0.1, LaneId.ONE), (0.2, LaneId.TWO)],
        inject_time=0.3, inject_queue=LaneId.TWO,
    )
    witness = check_regularity(PollingPolicy(), scenario)
    assert witness.passed
    assert witness.new_order.count(witness.injected_id) == 1
    assert "regular" in witness.describe()


def test_random_scenarios_are_reproducible():
    assert random_scenario(4) == random_scenario(4)


@pytest.mark.parametrize("policy", [
    PollingPolicy(kind=PolicyKind.EXHAUSTIVE),
    PollingPolicy(kind=PolicyKind.GATED),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=1),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=4),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=8),
])
def test_policies_are_regular(policy):
    for seed in range(200):
        witness = check_regularity(policy, seed=seed)
        assert witness.passed, witness.describe()


@pytest.mark.slow
@pytest.mark.parametrize("policy", [
    PollingPolicy(kind=PolicyKind.EXHAUSTIVE),
    PollingPolicy(kind=PolicyKind.GATED),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=1),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=4),
    PollingPolicy(kind=PolicyKind.K_LIMITED, k=8),
])
def test_policies_are_regular_on_many_scenarios(policy):
    for seed in range(1000):
        assert check_regularity(policy, seed=seed).passed


def test_module_level_operations_and_drain():
    from intersection import polling

    system = PollingSystem(0.2, 0.1, PollingPolicy())
    polling.add_to_queue(system, LaneId.ONE, 0.0)
    polling.add_to_queue(system, LaneId.TWO, 0.05)
    assert polling.simulate(system).T2 == pytest.approx([0.3])
    polling.advance(system, 0.1)
    assert not system.is_empty
    system.drain()
    assert system.is_empty
    assert system.waiting == 0
