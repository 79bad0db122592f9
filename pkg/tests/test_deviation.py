import json

import numpy as np
import pytest

from robust_lcb.deviation import (
    DeviationSchedule, RoundDeviation, audit_budget, check_schedule, deviation_stack, effective_matrix,
    flipped_weights, load_schedule, make_front_loaded_adversary, save_schedule,
)
from robust_lcb.presets import preset
from robust_lcb.sem import (
    WeightMatrices, compose_intervened_matrix, expected_reward, find_optimal_action, forward_substitute,
    power_set,
)

from conftest import chain_instance

BUDGETS = [0, 2, 15, 200, 2000]


@pytest.fixture(scope="module")
def hier():
    return preset("hierarchical")


def brute_audit(schedule, n):
    # independent summation: per node, sum over rounds of the worst case over actions;
    # each column depends only on its own bit, so observe-all and intervene-all cover every case
    totals = np.zeros(n)
    for dev in schedule.rounds.values():
        worst = np.zeros(n)
        for a in (0, (1 << n) - 1):
            D = dev.for_action(a)
            worst = np.maximum(worst, np.linalg.norm(D, axis=0))
        totals += worst
    return totals.max() if schedule.rounds else 0.0


def test_audit_examples():
    assert audit_budget(DeviationSchedule(10)) == 0.0
    d = np.zeros((3, 3))
    d[:, 2] = [0.0, 3.0, 0.0]
    sched = DeviationSchedule(10, {4: RoundDeviation(d, d)})
    assert audit_budget(sched) == 3.0


def test_audit_uses_worst_side():
    obs = np.zeros((2, 2))
    ints = np.zeros((2, 2))
    obs[0, 1] = 0.5
    ints[0, 1] = -2.0
    sched = DeviationSchedule(5, {1: RoundDeviation(obs, ints), 2: RoundDeviation(obs, obs)})
    assert audit_budget(sched) == pytest.approx(2.5)
    assert brute_audit(sched, 2) == pytest.approx(2.5)


@pytest.mark.parametrize("C", BUDGETS)
def test_front_loaded_audits_exactly(hier, C):
    sched = make_front_loaded_adversary(hier, C, 10_000)
    assert abs(audit_budget(sched) - C) <= 1e-9
    assert sched.budget_C == pytest.approx(C, abs=1e-9)


def test_front_loaded_round_count_and_front_loading(hier):
    full = RoundDeviation(flipped_weights(hier).B - hier.weights.B,
                          flipped_weights(hier).B_star - hier.weights.B_star)
    delta_max = full.column_norms().max()
    for C in [2, 15, 200]:
        sched = make_front_loaded_adversary(hier, C, 40_000)
        assert sched.deviated_rounds == list(range(1, int(np.ceil(C / delta_max - 1e-12)) + 1))
    assert abs(brute_audit(make_front_loaded_adversary(hier, 15, 100), hier.n) - 15) < 1e-9


def test_deviated_round_count_monotone_in_C(hier):
    counts = [len(make_front_loaded_adversary(hier, C, 10_000).rounds) for C in BUDGETS]
    assert counts == sorted(counts)


def test_zero_budget_is_nominal(hier):
    sched = make_front_loaded_adversary(hier, 0, 100)
    assert not sched.rounds
    a = 0b1010101010101
    np.testing.assert_array_equal(effective_matrix(sched, hier, 1, a),
                                  compose_intervened_matrix(hier.weights, a))


def test_front_loaded_flips_the_optimum(hier):
    sched = make_front_loaded_adversary(hier, 200, 10_000)
    assert sched.flips_optimum
    a_star, _ = find_optimal_action(hier, power_set(hier.n))
    for t in (1, sched.deviated_rounds[-2]):
        mus = np.array([expected_reward(hier, effective_matrix(sched, hier, t, a)) for a in power_set(hier.n)])
        assert mus[a_star] < mus.max() - 1e-9


def test_deviated_matrices_keep_constraints(hier):
    sched = make_front_loaded_adversary(hier, 15, 1000)
    check_schedule(sched, hier)
    rng = np.random.default_rng(0)
    for t in sched.deviated_rounds + [sched.deviated_rounds[-1] + 1]:
        for a in rng.integers(0, 1 << hier.n, 20):
            D = effective_matrix(sched, hier, t, int(a))
            assert np.all(np.tril(D) == 0)
            assert np.all(np.linalg.norm(D, axis=0) <= 1 + 1e-12)
            X = forward_substitute(D, hier.noise.sample(rng, 200))
            assert np.linalg.norm(X, axis=1).max() <= hier.value_bound


def test_past_deviations_is_nominal(hier):
    sched = make_front_loaded_adversary(hier, 15, 1000)
    t = sched.deviated_rounds[-1] + 1
    np.testing.assert_array_equal(effective_matrix(sched, hier, t, 7),
                                  compose_intervened_matrix(hier.weights, 7))


def test_effective_matrix_range(hier):
    sched = make_front_loaded_adversary(hier, 2, 10)
    with pytest.raises(ValueError):
        effective_matrix(sched, hier, 0, 0)
    with pytest.raises(ValueError):
        effective_matrix(sched, hier, 11, 0)


def test_budget_longer_than_horizon_rejected(hier):
    with pytest.raises(ValueError, match="horizon"):
        make_front_loaded_adversary(hier, 2000, 10)


def test_flip_flag_false_when_target_is_harmless():
    chain = chain_instance(0.5, 1.0)
    harmless = WeightMatrices(chain.weights.B * 0.5, chain.weights.B_star)
    sched = make_front_loaded_adversary(chain, 1.0, 100, target=harmless)
    assert not sched.flips_optimum
    assert audit_budget(sched) == pytest.approx(1.0)


def test_schedule_json_roundtrip(tmp_path, hier):
    sched = make_front_loaded_adversary(hier, 15, 500)
    path = tmp_path / "sched.json"
    save_schedule(sched, path)
    back = load_schedule(path, hier)
    assert back.deviated_rounds == sched.deviated_rounds
    assert back.budget_C == pytest.approx(15)
    for t in sched.deviated_rounds:
        np.testing.assert_allclose(back.rounds[t].obs, sched.rounds[t].obs)
        np.testing.assert_allclose(back.rounds[t].int, sched.rounds[t].int)


def test_schedule_file_validation(tmp_path, hier):
    sched = make_front_loaded_adversary(hier, 4, 50)
    data = sched.to_json()
    data["budget_C"] = 5
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ValueError, match="audits"):
        load_schedule(path, hier)
    data = sched.to_json()
    data["records"].append({"t": 1, "node": 0, "side": "obs", "deviation": [0.1] + [0.0] * 12})
    path.write_text(json.dumps(data))
    with pytest.raises(ValueError, match="non-edge"):
        load_schedule(path, hier)
    with pytest.raises(ValueError, match="cannot read"):
        load_schedule(tmp_path / "nope.json", hier)


def test_schedule_rejects_out_of_range_rounds():
    with pytest.raises(ValueError):
        DeviationSchedule(3, {4: RoundDeviation(np.zeros((2, 2)), np.zeros((2, 2)))})


def test_deviation_stack_lookup(hier):
    sched = make_front_loaded_adversary(hier, 5, 20)
    idx, obs, ints = deviation_stack(sched, hier.n)
    assert idx[0] == 0 and np.all(obs[0] == 0)
    for t in range(1, 21):
        dev = sched.at(t)
        if dev is None:
            assert idx[t] == 0
        else:
            np.testing.assert_array_equal(obs[idx[t]], dev.obs)
            np.testing.assert_array_equal(ints[idx[t]], dev.int)
