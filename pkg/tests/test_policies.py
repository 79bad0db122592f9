import numpy as np
import pytest
from dataclasses import replace

from robust_lcb.estimation import ConfidenceConfig, confidence_radius, ellipsoid_for
from robust_lcb.harness import rep_seeds, run_batch
from robust_lcb.deviation import DeviationSchedule, make_front_loaded_adversary
from robust_lcb.policies import (
    FixedPolicy, LcbPolicy, Ucb1Policy, make_policy, ucb_of_action,
)
from robust_lcb.presets import preset
from robust_lcb.sem import (
    compose_intervened_matrix, distinct_actions, expected_reward, find_optimal_action, forward_substitute,
    power_set,
)

from conftest import chain_instance, random_instance


def config_for(inst, C=1.0, scale=1.0, normalized=False, delta=0.05):
    return ConfidenceConfig(delta, C, inst.graph.max_in_degree, inst.value_bound, inst.noise.norm_bound,
                            radius_scale=scale, normalized=normalized)


def play(policy, inst, T, rng):
    for _ in range(T):
        a = policy.select()
        side = ((a[:, None] >> np.arange(inst.n)) & 1).astype(bool)
        D = np.where(side[:, None, :], inst.weights.B_star, inst.weights.B)
        policy.step(forward_substitute(D, inst.noise.sample(rng, policy.reps)), a)


def plant_truth(policy, inst):
    """Put the true columns at the ellipsoid centers with identity Gram matrices."""
    bank = policy.bank
    for i, pa in enumerate(inst.graph.parents):
        k = len(pa)
        bank.s[:, i, 0, :k] = inst.weights.B[list(pa), i]
        bank.s[:, i, 1, :k] = inst.weights.B_star[list(pa), i]


def test_degenerate_radius_recovers_true_means():
    inst = preset("hierarchical")
    pol = LcbPolicy(inst, config_for(inst, scale=1e-13, normalized=True))
    plant_truth(pol, inst)
    acts = distinct_actions(inst.graph)
    ucb = pol.ucb_values(acts)[0]
    mus = expected_reward(inst, np.stack([compose_intervened_matrix(inst.weights, a) for a in acts]))
    np.testing.assert_allclose(ucb, mus, atol=1e-9)
    for a in acts[:4]:
        np.testing.assert_allclose(ucb_of_action(pol, a)[0], expected_reward(inst, compose_intervened_matrix(inst.weights, a)), atol=1e-9)
    assert pol.select()[0] == find_optimal_action(inst, acts)[0]


@pytest.mark.parametrize("clip", ["min", "radial", "exact"])
def test_fresh_chain_value(clip):
    inst = chain_instance()
    for scale in (0.4, 1.0, 3.0):
        cfg = config_for(inst, scale=scale, normalized=True)
        pol = LcbPolicy(inst, cfg, clip=clip)
        beta = confidence_radius(cfg, 0)
        val, valuation = ucb_of_action(pol, 0b10)
        assert val == pytest.approx(1 + min(beta, 1.0))
        np.testing.assert_allclose(valuation.mu_tilde, [1.0, 1 + min(beta, 1.0)])


def test_valuation_is_consistent(rng):
    inst = random_instance(rng, 5)
    pol = LcbPolicy(inst, config_for(inst, scale=0.5, normalized=True), clip="exact")
    play(pol, inst, 30, rng)
    for a in (0, 0b10110, 0b11111):
        val, v = ucb_of_action(pol, a, refine=False)
        th = v.theta_tilde
        np.testing.assert_allclose(v.mu_tilde, th.T @ v.mu_tilde + inst.nu, atol=1e-9)
        ells = {i: ellipsoid_for(pol.bank.node_state(0, i), a, pol.radius) for i in range(inst.n)
                if inst.graph.parents[i]}
        for i, ell in ells.items():
            assert ell.contains(th[:, i], tol=1e-6)
            assert np.linalg.norm(th[:, i]) <= 1 + 1e-8


def test_greedy_batch_matches_per_action(rng):
    inst = random_instance(rng, 5)
    pol = LcbPolicy(inst, config_for(inst, scale=0.7, normalized=True), reps=2)
    play(pol, inst, 40, rng)
    acts = power_set(5)
    batch = pol.ucb_values(acts)
    for r in range(2):
        single = [ucb_of_action(pol, a, rep=r, refine=False)[0] for a in acts]
        np.testing.assert_allclose(batch[r], single, atol=1e-9)


def test_assembly_matches_exhaustive_small(rng):
    for _ in range(15):
        n = int(rng.integers(2, 5))
        inst = random_instance(rng, n)
        pol = LcbPolicy(inst, config_for(inst, scale=float(rng.uniform(0.1, 2)), normalized=True), reps=3)
        play(pol, inst, int(rng.integers(0, 30)), rng)
        chosen = pol.select()
        ucb = pol.ucb_values(power_set(n))
        np.testing.assert_allclose(ucb[np.arange(3), chosen], ucb.max(axis=1), atol=1e-12)


def test_explicit_action_list_picks_best_ucb(rng):
    inst = random_instance(rng, 4)
    acts = [0, 3, 5, 12]
    pol = LcbPolicy(inst, config_for(inst, scale=0.5, normalized=True), actions=acts)
    play(pol, inst, 20, rng)
    got = pol.select()[0]
    vals = [ucb_of_action(pol, a)[0] for a in sorted(acts)]
    assert got == sorted(acts)[int(np.argmax(vals))]


def test_intervenable_restriction(rng):
    inst = preset("hierarchical")
    pol = LcbPolicy(inst, config_for(inst), reps=2, intervenable=inst.graph.non_root_nodes)
    play(pol, inst, 5, rng)
    roots = sum(1 << k for k in range(9))
    assert np.all(pol.select() & roots == 0)


def test_smaller_radius_never_raises_ucb(rng):
    inst = random_instance(rng, 4)
    pol = LcbPolicy(inst, config_for(inst, scale=1.0, normalized=True))
    play(pol, inst, 25, rng)
    small = LcbPolicy(inst, config_for(inst, scale=0.3, normalized=True))
    small.bank = pol.bank
    small.t = pol.t
    acts = power_set(4)
    assert np.all(small.ucb_values(acts) <= pol.ucb_values(acts) + 1e-12)


def test_optimism_under_coverage(rng):
    inst = preset("hierarchical")
    cfg = config_for(inst)
    pol = LcbPolicy(inst, cfg, reps=1)
    acts = distinct_actions(inst.graph)
    a_star, mu_star = find_optimal_action(inst, acts)
    for t in range(60):
        a = np.array([acts[int(rng.integers(len(acts)))]])
        side = ((a[:, None] >> np.arange(inst.n)) & 1).astype(bool)
        D = np.where(side[:, None, :], inst.weights.B_star, inst.weights.B)
        pol.step(forward_substitute(D, inst.noise.sample(rng, 1)), a)
        covered = all(
            ellipsoid_for(pol.bank.node_state(0, i), a_star, pol.radius).contains(
                compose_intervened_matrix(inst.weights, a_star)[:, i], tol=1e-9)
            for i in inst.graph.non_root_nodes)
        if covered:
            assert ucb_of_action(pol, a_star)[0] >= mu_star - 1e-9


def test_step_counts_and_errors(rng):
    inst = random_instance(rng, 4)
    pol = LcbPolicy(inst, config_for(inst))
    with pytest.raises(ValueError, match="before select"):
        pol.step(np.zeros(4))
    pol.select()
    pol.step(inst.noise.sample(rng))
    assert np.all(pol.bank.count.sum(axis=2) == 1)
    assert pol.t == 1
    pol.select()
    with pytest.raises(ValueError, match="entries"):
        pol.step(np.zeros(3))


def test_ucb1_concentrates_on_best_arm():
    inst = chain_instance()
    pol = Ucb1Policy(inst, [0, 1, 2])
    rewards = {0: 1.0, 1: 0.0, 2: 0.0}
    picks = []
    for _ in range(3000):
        a = int(pol.select()[0])
        picks.append(a)
        pol.step(np.array([0.0, rewards[a]]))
    assert picks[:3] == [0, 1, 2]
    assert np.mean(np.array(picks[-1000:]) == 0) > 0.98


def test_ucb1_unpulled_first_and_errors():
    inst = chain_instance()
    pol = Ucb1Policy(inst, [3, 1], reps=2)
    assert list(pol.select()) == [1, 1]
    pol.step(np.ones((2, 2)))
    assert list(pol.select()) == [3, 3]
    with pytest.raises(ValueError):
        Ucb1Policy(inst, [])


def test_fixed_policy():
    pol = FixedPolicy(5, reps=3)
    assert list(pol.select()) == [5, 5, 5]


def test_make_policy_dispatch():
    inst = preset("hierarchical")
    acts = distinct_actions(inst.graph)
    lin = make_policy("linsem-ucb", inst, 100, 50.0, actions=acts)
    rob = make_policy("robust-lcb", inst, 100, 50.0, actions=acts)
    assert lin.config.budget_C == 1.0 and rob.config.budget_C == 50.0
    assert lin.config.delta == pytest.approx(1 / (2 * 13 * 100))
    assert isinstance(make_policy("ucb1", inst, 100, 0, actions=acts), Ucb1Policy)
    with pytest.raises(ValueError):
        make_policy("thompson", inst, 100, 1.0)
    with pytest.raises(ValueError):
        make_policy("ucb1", inst, 100, 1.0)


def test_linsem_equals_robust_with_unit_budget():
    inst = preset("hierarchical")
    acts = distinct_actions(inst.graph)
    sched = make_front_loaded_adversary(inst, 10, 300)
    seeds = rep_seeds(3, 2)
    runs = []
    for name in ("linsem-ucb", "robust-lcb"):
        pol = make_policy(name, inst, 300, 1.0, 2, acts, inst.graph.non_root_nodes, None, "min", 1.0, True)
        runs.append(run_batch(inst, sched, pol, 300, seeds, acts))
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.cumulative, b.cumulative)


def test_replay_determinism():
    inst = preset("hierarchical")
    acts = distinct_actions(inst.graph)
    out = []
    for _ in range(2):
        pol = make_policy("robust-lcb", inst, 200, 5.0, 2, acts, inst.graph.non_root_nodes, None, "min", 1.0, True)
        out.append(run_batch(inst, DeviationSchedule(200), pol, 200, rep_seeds(11, 2), acts))
    for a, b in zip(*out):
        np.testing.assert_array_equal(a.actions, b.actions)
