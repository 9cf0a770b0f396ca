import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpirl import dp
from gpirl.errors import ConvergenceError, NonEpisodicModelError
from gpirl.mdp import LEFT, RIGHT, UP, MdpModel, Rng, TabularPolicy, frozen_lake, random_mdp, rollout

# uniform policy on the slippery lake, gamma=0.9, from synchronous sweeps run to 1e-15
UNIFORM_SLIPPERY_V = [
    0.0048677289, 0.0045397451, 0.0101730427, 0.0042316438,
    0.0071624719, 0.0, 0.0274265611, 0.0,
    0.0188624811, 0.0608645453, 0.1117227843, 0.0,
    0.0, 0.1399238251, 0.4082546014, 0.0,
]


def chain(reward=1.0):
    """s0 --(any action)--> terminal s1 with the given reward."""
    return MdpModel(2, 1, {(0, 0): ((1, reward, 1.0),)}, frozenset({1}), np.array([1.0, 0.0]))


def test_uniform_slippery_values():
    v = dp.evaluate_policy_exact(frozen_lake(True), TabularPolicy.uniform(16, 4), 0.9)
    assert v == pytest.approx(UNIFORM_SLIPPERY_V, abs=1e-9)


def test_linear_solve_agrees_with_sweeps():
    m = frozen_lake(True)
    pol = TabularPolicy.uniform(16, 4)
    exact = dp.evaluate_policy_exact(m, pol, 0.9)
    swept = dp.evaluate_policy_iterative(m, pol, 0.9, delta=1e-12)
    assert np.max(np.abs(exact - swept)) <= 1e-9


def test_gamma_zero_is_expected_reward():
    m = random_mdp(6, 3, 1)
    pol = TabularPolicy.uniform(6, 3)
    v = dp.evaluate_policy_exact(m, pol, 0.0)
    expected = (pol.probs * m.expected_reward).sum(axis=1)
    expected[5] = 0.0
    assert v == pytest.approx(expected, abs=1e-15)


def test_one_step_chain():
    v = dp.evaluate_policy_exact(chain(), TabularPolicy.uniform(2, 1), 0.9)
    assert list(v) == [1.0, 0.0]


def test_non_episodic_gamma_one_is_detected():
    m = frozen_lake(False)
    # always pushing left from column 0 never terminates from the start state
    with pytest.raises(NonEpisodicModelError):
        dp.evaluate_policy_exact(m, TabularPolicy.deterministic([LEFT] * 16, 4), 1.0)


@given(seed=st.integers(0, 500), gamma=st.floats(0.0, 0.99))
@settings(max_examples=30, deadline=None)
def test_bellman_residual_vanishes(seed, gamma):
    m = random_mdp(7, 3, seed)
    gen = np.random.default_rng(seed)
    pol = TabularPolicy(gen.dirichlet(np.ones(3), size=7))
    v = dp.evaluate_policy_exact(m, pol, gamma)
    assert np.max(np.abs(dp.bellman_residual(m, pol, v, gamma))) <= 1e-9


def test_q_terminal_rows_zero_and_goal_step():
    m = frozen_lake(False)
    v, _ = dp.value_iteration(m, dp.GpiConfig(gamma=0.9))
    q = dp.q_from_v(m, v, 0.9)
    assert np.all(q[list(m.terminal)] == 0.0)
    assert q[14, RIGHT] == 1.0


@given(seed=st.integers(0, 500))
@settings(max_examples=30, deadline=None)
def test_q_v_round_trip(seed):
    m = random_mdp(6, 2, seed)
    pol = TabularPolicy(np.random.default_rng(seed).dirichlet(np.ones(2), size=6))
    v = dp.evaluate_policy_exact(m, pol, 0.95)
    back = dp.v_from_q(pol, dp.q_from_v(m, v, 0.95))
    assert np.max(np.abs(back - v)) <= 1e-12


def test_v_from_q_small_cases():
    assert dp.v_from_q(TabularPolicy.uniform(1, 4), np.array([[0, 0, 0, 4.0]]))[0] == 1.0
    det = TabularPolicy.deterministic([2], 3)
    assert dp.v_from_q(det, np.array([[5.0, 6.0, 7.0]]))[0] == 7.0


def test_mixed_policy_at_14_weights_action_values():
    # right/left/up with 0.5/0.25/0.25 at state 14, deterministic elsewhere
    m = frozen_lake(True)
    _, opt = dp.value_iteration(m, dp.GpiConfig(gamma=0.9))
    probs = opt.probs.copy()
    probs[14] = [0.25, 0.0, 0.5, 0.25]
    pol = TabularPolicy(probs)
    v = dp.evaluate_policy_exact(m, pol, 0.9)
    q = dp.q_from_v(m, v, 0.9)
    by_hand = 0.25 * q[14, LEFT] + 0.5 * q[14, RIGHT] + 0.25 * q[14, UP]
    assert v[14] == pytest.approx(by_hand, abs=1e-12)
    assert dp.v_from_q(pol, q)[14] == pytest.approx(by_hand, abs=1e-12)


def test_advantage_properties():
    m = frozen_lake(True)
    uni = TabularPolicy.uniform(16, 4)
    adv = dp.advantage_exact(m, uni, 0.9)
    assert np.max(np.abs((uni.probs * adv).sum(axis=1))) <= 1e-12
    assert np.argmax(adv[14]) == RIGHT
    _, opt = dp.value_iteration(m, dp.GpiConfig(gamma=0.9))
    a_opt = dp.advantage_exact(m, opt, 0.9)
    chosen = a_opt[np.arange(16), opt.greedy_actions()]
    assert np.max(np.abs(chosen)) <= 1e-12


def test_greedy_tie_breaks_low():
    assert dp.greedy_actions(np.array([[0, 3, 3, 1.0]]))[0] == 1
    assert dp.greedy_actions(np.array([[0, 1, 2, 3.0]]))[0] == 3
    pol = dp.greedy_improvement(np.array([[1.0, 1.0]]))
    assert pol.probs.tolist() == [[1.0, 0.0]]


def test_value_iteration_non_slippery_distances():
    m = frozen_lake(False)
    v, pol = dp.value_iteration(m, dp.GpiConfig(gamma=0.9))
    assert v[14] == pytest.approx(1.0, abs=1e-12)
    assert v[13] == pytest.approx(0.9, abs=1e-12)
    assert v[0] == pytest.approx(0.9**5, abs=1e-12)
    traj = rollout(m, pol, 100, Rng(0))
    assert traj.final_state == 15


def test_value_iteration_gamma_zero_one_sweep():
    m = random_mdp(5, 3, 9)
    v, _ = dp.value_iteration(m, dp.GpiConfig(gamma=0.0))
    expected = m.expected_reward.max(axis=1)
    expected[4] = 0.0
    assert v == pytest.approx(expected, abs=1e-15)


def test_value_iteration_cap_reports_residual():
    with pytest.raises(ConvergenceError) as info:
        dp.value_iteration(frozen_lake(True), dp.GpiConfig(gamma=0.99, max_sweeps=3))
    assert info.value.residual > 0


def test_vi_policy_beats_random_policies():
    m = frozen_lake(True)
    _, opt = dp.value_iteration(m, dp.GpiConfig(gamma=0.99))
    best = dp.success_probability(m, opt)
    gen = np.random.default_rng(0)
    for _ in range(50):
        pol = TabularPolicy(gen.dirichlet(np.ones(4), size=16))
        assert dp.success_probability(m, pol) <= best + 1e-12


def test_policy_iteration_fixed_point():
    m = frozen_lake(True)
    cfg = dp.GpiConfig(gamma=0.9)
    pol, v = dp.policy_iteration(m, cfg)
    hist = []
    again, v2 = dp.policy_iteration(m, cfg, initial=pol, history=hist)
    assert len(hist) == 1
    assert np.array_equal(again.probs, pol.probs)


@pytest.mark.parametrize("slippery", [False, True])
def test_policy_iteration_matches_value_iteration_on_lake(slippery):
    m = frozen_lake(slippery)
    cfg = dp.GpiConfig(gamma=0.9)
    v_vi, _ = dp.value_iteration(m, cfg)
    _, v_pi = dp.policy_iteration(m, cfg)
    assert np.max(np.abs(v_vi - v_pi)) <= 1e-9


def test_policy_iteration_matches_value_iteration_random():
    m = random_mdp(5, 3, 17)
    cfg = dp.GpiConfig(gamma=0.9)
    v_vi, _ = dp.value_iteration(m, cfg)
    _, v_pi = dp.policy_iteration(m, cfg)
    assert np.max(np.abs(v_vi - v_pi)) <= 1e-9


@given(seed=st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_policy_iteration_monotone(seed):
    m = random_mdp(6, 3, seed)
    hist = []
    dp.policy_iteration(m, dp.GpiConfig(gamma=0.95), history=hist)
    for before, after in zip(hist, hist[1:]):
        assert np.all(after >= before - 1e-12)


def test_absorption_matches_undiscounted_value():
    # reward 1 only on entering the goal, so V at gamma=1 is the success probability
    for slippery in (False, True):
        m = frozen_lake(slippery)
        pol = TabularPolicy.uniform(16, 4)
        x = dp.absorption_probabilities(m, pol)
        v1 = dp.evaluate_policy_exact(m, pol, 1.0)
        live = [s for s in range(16) if s not in m.terminal]
        assert x[live] == pytest.approx(v1[live], abs=1e-12)
        assert x[15] == 1.0 and x[5] == 0.0


def test_absorption_of_stuck_policy_is_zero():
    m = frozen_lake(False)
    pol = TabularPolicy.deterministic([LEFT] * 16, 4)
    assert dp.success_probability(m, pol) == 0.0


def test_uniform_success_matches_monte_carlo():
    m = frozen_lake(True)
    pol = TabularPolicy.uniform(16, 4)
    exact = dp.success_probability(m, pol)
    rng = Rng(4)
    n = 40_000
    wins = sum(rollout(m, pol, 1000, rng).final_state == 15 for _ in range(n))
    se = np.sqrt(exact * (1 - exact) / n)
    assert abs(wins / n - exact) <= 4 * se


def test_csv_dumps_round_trip():
    m = frozen_lake(True)
    v, _ = dp.value_iteration(m, dp.GpiConfig(gamma=0.9))
    q = dp.q_from_v(m, v, 0.9)
    assert dp.values_csv(v).startswith("state,value\n0,")
    assert np.array_equal(dp.read_table_csv(dp.values_csv(v)), v)
    assert np.array_equal(dp.read_table_csv(dp.q_csv(q)), q)
