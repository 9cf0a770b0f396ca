import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpirl import dp, tabular
from gpirl.errors import UsageError
from gpirl.mdp import Rng, TabularPolicy, Trajectory, Transition, frozen_lake, random_mdp, rollout


def random_trajectory(seed: int, max_len: int = 30) -> tuple[Trajectory, np.ndarray]:
    m = random_mdp(6, 3, seed)
    traj = rollout(m, TabularPolicy.uniform(6, 3), max_len, Rng(seed))
    v = np.random.default_rng(seed).normal(size=6)
    v[5] = 0.0
    return traj, v


def test_eval_config_validation():
    with pytest.raises(UsageError):
        tabular.EvalConfig(gamma=1.5)
    with pytest.raises(UsageError):
        tabular.EvalConfig(alpha=0.0)
    with pytest.raises(UsageError):
        tabular.EvalConfig(n=0)
    tabular.EvalConfig(alpha=0.1)


def test_harmonic_step_is_running_mean():
    tab = tabular.TabularValues.empty("V", 2)
    vals = []
    for reward in (3.0, 5.0, 10.0):
        traj = Trajectory([Transition(0, 0, reward, 1, True, False)])
        t = tabular.mc_targets(traj, tab.values, 0.9)
        tab.values[0] += tabular._step_size(tabular.HARMONIC, tab.counts[0]) * (t[0] - tab.values[0])
        tab.counts[0] += 1
        vals.append(tab.values[0])
    assert vals == [3.0, 4.0, 6.0]


def test_truncated_episode_bootstraps():
    traj = Trajectory([Transition(0, 0, 1.0, 1, False, True)])
    v = np.array([0.0, 2.0])
    assert tabular.mc_targets(traj, v, 0.5).tolist() == [2.0]
    assert tabular.td_targets(traj, v, 0.5).tolist() == [2.0]
    ended = Trajectory([Transition(0, 0, 1.0, 1, True, False)])
    assert tabular.mc_targets(ended, v, 0.5).tolist() == [1.0]


@given(seed=st.integers(0, 5000))
@settings(max_examples=150, deadline=None)
def test_target_reductions_are_pathwise(seed):
    traj, v = random_trajectory(seed)
    g = 0.9
    td = tabular.td_targets(traj, v, g)
    mc = tabular.mc_targets(traj, v, g)
    assert np.max(np.abs(tabular.n_step_targets(traj, v, g, 1) - td)) <= 1e-12
    assert np.max(np.abs(tabular.n_step_targets(traj, v, g, len(traj)) - mc)) <= 1e-12
    assert np.max(np.abs(tabular.lambda_targets(traj, v, g, 0.0) - td)) <= 1e-12
    assert np.max(np.abs(tabular.lambda_targets(traj, v, g, 1.0) - mc)) <= 1e-12


def oracle(slippery=True, gamma=0.9):
    m = frozen_lake(slippery)
    pol = TabularPolicy.uniform(16, 4)
    return m, pol, dp.evaluate_policy_exact(m, pol, gamma)


@pytest.mark.parametrize(
    "fn, extra",
    [
        (tabular.mc_evaluate_v, {}),
        (tabular.td_evaluate_v, {}),
        (tabular.n_step_td_evaluate_v, {"n": 3}),
        (tabular.td_lambda_evaluate_v, {"lam": 0.7}),
    ],
)
def test_evaluators_approach_oracle(fn, extra):
    m, pol, v = oracle()
    cfg = tabular.EvalConfig(gamma=0.9, episodes=40_000, **extra)
    est = fn(m, pol, cfg, Rng(0))
    assert np.max(np.abs(est.values - v)) <= 0.035


def test_q_evaluation_approaches_oracle():
    m, pol, v = oracle()
    q = dp.q_from_v(m, v, 0.9)
    est = tabular.mc_evaluate_q(m, pol, tabular.EvalConfig(gamma=0.9, episodes=20_000), Rng(1))
    assert np.max(np.abs(est.values - q)) <= 0.04


def test_td_from_oracle_has_zero_mean_error():
    m, pol, v = oracle()
    log = []
    tabular.td_evaluate_v(m, pol, tabular.EvalConfig(gamma=0.9, alpha=1e-9, episodes=5000), Rng(2), init=v, td_error_log=log)
    errs = np.array(log)
    assert abs(errs.mean()) <= 4 * errs.std() / np.sqrt(len(errs))


def test_evaluation_is_deterministic():
    m, pol, _ = oracle()
    cfg = tabular.EvalConfig(episodes=300)
    a = tabular.td_lambda_evaluate_v(m, pol, cfg, Rng(9))
    b = tabular.td_lambda_evaluate_v(m, pol, cfg, Rng(9))
    assert np.array_equal(a.values, b.values)


def test_delta_stops_early():
    m, pol, _ = oracle()
    cfg = tabular.EvalConfig(episodes=100_000, delta=1.0, check_every=50)
    tab = tabular.mc_evaluate_v(m, pol, cfg, Rng(0))
    assert tab.counts[0] < 200


def test_table_kind_mismatch():
    m, pol, _ = oracle()
    with pytest.raises(UsageError):
        tabular.mc_evaluate_v(m, pol, tabular.EvalConfig(episodes=1), Rng(0), table=tabular.TabularValues.empty("Q", 16, 4))


def test_epsilon_greedy_probs():
    q = np.array([[0.0, 1.0, 0.5], [2.0, 2.0, 0.0]])
    pol = tabular.epsilon_greedy(q, 0.3)
    assert pol.probs[0] == pytest.approx([0.1, 0.8, 0.1])
    assert pol.probs[1] == pytest.approx([0.8, 0.1, 0.1])
    assert np.array_equal(tabular.epsilon_greedy(q, 1.0).probs, np.full((2, 3), 1 / 3))


def test_mc_control_rejects_bad_epsilon():
    with pytest.raises(UsageError):
        tabular.mc_control_gpi(frozen_lake(False), tabular.McControlConfig(), 0.0, Rng(0))


def test_mc_control_solves_small_random_mdp():
    m = random_mdp(5, 2, 3)
    cfg = tabular.McControlConfig(gamma=0.9, episodes_per_iter=200, max_iters=60, patience=10)
    pol, _ = tabular.mc_control_gpi(m, cfg, 0.1, Rng(0))
    v_star, _ = dp.value_iteration(m, dp.GpiConfig(gamma=0.9))
    v = dp.evaluate_policy_exact(m, pol, 0.9)
    assert v[0] >= 0.95 * v_star[0]


def test_mc_control_reports_each_iteration():
    seen = []
    cfg = tabular.McControlConfig(episodes_per_iter=10, max_iters=4, patience=100)
    tabular.mc_control_gpi(frozen_lake(False), cfg, 0.2, Rng(0), on_iteration=lambda it, info: seen.append((it, info["episodes"])))
    assert seen == [(1, 10), (2, 10), (3, 10), (4, 10)]
