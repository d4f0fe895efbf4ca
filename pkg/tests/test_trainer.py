import numpy as np
import pytest
from oracles import central_difference, importance_surrogate

from uorrl.envs import ParamChainEnv, exact_chain_return, rollout
from uorrl.errors import CapacityError, InvalidArgumentError
from uorrl.param_space import (
    Empirical,
    ParameterSpace,
    Uniform,
    compute_masses,
    set_division,
)
from uorrl.policy import TabularSoftmax
from uorrl.preference import PowerPreference
from uorrl.trainer import (
    TrainConfig,
    enumerate_optimal_tabular,
    exact_policy_metric,
    policy_update,
    surrogate_gradient,
    train,
)

SPACE = ParameterSpace([0.0], [0.5])


def db_config(**kw):
    blocks = compute_masses(set_division(SPACE, 0.1), Uniform(SPACE))
    base = dict(mode="db", preference=PowerPreference(1), blocks=blocks, n_rollouts_per_block=4,
                max_iterations=3, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def batches_for(env, policy, seed, n_batches=3, per_batch=6):
    rng = np.random.default_rng(seed)
    slips = rng.uniform(0, 0.6, size=n_batches)
    w = rng.dirichlet(np.ones(n_batches))
    return [(w[j], [rollout(env, policy, [slips[j]], rng) for _ in range(per_batch)])
            for j in range(n_batches)]


def test_zero_learning_rate_is_noop():
    env = ParamChainEnv()
    pol = TabularSoftmax(np.random.default_rng(0).normal(size=(5, 2)))
    new = policy_update(pol, batches_for(env, pol, 1), 0.0)
    np.testing.assert_array_equal(new.params, pol.params)


def test_update_does_not_mutate_input():
    env = ParamChainEnv()
    pol = TabularSoftmax.uniform(5, 2)
    before = pol.params.copy()
    new = policy_update(pol, batches_for(env, pol, 2), 0.5, baseline="mean")
    np.testing.assert_array_equal(pol.params, before)
    assert not np.array_equal(new.params, before)


def test_all_weight_on_one_batch_is_plain_score_step():
    env = ParamChainEnv()
    pol = TabularSoftmax.uniform(5, 2)
    traj = rollout(env, TabularSoftmax.deterministic([1] * 5, 2), [0.0], np.random.default_rng(0))
    other = rollout(env, pol, [0.3], np.random.default_rng(1))
    g = surrogate_gradient(pol, [(1.0, [traj]), (0.0, [other])])
    ref = pol.weighted_score(traj.states, traj.actions, traj.rewards_to_go())
    np.testing.assert_array_equal(g, ref)


def test_weights_must_sum_to_one():
    env = ParamChainEnv()
    pol = TabularSoftmax.uniform(5, 2)
    b = batches_for(env, pol, 0)
    with pytest.raises(InvalidArgumentError):
        surrogate_gradient(pol, [(w * 2, t) for w, t in b])


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences_of_surrogate(seed):
    env = ParamChainEnv(n_states=4, gamma=0.9, left_reward=0.2, step_reward=-0.05)
    theta0 = np.random.default_rng(seed).normal(size=(4, 2))
    pol = TabularSoftmax(theta0)
    batches = batches_for(env, pol, 100 + seed)
    analytic = surrogate_gradient(pol, batches, baseline="none")
    fd = central_difference(
        lambda th: importance_surrogate(th, theta0.ravel(), theta0.shape, batches), theta0.ravel())
    assert np.max(np.abs(analytic - fd)) <= 1e-8


def test_mean_baseline_is_unbiased():
    # expected gradient with and without the baseline agree with the exact one
    env = ParamChainEnv(n_states=3, gamma=0.9)
    theta0 = np.array([[0.0, 0.0], [0.2, -0.1], [0.0, 0.0]])
    pol = TabularSoftmax(theta0)

    def exact_J(th):
        return exact_chain_return(env, TabularSoftmax(th.reshape(3, 2)), [0.2])

    ref = central_difference(exact_J, theta0.ravel())
    rng = np.random.default_rng(0)
    ests = {"none": [], "mean": []}
    for _ in range(400):
        trajs = [rollout(env, pol, [0.2], rng) for _ in range(50)]
        for b in ests:
            ests[b].append(surrogate_gradient(pol, [(1.0, trajs)], baseline=b))
    for b, g in ests.items():
        g = np.array(g)
        se = g.std(axis=0, ddof=1) / np.sqrt(len(g)) + 1e-12
        # the mean baseline is computed from the batch itself, which adds an O(1/n) bias
        assert np.all(np.abs(g.mean(axis=0) - ref) <= 5 * se + 0.02 / 50), b


def test_train_zero_lr_single_iteration():
    env = ParamChainEnv()
    pol0 = TabularSoftmax.uniform(5, 2)
    pol, hist = train(env, db_config(max_iterations=1, learning_rate=0.0), policy=pol0)
    assert len(hist) == 1
    np.testing.assert_array_equal(pol.params, pol0.params)


def test_train_is_deterministic():
    env = ParamChainEnv()
    cfg = db_config(learning_rate=0.5)
    p1, h1 = train(env, cfg)
    p2, h2 = train(env, cfg)
    assert [r.value for r in h1] == [r.value for r in h2]
    np.testing.assert_array_equal(p1.params, p2.params)


def test_train_df_mode_runs():
    env = ParamChainEnv()
    cfg = TrainConfig(mode="df", preference=PowerPreference(2), n1=4, n2=3,
                      distribution=Uniform(SPACE), max_iterations=3, learning_rate=0.2,
                      step_bound=0.02, seed=1)
    _, hist = train(env, cfg)
    assert len(hist) == 3 and all(r.mode == "DF" for r in hist)


def test_weights_constant_within_iteration():
    env = ParamChainEnv()
    seen = []
    train(env, db_config(learning_rate=0.3), keep_trajectories=True,
          callback=lambda it, rep, pol: seen.append(rep))
    for rep in seen:
        means = np.array([np.mean([t.discounted_return for t in u.trajectories]) for u in rep.units])
        assert rep.value == pytest.approx(float(np.dot(rep.unit_weights, means)), abs=1e-12)


def test_train_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(mode="db")
    with pytest.raises(InvalidArgumentError):
        TrainConfig(mode="df", n1=2)
    with pytest.raises(InvalidArgumentError):
        db_config(max_iterations=0)


def test_enumeration_single_point_grid_is_mdp_optimum():
    env = ParamChainEnv()
    pol, value = enumerate_optimal_tabular(env, [[0.1]], [1.0], PowerPreference(7))
    assert value == pytest.approx(exact_chain_return(env, TabularSoftmax.deterministic([0, 1, 1, 1, 0], 2), [0.1]))


def test_enumeration_symmetric_env_ties():
    # a slip of 0.5 makes every policy equivalent
    env = ParamChainEnv()
    pol, value = enumerate_optimal_tabular(env, [[0.5]], [1.0], PowerPreference(0))
    assert value == pytest.approx(exact_chain_return(env, TabularSoftmax.uniform(5, 2), [0.5]))


def test_enumeration_two_regime_optima():
    env = ParamChainEnv(n_states=7, gamma=0.8, left_reward=0.65, slip_from=4)
    grid, masses = [[0.05], [0.45]], [0.5, 0.5]
    p0, v0 = enumerate_optimal_tabular(env, grid, masses, PowerPreference(0))
    p21, v21 = enumerate_optimal_tabular(env, grid, masses, PowerPreference(21))
    # k=0 heads right through the slippery cells, k=21 retreats left
    assert list(np.argmax(p0.action_probs(), axis=1)[3:6]) == [1, 1, 1]
    assert list(np.argmax(p21.action_probs(), axis=1)[1:4]) == [0, 0, 0]
    assert v21 == pytest.approx(0.65 * 0.8**2, abs=1e-12)
    assert exact_policy_metric(env, p0, grid, masses, PowerPreference(21)) < v21
    assert exact_policy_metric(env, p21, grid, masses, PowerPreference(0)) < v0


def test_enumeration_capacity_limit():
    with pytest.raises(CapacityError):
        enumerate_optimal_tabular(ParamChainEnv(n_states=23), [[0.1]], [1.0], PowerPreference(0))


def test_training_improves_metric_on_two_regime_chain():
    env = ParamChainEnv(n_states=7, gamma=0.8, left_reward=0.65, slip_from=4)
    space = ParameterSpace([0.0], [0.5])
    dist = Empirical(space, [0.05, 0.45], [0.5, 0.5])
    blocks = compute_masses(set_division(space, 0.1), dist)
    for k in (0, 21):
        cfg = TrainConfig(mode="db", preference=PowerPreference(k), blocks=blocks,
                          n_rollouts_per_block=16, max_iterations=120, learning_rate=1.0, seed=3)
        _, hist = train(env, cfg)
        v = np.convolve([r.value for r in hist], np.ones(10) / 10, mode="valid")
        assert v[-1] > v[0]
