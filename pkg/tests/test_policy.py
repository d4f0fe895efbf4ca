import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_difference, log_softmax

from uorrl.errors import InvalidArgumentError
from uorrl.policy import (
    LinearGaussian,
    TabularSoftmax,
    load_policy,
    policy_from_dict,
    policy_to_dict,
    save_policy,
)


def test_probabilities_sum_to_one():
    pol = TabularSoftmax(np.array([[1000.0, -1000.0], [0.3, 0.1], [-5, 2]]))
    np.testing.assert_allclose(pol.action_probs().sum(axis=1), 1.0, atol=1e-9)


def test_deterministic_policy_always_picks_its_action():
    pol = TabularSoftmax.deterministic([0, 1, 1], 2)
    rng = np.random.default_rng(0)
    assert all(pol.sample_action(1, rng) == 1 for _ in range(100))


def test_sampling_frequencies():
    pol = TabularSoftmax(np.array([[0.0, np.log(3.0)]]))
    rng = np.random.default_rng(1)
    freq = np.mean([pol.sample_action(0, rng) for _ in range(20_000)])
    assert abs(freq - 0.75) < 4 * np.sqrt(0.75 * 0.25 / 20_000)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_tabular_score_is_log_prob_gradient(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(4, 3))
    pol = TabularSoftmax(logits)
    s, a = [2, 0, 2], [1, 2, 0]
    coefs = rng.normal(size=3)

    def f(flat):
        lp = log_softmax(flat.reshape(4, 3))
        return float(np.dot(coefs, lp[s, a]))

    np.testing.assert_allclose(pol.weighted_score(s, a, coefs), central_difference(f, logits.ravel()),
                               atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gaussian_score_is_log_prob_gradient(seed):
    rng = np.random.default_rng(seed)
    pol = LinearGaussian(rng.normal(size=(2, 3)), rng.normal(size=2), rng.normal(size=2) * 0.3)
    states = [rng.normal(size=3) for _ in range(4)]
    actions = [rng.normal(size=2) for _ in range(4)]
    coefs = rng.normal(size=4)

    def f(flat):
        return float(np.dot(coefs, pol.with_params(flat).log_prob(states, actions)))

    np.testing.assert_allclose(pol.weighted_score(states, actions, coefs),
                               central_difference(f, pol.params), atol=1e-6)


def test_entropy_gradient():
    rng = np.random.default_rng(2)
    pol = TabularSoftmax(rng.normal(size=(3, 2)))
    states = [0, 2, 2]
    coefs = np.array([0.2, 0.5, 0.3])

    def f(flat):
        return float(np.dot(coefs, pol.with_params(flat).entropy(states)))

    np.testing.assert_allclose(pol.entropy_grad(states, coefs), central_difference(f, pol.params),
                               atol=1e-8)


def test_initial_linear_gaussian():
    pol = LinearGaussian.initial(2, 1)
    assert np.all(pol.K == 0)
    np.testing.assert_allclose(pol.std, 0.5)


def test_file_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(4)
    for pol in (TabularSoftmax(rng.normal(size=(5, 2)) / 3, env_name="param_chain"),
                TabularSoftmax.deterministic([0, 1, 0], 2),
                LinearGaussian(rng.normal(size=(1, 1)), rng.normal(size=1), np.array([np.log(0.5)]))):
        path = tmp_path / "p.json"
        save_policy(pol, path, seed=7)
        back = load_policy(path)
        assert type(back) is type(pol)
        np.testing.assert_array_equal(back.params, pol.params)
        assert policy_to_dict(back, seed=7) == policy_to_dict(pol, seed=7)


def test_unknown_format_version():
    d = policy_to_dict(TabularSoftmax.uniform(3, 2))
    d["format_version"] = 99
    with pytest.raises(InvalidArgumentError):
        policy_from_dict(d)
