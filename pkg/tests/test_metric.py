import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uorrl.envs import ParamChainEnv, exact_chain_return
from uorrl.errors import InvalidArgumentError
from uorrl.metric import (
    ClusterStore,
    DbMetricConfig,
    db_metric,
    df_metric,
    df_weights,
    exact_evaluator,
    suggest_cluster_sizes,
    suggest_delta,
)
from uorrl.param_space import (
    HeldSource,
    IidSource,
    ParameterSpace,
    Uniform,
    compute_masses,
    set_division,
)
from uorrl.policy import TabularSoftmax
from uorrl.preference import PowerPreference, exact_metric

SPACE = ParameterSpace([0.0], [0.5])
ENV = ParamChainEnv()
POLICY = TabularSoftmax(np.log(np.array([[0.5, 0.5], [0.3, 0.7], [0.3, 0.7], [0.3, 0.7], [0.5, 0.5]])))


def uniform_blocks(delta, space=SPACE):
    return compute_masses(set_division(space, delta), Uniform(space))


class ListSource:
    """Feeds a fixed sequence of parameters."""

    def __init__(self, values):
        self.values = [np.atleast_1d(v) for v in values]
        self.i = 0

    def draw(self, rng):
        v = self.values[self.i]
        self.i += 1
        return v


def test_db_two_blocks_with_substituted_returns():
    blocks = uniform_blocks(0.25)
    table = {0: 1.0, 1: 3.0}
    ev = lambda p: table[int(p[0] > 0.25)]
    report = db_metric(ENV, POLICY, DbMetricConfig(blocks), PowerPreference(1),
                       np.random.default_rng(0), evaluator=ev)
    assert report.value == pytest.approx(1.5, abs=1e-12)
    assert report.value == exact_metric([(1.0, 0.5), (3.0, 0.5)], PowerPreference(1))[0]


def test_db_k0_is_expectation():
    blocks = uniform_blocks(0.05)
    ev = exact_evaluator(ENV, POLICY)
    report = db_metric(ENV, POLICY, DbMetricConfig(blocks), PowerPreference(0),
                       np.random.default_rng(0), evaluator=ev)
    ref = sum(b.mass * ev(b.representative) for b in blocks)
    assert report.value == pytest.approx(ref, abs=1e-12)


def test_db_single_block():
    blocks = uniform_blocks(10.0)
    report = db_metric(ENV, POLICY, DbMetricConfig(blocks), PowerPreference(5),
                       np.random.default_rng(0), evaluator=exact_evaluator(ENV, POLICY))
    assert report.value == pytest.approx(exact_chain_return(ENV, POLICY, [0.25]), abs=1e-15)


def test_db_rollouts_report_consistency():
    blocks = uniform_blocks(0.1)
    report = db_metric(ENV, POLICY, DbMetricConfig(blocks, 6), PowerPreference(2),
                       np.random.default_rng(3))
    assert report.value == pytest.approx(float(np.dot(report.unit_weights, report.unit_returns)),
                                         abs=1e-12)
    assert report.ledger.weights.sum() == pytest.approx(1.0, abs=1e-12)
    for u in report.units:
        assert len(u.trajectories) == 6
        assert u.J == pytest.approx(np.mean([t.discounted_return for t in u.trajectories]), abs=1e-10)


def test_db_threads_do_not_change_result():
    blocks = uniform_blocks(0.1)
    a = db_metric(ENV, POLICY, DbMetricConfig(blocks, 4), PowerPreference(2),
                  np.random.default_rng(9), threads=1)
    b = db_metric(ENV, POLICY, DbMetricConfig(blocks, 4), PowerPreference(2),
                  np.random.default_rng(9), threads=4)
    assert a.value == b.value


def test_db_config_validation():
    with pytest.raises(InvalidArgumentError):
        DbMetricConfig([])
    with pytest.raises(InvalidArgumentError, match="compute_masses"):
        DbMetricConfig(set_division(SPACE, 0.1))


def test_df_two_clusters():
    # cluster means 3 and 1 from parameters mapped straight to returns
    src = ListSource([3.0, 3.0, 1.0, 1.0])
    report = df_metric(ENV, POLICY, 2, 2, src, PowerPreference(1), np.random.default_rng(0),
                       evaluator=lambda p: float(p[0]))
    np.testing.assert_allclose(sorted(report.unit_returns), [1, 3])
    np.testing.assert_allclose(report.ledger.weights, [0.75, 0.25])
    assert report.value == pytest.approx(1.5, abs=1e-15)


def test_df_k0_is_mean_of_cluster_means():
    report = df_metric(ENV, POLICY, 7, 3, IidSource(Uniform(SPACE)), PowerPreference(0),
                       np.random.default_rng(1))
    assert report.value == pytest.approx(report.unit_returns.mean(), abs=1e-12)


def test_df_constant_returns():
    env = ParamChainEnv()
    right = TabularSoftmax.deterministic([1] * 5, 2)
    src = IidSource(Uniform(ParameterSpace([0.0], [1e-12])))
    for k in (0, 1, 21):
        report = df_metric(env, right, 5, 4, src, PowerPreference(k), np.random.default_rng(k))
        assert report.value == pytest.approx(0.95, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(vals=st.lists(st.floats(-10, 10), min_size=1, max_size=15), k=st.floats(0, 25))
def test_df_with_singleton_clusters_is_equal_mass_metric(vals, k):
    n = len(vals)
    report = df_metric(ENV, POLICY, n, 1, ListSource(vals), PowerPreference(k),
                       np.random.default_rng(0), evaluator=lambda p: float(p[0]))
    ref = exact_metric([(v, 1.0 / n) for v in vals], PowerPreference(k))[0]
    assert report.value == pytest.approx(ref, abs=1e-12)


def test_df_weights_partition_unity():
    for k in (0, 1, 21):
        assert df_weights(PowerPreference(k), 37).sum() == pytest.approx(1.0, abs=1e-12)


def test_literal_accumulation_grows_clusters():
    store = ClusterStore(3)
    src = IidSource(Uniform(SPACE))
    rng = np.random.default_rng(0)
    df_metric(ENV, POLICY, 3, 2, src, PowerPreference(1), rng, store=store)
    report = df_metric(ENV, POLICY, 3, 2, src, PowerPreference(1), rng, store=store)
    assert all(len(u.trajectories) == 4 for u in report.units)


def test_report_csv(tmp_path):
    report = db_metric(ENV, POLICY, DbMetricConfig(uniform_blocks(0.1), 2), PowerPreference(1),
                       np.random.default_rng(0))
    path = tmp_path / "audit.csv"
    report.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["rank", "source_id", "J", "mass", "weight", "cumulative_mass"]
    assert len(rows) == 5
    assert sum(float(r["weight"]) * float(r["J"]) for r in rows) == pytest.approx(report.value)


def test_suggest_delta():
    assert suggest_delta(0.1, 1.0) == 0.1
    assert suggest_delta(0.05, 2.0) == 0.1
    assert suggest_delta(0.025, 3.0) == pytest.approx(suggest_delta(0.05, 3.0) / 2)


def test_suggest_cluster_sizes():
    assert suggest_cluster_sizes(0.5, math.exp(-1), 1) == (4, 16)
    n1, n2 = suggest_cluster_sizes(0.25, math.exp(-1), 1)
    assert (n1, n2) == (16, 256)
    a = suggest_cluster_sizes(0.3, 0.1, 2)
    b = suggest_cluster_sizes(0.3, 0.01, 2)
    assert b[0] >= a[0] and b[1] >= a[1]
    with pytest.raises(InvalidArgumentError):
        suggest_cluster_sizes(0.5, 1.0, 1)


def _consistency_setup():
    pol = TabularSoftmax(np.log(np.array([[0.5, 0.5]] + [[0.3, 0.7]] * 3 + [[0.5, 0.5]])))
    ev = exact_evaluator(ENV, pol)
    fine = compute_masses(set_division(SPACE, 0.001), Uniform(SPACE))
    e_fine = db_metric(ENV, pol, DbMetricConfig(fine), PowerPreference(1), np.random.default_rng(0),
                       evaluator=ev).value
    J = [ev([p]) for p in np.linspace(0, 0.5, 501)]
    return pol, ev, e_fine, max(J) - min(J)


def test_df_approaches_db_when_clusters_share_a_parameter():
    pol, ev, e_fine, spread = _consistency_setup()
    errs = []
    for seed in range(20):
        src = HeldSource(Uniform(SPACE), 25)
        rep = df_metric(ENV, pol, 400, 25, src, PowerPreference(1), np.random.default_rng(seed), evaluator=ev)
        errs.append(abs(rep.value - e_fine) / spread)
    assert np.sum(np.array(errs) <= 0.05) >= 19


def test_df_with_iid_draws_and_exact_returns_tends_to_the_mean():
    # every cluster averages 25 independent parameters, so cluster means
    # concentrate on E_p[J] and the estimate tends to the k=0 value
    pol, ev, e_fine, spread = _consistency_setup()
    e_mean = sum(b.mass * ev(b.representative)
                 for b in compute_masses(set_division(SPACE, 0.001), Uniform(SPACE)))
    for seed in range(3):
        rep = df_metric(ENV, pol, 400, 25, IidSource(Uniform(SPACE)), PowerPreference(1),
                        np.random.default_rng(seed), evaluator=ev)
        assert abs(rep.value - e_mean) < abs(rep.value - e_fine)
        assert abs(rep.value - e_mean) <= 0.05 * spread
