import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import lower, random_corr
from nabc import kernel as K
from nabc import matrix as mx
from nabc import scenario as S
from nabc.dgm import gaussian_spec
from nabc.errors import ConfigError, DimensionMismatch, InvalidPermutation
from nabc.measures import MeasureSpec

R4 = lower([0.3, 0.1, -0.2, 0.4, 0.2, 0.25], 4)


@pytest.fixture(scope="module")
def cal4():
    return K.calibrate(gaussian_spec(R4), MeasureSpec("pearson"), 80, 3000, seed=5)


def test_fill_order_tables():
    assert S.fill_order(2) == [(2, 1)]
    assert S.fill_order(3) == [(3, 2), (2, 1), (3, 1)]
    six = S.fill_order(6)
    assert six[:7] == [(6, 5), (5, 4), (6, 4), (4, 3), (5, 3), (6, 3), (3, 2)]
    assert six[10] == (2, 1) and six[14] == (6, 1)
    assert sorted(six) == sorted(mx.cell_labels(6))
    with pytest.raises(ConfigError):
        S.fill_order(1)


@pytest.mark.parametrize("p", [3, 4, 5, 6, 7])
def test_every_fill_prefix_is_closed(p):
    fo = S.fill_order(p)
    for k in range(1, len(fo) + 1):
        prefix = set(fo[:k])
        for cell in prefix:
            assert set(S.affected_cells(p, *cell)) <= prefix


@pytest.mark.parametrize("p", [4, 5, 6])
def test_single_angle_perturbation_containment(p, rng):
    for _ in range(200 // 3 + 1):
        R = random_corr(rng, p)
        th = mx.corr_to_angles(R)
        i, j = sorted(rng.choice(np.arange(1, p + 1), 2, replace=False))[::-1]
        th2 = th.copy()
        th2[i - 1, j - 1] = rng.uniform(0.05, np.pi - 0.05)
        diff = np.abs(mx.angles_to_corr(th2) - R)
        assert diff[~S.affected_mask(p, i, j)].max() < 1e-12


def test_spec_json_round_trip():
    spec = S.ScenarioSpec(5, ((2, 3), (5, 1)), "covid")
    assert spec.targets == ((3, 2), (5, 1))
    again = S.ScenarioSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again == spec
    with pytest.raises(ConfigError):
        S.ScenarioSpec(4, ((5, 1),))
    with pytest.raises(ConfigError):
        S.ScenarioSpec(4, ())
    with pytest.raises(ConfigError):
        S.ScenarioSpec.from_dict({"targets": []})


def test_plan_examples():
    single = S.plan_scenario(S.ScenarioSpec(5, ((5, 4),)))
    assert single.region == 1 and single.forced_extras == []
    everything = S.plan_scenario(S.ScenarioSpec(4, tuple(mx.cell_labels(4))))
    assert everything.order.tolist() == [0, 1, 2, 3] and everything.frozen == []
    # reversing the asset order puts these four into the first four fill cells
    spec6 = S.ScenarioSpec(6, ((2, 1), (3, 1), (3, 2), (4, 3)))
    rev = S.plan_from_order(spec6, [5, 4, 3, 2, 1, 0])
    assert sorted(rev.images) == sorted(S.fill_order(6)[:4])
    best = S.plan_scenario(spec6)
    assert best.region == 4 and best.forced_extras == []
    with pytest.raises(InvalidPermutation):
        S.plan_from_order(spec6, [0, 0, 1, 2, 3, 4])


def _partition_ok(plan):
    p = plan.dim
    region = {plan.to_original(c) for c in plan.region_cells}
    assert set(plan.spec.targets) <= region
    assert set(plan.forced_extras) == region - set(plan.spec.targets)
    assert set(plan.frozen) | region == set(mx.cell_labels(p))
    assert not set(plan.frozen) & region
    T = S.fill_position_table(p)
    assert max(T[i - 1, j - 1] for i, j in plan.images) == plan.region


@given(st.integers(4, 7), st.data())
def test_plan_structure_and_greedy_vs_exhaustive(p, data):
    cells = mx.cell_labels(p)
    picks = data.draw(st.lists(st.sampled_from(cells), min_size=1, max_size=len(cells), unique=True))
    spec = S.ScenarioSpec(p, tuple(picks))
    ex = S.plan_scenario(spec)
    gr = S.plan_scenario(spec, exhaustive_max_dim=0)
    assert ex.method == "exhaustive" and gr.method == "greedy-swap"
    _partition_ok(ex)
    _partition_ok(gr)
    assert gr.region >= ex.region
    # exhaustive really is optimal
    T = S.fill_position_table(p)
    tg = np.array([(i - 1, j - 1) for i, j in spec.targets])
    sizes = S._region_sizes(np.array(list(itertools.permutations(range(p)))), tg, T)
    assert ex.region == sizes.min()


def test_greedy_large_dim():
    spec = S.ScenarioSpec(12, ((12, 3), (7, 3), (12, 7)))
    plan = S.plan_scenario(spec)
    assert plan.method == "greedy-swap"
    _partition_ok(plan)
    assert plan.region == 3 and plan.forced_extras == []


def test_frozen_cells_constant(cal4):
    plan = S.plan_scenario(S.ScenarioSpec(4, ((3, 1), (4, 2))))
    Rs = S.scenario_sample(cal4, plan, 2000, seed=3)
    assert Rs.shape == (2000, 4, 4)
    for i, j in plan.frozen:
        v = Rs[:, i - 1, j - 1]
        assert np.ptp(v) < 1e-12
        assert v[0] == pytest.approx(cal4.mean_matrix[i - 1, j - 1], abs=1e-12)
    for i, j in plan.spec.targets:
        assert np.std(Rs[:, i - 1, j - 1]) > 0.01


def test_target_angle_law_unchanged(cal4):
    plan = S.plan_scenario(S.ScenarioSpec(4, ((4, 3),)))
    Rs = S.scenario_sample(cal4, plan, 4000, seed=4)
    Ru = cal4.sample_matrices(4000, seed=5)
    th_s = mx.corr_to_angle_vectors(Rs)[0][:, 5]
    th_u = mx.corr_to_angle_vectors(Ru)[0][:, 5]
    assert stats.ks_2samp(th_s, th_u).statistic < 0.03
    # the correlation itself also depends on the pinned angles of its row,
    # so holding them at the mean narrows its spread
    assert Rs[:, 3, 2].std() < Ru[:, 3, 2].std()


def test_declared_constants(cal4):
    plan = S.plan_scenario(S.ScenarioSpec(4, ((4, 3),)))
    C = lower([0.1, 0.0, 0.0, 0.0, 0.0, 0.3], 4)
    Rs = S.scenario_sample(cal4, plan, 50, seed=1, constants=C)
    assert np.allclose(Rs[:, 1, 0], 0.1, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        S.scenario_sample(cal4, plan, 5, seed=1, constants=np.eye(3))


def test_all_cells_matches_unrestricted(cal4):
    plan = S.plan_scenario(S.ScenarioSpec(4, tuple(mx.cell_labels(4))))
    R = lower([0.5, 0.0, -0.1, 0.3, 0.1, 0.2], 4)
    a = S.scenario_inference(cal4, plan, R)
    b = K.matrix_inference(cal4, R)
    assert a.cells == b.cells
    np.testing.assert_array_equal(a.cell_pvalues, b.cell_pvalues)
    assert a.matrix_pvalue == b.matrix_pvalue
    for name in ("cell_ci_lower", "cell_ci_upper", "matrix_ci_lower", "matrix_ci_upper"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-12)


def test_restricted_inference(cal4):
    plan = S.plan_scenario(S.ScenarioSpec(4, ((3, 1), (4, 2))))
    R = lower([0.5, 0.0, -0.1, 0.3, 0.1, 0.2], 4)
    res = S.scenario_inference(cal4, plan, R)
    res.check()
    assert set(res.cells) == set(plan.spec.targets) | set(plan.forced_extras)
    m = len(res.cells)
    assert res.simultaneous_alphas[0] == pytest.approx(1 - (1 - 0.025) ** (1 / m))
    for i, j in plan.frozen:
        for M in (res.cell_ci_lower, res.matrix_ci_upper):
            assert M[i - 1, j - 1] == pytest.approx(cal4.mean_matrix[i - 1, j - 1], abs=1e-12)
    for i, j in plan.spec.targets:
        assert res.matrix_ci_lower[i - 1, j - 1] <= res.cell_ci_lower[i - 1, j - 1]
        assert res.cell_ci_upper[i - 1, j - 1] <= res.matrix_ci_upper[i - 1, j - 1]
    json.dumps(res.to_dict())
    with pytest.raises(DimensionMismatch):
        S.scenario_inference(cal4, plan, np.eye(3))


def test_restricted_pvalue_monotone(cal4):
    # a fill-order prefix under the identity order: restricted cell p-values
    # are then a subset of the unrestricted ones
    spec = S.ScenarioSpec(4, ((4, 3), (3, 2), (4, 2)))
    plan = S.plan_scenario(spec)
    assert plan.order.tolist() == [0, 1, 2, 3]
    R = lower([0.5, 0.0, -0.1, 0.3, 0.1, 0.2], 4)
    res = S.scenario_inference(cal4, plan, R)
    full = K.matrix_inference(cal4, R)
    sub = [full.cells.index(c) for c in res.cells]
    np.testing.assert_array_equal(res.cell_pvalues, full.cell_pvalues[sub])
    assert res.matrix_pvalue <= full.matrix_pvalue


def test_scenario_quantile(cal4):
    plan = S.plan_scenario(S.ScenarioSpec(4, ((4, 3), (4, 2))))
    C = np.full((4, 4), np.nan)
    C[3, 2] = C[2, 3] = 0.8
    C[3, 1] = C[1, 3] = 0.8
    Q = S.scenario_quantile(cal4, plan, C)
    assert mx.is_positive_definite(Q)
    for i, j in plan.frozen:
        assert Q[i - 1, j - 1] == pytest.approx(cal4.mean_matrix[i - 1, j - 1], abs=1e-12)
    # the quantile of the cdf is the value observed at that position
    assert Q[3, 2] > cal4.mean_matrix[3, 2]
    C[3, 2] = 1.5
    with pytest.raises(ValueError):
        S.scenario_quantile(cal4, plan, C)


def test_scenario_two_sample(cal4):
    plan = S.plan_scenario(S.ScenarioSpec(4, ((4, 3),)))
    res = S.scenario_two_sample(cal4, cal4, plan, N=2000, seed=2)
    assert res.cells == [(4, 3)] and res.cell_pvalues[0] > 0.01
    other = K.calibrate(gaussian_spec(R4), MeasureSpec("pearson"), 80, 500, seed=6)
    res2 = S.scenario_two_sample(cal4, other, plan, N=500, seed=2)
    assert len(res2.cell_pvalues) == 1
