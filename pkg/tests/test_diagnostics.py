import json
import math
import random

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import bound_constants_mp, dobrushin_partitions
from strategies import small_models

from fwpomdp import diagnostics as dg
from fwpomdp.errors import DegenerateMetric, MalformedKernel, ModelError, PreconditionViolated
from fwpomdp.model import STATED_ALPHA, build_machine_repair, machine_repair_case

EXAMPLE_3x3 = np.array([[1 / 3, 1 / 3, 1 / 3], [0.0, 0.5, 0.5], [0.75, 0.0, 0.25]])

# printed coefficient rows of the Gaussian tables (shared by both level counts)
PRINTED_DELTA_T = (0.50, 0.48, 0.44, 0.40, 0.36, 0.32, 0.27, 0.21, 0.15, 0.10, 0.05, 0.01, 0.00)
PRINTED_DELTA_Q = (None, 0.1, 0.21, 0.32, 0.44, 0.54, 0.64, 0.76, 0.86, 0.90, 0.96, 0.99, 1.00)


@st.composite
def stochastic_matrices(draw, max_rows=5, max_cols=5):
    r = draw(st.integers(1, max_rows))
    c = draw(st.integers(1, max_cols))
    w = np.array(draw(st.lists(st.lists(st.floats(0, 1), min_size=c, max_size=c), min_size=r, max_size=r)))
    w[w.sum(axis=1) <= 1e-9, 0] = 1.0
    return w / w.sum(axis=1, keepdims=True)


# --- dobrushin ------------------------------------------------------------------

def test_dobrushin_worked_example():
    assert dg.dobrushin(EXAMPLE_3x3) == 0.25


def test_dobrushin_trivial_cases():
    assert dg.dobrushin(np.eye(4)) == 0.0
    assert dg.dobrushin(np.tile([0.2, 0.3, 0.5], (3, 1))) == pytest.approx(1.0, abs=1e-15)
    assert dg.dobrushin([[0.4, 0.6]]) == 1.0


def test_dobrushin_rejects_malformed():
    with pytest.raises(MalformedKernel):
        dg.dobrushin([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(MalformedKernel):
        dg.dobrushin([[1.5, -0.5], [0.5, 0.5]])
    with pytest.raises(MalformedKernel):
        dg.dobrushin(np.zeros((0, 2)))
    with pytest.raises(MalformedKernel):
        dg.dobrushin([0.5, 0.5])


@settings(max_examples=1000)
@given(stochastic_matrices(max_rows=4, max_cols=4))
def test_dobrushin_matches_partition_infimum(K):
    assert dg.dobrushin(K) == pytest.approx(dobrushin_partitions(K), abs=1e-12)
    assert 0.0 <= dg.dobrushin(K) <= 1.0


@settings(max_examples=1000)
@given(stochastic_matrices(), st.randoms(use_true_random=False))
def test_dobrushin_permutation_invariance(K, rnd):
    rows = list(range(K.shape[0]))
    cols = list(range(K.shape[1]))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    assert dg.dobrushin(K[rows][:, cols]) == pytest.approx(dg.dobrushin(K), abs=1e-15)


@settings(max_examples=1000)
@given(stochastic_matrices(max_cols=6), st.data())
def test_merging_columns_never_lowers_dobrushin(K, data):
    if K.shape[1] < 2:
        return
    i, j = sorted(data.draw(st.lists(st.integers(0, K.shape[1] - 1), min_size=2, max_size=2, unique=True)))
    merged = np.delete(K, j, axis=1)
    merged[:, i] += K[:, j]
    assert dg.dobrushin(merged) >= dg.dobrushin(K) - 1e-12


# --- alpha and Lipschitz constants --------------------------------------------

def test_alpha_machine_repair_case1(case1):
    np.testing.assert_allclose(dg.delta_T_per_action(case1), [0.1, 0.2], atol=1e-15)
    assert dg.dobrushin(case1.channel) == pytest.approx(0.6, abs=1e-15)
    assert dg.alpha(case1) == pytest.approx(0.9 * 1.4, abs=1e-14)


def test_alpha_cases_two_and_three():
    assert dg.alpha(machine_repair_case(2)) == pytest.approx(0.9 * 1.98, abs=1e-14)
    # case 3: min(0.3, 0.4) = 0.3, so alpha = 0.7 * 1.4
    assert dg.alpha(machine_repair_case(3)) == pytest.approx(0.98, abs=1e-14)


def test_alpha_special_kernels(case1):
    mixing = case1.replace(transition=np.tile([0.3, 0.7], (2, 2, 1)))
    assert dg.alpha(mixing) == pytest.approx(0.0, abs=1e-15)
    noiseless = case1.replace(channel=np.eye(2))
    assert dg.alpha(noiseless) == pytest.approx(2 * (1 - 0.1), abs=1e-15)


@settings(max_examples=1000)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_alpha_monotone_in_both_coefficients(dt1, dt2, dq1, dq2):
    lo_t, hi_t = sorted((dt1, dt2))
    lo_q, hi_q = sorted((dq1, dq2))
    f = lambda dt, dq: (1 - dt) * (2 - dq)  # noqa: E731
    assert f(hi_t, lo_q) <= f(lo_t, lo_q) + 1e-15
    assert f(lo_t, hi_q) <= f(lo_t, lo_q) + 1e-15
    # the same through models: 2x2 kernels with prescribed coefficients
    m = build_machine_repair(0.5 * (1 - lo_q), 0.0, 0.0)
    m = m.replace(transition=np.array([[[1.0, 0.0], [lo_t, 1 - lo_t]]] * 2))
    m2 = m.replace(transition=np.array([[[1.0, 0.0], [hi_t, 1 - hi_t]]] * 2))
    assert dg.alpha(m2) <= dg.alpha(m) + 1e-15


def test_alpha_X_machine_repair(case1):
    # idle rows (1, 0) and (0.1, 0.9) differ by 1.8 in L1
    assert dg.alpha_X(case1) == pytest.approx(1.8, abs=1e-15)
    assert dg.alpha_X(case1) <= 2.0 / 1.0


def test_alpha_X_identical_rows(case1):
    m = case1.replace(transition=np.tile([0.3, 0.7], (2, 2, 1)))
    assert dg.alpha_X(m) == 0.0


def test_alpha_X_degenerate_metric(case1):
    m = case1.replace(state_metric=np.zeros((2, 2)))
    with pytest.raises(DegenerateMetric):
        dg.alpha_X(m)


@settings(max_examples=200)
@given(small_models())
def test_alpha_X_diameter_bound(model):
    d = model.state_metric[~np.eye(model.n_states, dtype=bool)]
    assert 0.0 <= dg.alpha_X(model) <= 2.0 / d.min() + 1e-12


def test_alpha_c_machine_repair(case1):
    # cost rows (1, 6) and (0, 5): the largest per-action gap is 1 at unit distance
    assert dg.alpha_c(case1) == pytest.approx(1.0)


def test_alpha_Z_options_case1(case1):
    o = dg.alpha_Z_options(case1)
    assert o.i == pytest.approx(3 * 2.8)
    assert o.ii == pytest.approx((3 - 1.2) * 2.8)
    assert o.iii == 3.0
    assert o.iv == pytest.approx((3 - 1.2) * 0.9)
    assert o.default == min(o.i, o.ii)
    assert o.get("iv") == o.iv
    with pytest.raises(ModelError):
        o.get("v")


def test_alpha_Z_options_formula_collapses(case1):
    perfect_overlap = case1.replace(channel=np.full((2, 2), 0.5))
    o = dg.alpha_Z_options(perfect_overlap)
    ax = dg.alpha_X(perfect_overlap)
    assert o.ii == pytest.approx(1 + ax)
    assert o.iv == pytest.approx(1 - 0.1)
    flat = case1.replace(transition=np.tile([0.3, 0.7], (2, 2, 1)))
    assert dg.alpha_Z_options(flat).i == 3.0


# --- bound constants --------------------------------------------------------------

def admissible_tuple(rng):
    az = float(rng.uniform(0, 3))
    beta = float(rng.uniform(0.001, 0.999) * dg.beta_threshold(az))
    return beta, az, float(rng.uniform(0, 5)), float(rng.uniform(0, 5))


def test_bound_constants_match_high_precision_oracle():
    rng = np.random.default_rng(123)
    for _ in range(100):
        beta, az, ac, cs = admissible_tuple(rng)
        got = dg.bound_constant_K(beta, az, ac, cs)
        ref = bound_constants_mp(beta, az, ac, cs)
        for g, r in zip((got.J_BL_bound, got.K0, got.K0_hat, got.K), ref):
            assert g == pytest.approx(r, rel=1e-12)


def test_bound_constants_worked_tuple():
    got = dg.bound_constant_K(0.1, 1.0, 1.0, 1.0)
    ref = bound_constants_mp(0.1, 1.0, 1.0, 1.0)
    assert got.K == pytest.approx(ref[3], rel=1e-14)


def test_bound_constants_zero_alpha_Z():
    got = dg.bound_constant_K(0.5, 0.0, 2.0, 3.0)
    assert got.J_BL_bound == pytest.approx(3.0 / 0.5 + 5.0)
    assert got.K0 == pytest.approx(2.0 / 0.5)
    assert math.isfinite(got.K)


def test_precondition_raised_exactly_at_threshold():
    rng = np.random.default_rng(7)
    for _ in range(100):
        az = float(rng.uniform(0.01, 3))
        thr = dg.beta_threshold(az)
        beta = float(rng.uniform(0.01, 0.99))
        if beta >= thr:
            with pytest.raises(PreconditionViolated) as info:
                dg.bound_constant_K(beta, az, 1.0, 1.0)
            assert info.value.margin == pytest.approx(beta - thr)
        else:
            assert dg.bound_constant_K(beta, az, 1.0, 1.0).K > 0
    az = 1.0
    with pytest.raises(PreconditionViolated):
        dg.bound_constant_K(dg.beta_threshold(az), az, 1.0, 1.0)
    dg.bound_constant_K(math.nextafter(dg.beta_threshold(az), 0.0), az, 1.0, 1.0)


def test_bound_constants_reject_bad_inputs():
    with pytest.raises(ModelError):
        dg.bound_constant_K(1.0, 0.1, 1.0, 1.0)
    with pytest.raises(ModelError):
        dg.bound_constant_K(0.1, -0.1, 1.0, 1.0)


@settings(max_examples=1000)
@given(
    st.one_of(st.just(0.0), st.floats(1e-6, 3.0)),
    st.one_of(st.just(0.0), st.floats(1e-6, 5.0)),
    st.one_of(st.just(0.0), st.floats(1e-6, 5.0)),
    st.floats(0.01, 0.98),
    st.floats(0.01, 0.99),
)
def test_K_positive_and_increasing_towards_threshold(az, ac, cs, f1, f2):
    thr = dg.beta_threshold(az)
    b1, b2 = sorted((f1 * thr, f2 * thr))
    k1 = dg.bound_constant_K(b1, az, ac, cs).K
    k2 = dg.bound_constant_K(b2, az, ac, cs).K
    # with alpha_Z = alpha_c = 0 the leading term vanishes and K = 0
    if az > 0 and cs > 0 or ac > 0:
        assert k1 > 0
    else:
        assert k1 == 0.0
    assert k2 >= k1 * (1 - 1e-12)


def mixing_with_beta(model, beta):
    return model.replace(discount=beta)


def test_window_error_bounds_shape(mixing_model):
    m = mixing_with_beta(mixing_model, 0.05)
    a = dg.alpha(m)
    assert a < 1
    assert dg.theorem_bounds is dg.window_error_bounds
    rows = dg.window_error_bounds(m, range(6))
    K = dg.bound_constant_K(0.05, dg.alpha_Z_options(m).default, dg.alpha_c(m), m.cost_sup).K
    assert rows[0] == (0, K, K)
    for (n0, b5, b6), (n1, c5, c6) in zip(rows, rows[1:]):
        assert c5 < b5 and c6 < b6
        assert c5 / b5 == pytest.approx(a, rel=1e-12)
        assert c6 / b6 == pytest.approx(a * 0.05, rel=1e-12)


def test_window_error_bounds_propagate_precondition(case1):
    with pytest.raises(PreconditionViolated):
        dg.window_error_bounds(case1, range(3))


def test_uniform_bounds(case1):
    assert dg.uniform_bounds(case1, 1.0, 0.0) == (0.0, 0.0)
    v, r = dg.uniform_bounds(case1, 1.0, 0.7)
    # alpha_Z = 1 collapses the value bound to ||c|| L / (1 - beta)^3
    assert v == pytest.approx(case1.cost_sup * 0.7 / 0.2 ** 3)
    assert r / v == pytest.approx(2 / 0.2)
    with pytest.raises(PreconditionViolated):
        dg.uniform_bounds(case1, 1.25, 0.5)
    with pytest.raises(ModelError):
        dg.uniform_bounds(case1, 1.0, 2.5)


@settings(max_examples=1000)
@given(st.floats(0.0, 1.2), st.floats(0.0, 2.0), st.floats(0.05, 0.95))
def test_uniform_bounds_ratio(az, L, beta):
    m = machine_repair_case(1)
    if beta * az >= 1:
        return
    v, r = dg.uniform_bounds(m, az, L, beta=beta)
    assert r == pytest.approx(v * 2 / (1 - beta), rel=1e-12, abs=1e-300)


# --- Gaussian example ---------------------------------------------------------------

def test_normal_cdf_values():
    assert dg.normal_cdf(0.0) == 0.5
    with mpmath.workdps(30):
        for x in np.linspace(-8, 8, 161):
            ref = float(mpmath.ncdf(x))
            assert dg.normal_cdf(float(x)) == pytest.approx(ref, abs=1e-7)
    assert dg.normal_cdf(-1.0) == pytest.approx(0.158655, abs=1e-6)


@settings(max_examples=1000)
@given(st.floats(-40, 40))
def test_normal_cdf_symmetry(x):
    assert dg.normal_cdf(x) + dg.normal_cdf(-x) == pytest.approx(1.0, abs=2e-7)
    assert 0.0 <= dg.normal_cdf(x) <= 1.0


def test_gaussian_examples():
    g = dg.gaussian_dobrushin(1.0, 1.65, 2)
    assert g.delta_T == pytest.approx(0.32, abs=0.005)
    assert g.delta_Q_hat == pytest.approx(0.54, abs=0.01)
    assert g.alpha_condition_holds
    g3 = dg.gaussian_dobrushin(1.0, 1.54, 3)
    assert g3.delta_Q_hat == pytest.approx(0.54, abs=0.01)
    with pytest.raises(ModelError):
        dg.gaussian_dobrushin(0.0, 1.0)
    with pytest.raises(ModelError):
        dg.gaussian_dobrushin(1.0, 1.0, obs_levels=4)


@pytest.mark.parametrize("levels", [2, 3])
def test_gaussian_table_matches_printed_rows(levels):
    rows = dg.gaussian_table(levels)
    assert [r.ratio_t for r in rows] == list(dg.GAUSSIAN_RATIOS_T)
    for r, t, q in zip(rows, PRINTED_DELTA_T, PRINTED_DELTA_Q):
        assert abs(r.delta_T - t) <= 0.005
        if q is None:
            assert r.delta_Q_hat is None and r.ratio_q_min_exact is None and r.condition_holds
        else:
            assert abs(r.delta_Q_hat - q) <= 0.01


@pytest.mark.parametrize("levels", [2, 3])
def test_min_channel_ratio_is_the_boundary(levels):
    for rt in dg.GAUSSIAN_RATIOS_T[1:]:
        r = dg.min_channel_ratio(rt, levels)
        assert math.isfinite(r)
        assert dg.gaussian_dobrushin(rt, r * 1.001, levels).alpha_condition_holds
        assert not dg.gaussian_dobrushin(rt, r * 0.999, levels).alpha_condition_holds


def test_min_channel_ratio_any_and_none():
    assert dg.min_channel_ratio(1.6) is None
    # a tiny dynamics noise needs delta(Q) above its supremum: impossible
    assert dg.min_channel_ratio(0.05) == math.inf


# --- report --------------------------------------------------------------------------

def test_report_case1_has_no_constants(case1):
    rep = dg.diagnose(case1)
    assert rep.alpha == pytest.approx(1.26)
    assert rep.K is None and rep.K0 is None and rep.per_N_bounds == []
    assert "beta < 1/(4 alpha_Z + 1)" in rep.K_reason
    assert rep.beta_threshold == pytest.approx(1 / (4 * rep.alpha_Z_selected + 1))
    assert rep.alpha_ctilde == pytest.approx(rep.alpha_c + rep.cost_sup)
    json.dumps(rep.to_dict())


def test_report_flags_stated_alpha_mismatch():
    rep = dg.diagnose(machine_repair_case(3), asserted_alpha=STATED_ALPHA[3])
    assert rep.alpha == pytest.approx(0.98)
    assert rep.alpha_discrepancy
    assert any("disagrees" in n for n in rep.notes)
    assert not dg.diagnose(machine_repair_case(3), asserted_alpha=0.98).alpha_discrepancy


def test_report_with_admissible_beta(mixing_model):
    rep = dg.diagnose(mixing_model, beta=0.05, N_max=4)
    assert rep.K is not None and rep.K > 0
    assert [n for n, _, _ in rep.per_N_bounds] == list(range(5))
    assert rep.per_N_bounds[0][1] == rep.K
    assert rep.beta_threshold_alt == pytest.approx(1 / (4 * rep.alpha_Z_selected + 1))
    assert all(0 <= v <= 1 for v in rep.delta_T_per_action + [rep.delta_Q])


def test_report_alpha_Z_choice(mixing_model):
    rep = dg.diagnose(mixing_model, alpha_Z_choice="iv", beta=0.05)
    assert rep.alpha_Z_choice == "iv"
    assert rep.alpha_Z_selected == dg.alpha_Z_options(mixing_model).iv


def test_alt_threshold_is_informational(case1):
    rep = dg.diagnose(case1, loss_sup=0.0)
    assert rep.beta_threshold_alt == pytest.approx(1 / (2 * rep.alpha_Z_selected + 1))
    assert rep.K is None


def test_worked_example_as_one_action_model(case1):
    m = case1.replace(
        transition=EXAMPLE_3x3[None],
        channel=np.full((3, 1), 1.0),
        cost=np.zeros((3, 1)),
        state_metric=1.0 - np.eye(3),
        prior=np.full(3, 1 / 3),
        reference_prior=np.full(3, 1 / 3),
    )
    assert dg.diagnose(m).delta_T_min == 0.25


def test_random_coefficients_in_range():
    rnd = random.Random(0)
    for _ in range(50):
        n = rnd.randint(2, 5)
        K = np.array([[rnd.random() for _ in range(n)] for _ in range(n)])
        K /= K.sum(axis=1, keepdims=True)
        assert 0.0 <= dg.dobrushin(K) <= 1.0
