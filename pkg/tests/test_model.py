import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltem.errors import ConfigurationError, DomainError
from ltem.model import (
    AssumptionParams,
    SdeModel,
    assumption_slacks,
    check_assumptions,
    eval_diffusion,
    eval_drift,
    get_model,
    make_lv3_model,
    make_lv_model,
    MODEL_NAMES,
)

positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


def test_lv2_drift_hand_value():
    lv = make_lv_model([2, 4], np.diag([-4.0, -4.0]), [1, 2])
    assert eval_drift(lv, [1.0, 1.0]).tolist() == [-2.0, 0.0]


def test_zero_lv_is_identically_zero():
    lv = make_lv_model([0, 0], np.zeros((2, 2)), [0, 0])
    assert eval_drift(lv, [1.0, 1.0]).tolist() == [0.0, 0.0]
    assert eval_diffusion(lv, [3.0, 5.0]).tolist() == [[0.0, 0.0], [0.0, 0.0]]


def test_lv2_diffusion_is_diagonal():
    lv = get_model("lv2")
    assert eval_diffusion(lv, [3.0, 5.0]).tolist() == [[3.0, 0.0], [0.0, 10.0]]


def test_lv3_hand_values():
    lv3 = make_lv3_model()
    assert eval_drift(lv3, [1.0, 1.0, 1.0]).tolist() == [-5.0, 20.0, 5.0]
    assert eval_drift(lv3, [0.5, 2.0, 1.0]).tolist() == [11.25, 20.0, 5.0]
    s = eval_diffusion(lv3, [1.0, 1.0, 1.0])
    assert s.shape == (3, 1)
    assert s[0, 0] == pytest.approx(7 + 3 * math.sin(1) / 4, rel=1e-15)
    assert s[0, 0] == pytest.approx(7.6311, abs=1e-4)
    assert s[1, 0] == pytest.approx(2.3, rel=1e-15)
    assert lv3.y0 == (0.5, 2.0, 1.0)


def test_presets_resolve():
    for name in MODEL_NAMES:
        model = get_model(name)
        assert len(model.y0) == model.d
        assert model.params is not None
    fig2 = get_model("lv2-fig2")
    assert eval_drift(fig2, [1.0, 1.0]).tolist() == [0.0, -2.0]
    with pytest.raises(ConfigurationError):
        get_model("nope")


@pytest.mark.parametrize("y", [[0.0, 1.0], [-1.0, 1.0], [np.nan, 1.0], [np.inf, 1.0]])
def test_domain_errors(y):
    lv = get_model("lv2")
    with pytest.raises(DomainError):
        eval_drift(lv, y)
    with pytest.raises(DomainError):
        eval_diffusion(lv, y)


def test_lv3_zero_component_is_a_domain_error():
    with pytest.raises(DomainError):
        eval_diffusion(make_lv3_model(), [0.0, 1.0, 1.0])


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        make_lv_model([1, 2], np.eye(3), [1, 1])


def test_params_validation():
    with pytest.raises(ConfigurationError):
        AssumptionParams(alpha=-1, beta=0, J=4, K=1, L1=1)
    with pytest.raises(ConfigurationError):
        AssumptionParams(alpha=1, beta=0, J=4, K=1, L1=1, p_star=2)
    p = AssumptionParams(alpha=1, beta=0, J=4, K=0.5, L1=1)
    assert p.moment_hypothesis()
    assert not AssumptionParams(alpha=2, beta=0, J=4, K=1, L1=1).moment_hypothesis()


@settings(max_examples=200, deadline=None)
@given(st.lists(positive, min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_lv_drift_matches_direct_formula(y, b, a):
    A = np.array(a).reshape(3, 3)
    lv = make_lv_model(b, A, [1, 1, 1])
    got = eval_drift(lv, y)
    for i in range(3):
        acc = b[i] + A[i, 0] * y[0] + A[i, 1] * y[1] + A[i, 2] * y[2]
        want = y[i] * acc
        # Same summation order as the direct formula, so within one ulp.
        assert abs(got[i] - want) <= np.spacing(abs(want))


@settings(max_examples=100, deadline=None)
@given(st.lists(positive, min_size=3, max_size=3))
def test_coefficients_are_deterministic(y):
    lv3 = make_lv3_model()
    assert np.array_equal(eval_drift(lv3, y), eval_drift(lv3, y))
    assert np.array_equal(eval_diffusion(lv3, y), eval_diffusion(lv3, y))


def test_lv2_assumptions_hold_in_sampled_form():
    lv = get_model("lv2")
    report = check_assumptions(lv, lv.params, n_samples=20000, seed=1)
    assert report.ok, list(report.lines())
    assert {c.name for c in report.clauses} == {
        "lipschitz", "monotonicity", "lower-boundary", "upper-boundary"}


def test_lv2_lower_boundary_on_grid():
    # y_i lambda_i - (K+1)/2 |sigma_i|^2 >= 0 below y_star, since b_i - (K+1)/2 mu_i^2 >= 0.
    lv = get_model("lv2")
    K = lv.params.K
    g = np.linspace(1e-6, 0.25, 400)
    other = np.geomspace(1e-3, 1e3, 50)
    Y1, Y2 = np.meshgrid(g, other)
    y = np.stack([Y1.ravel(), Y2.ravel()], axis=1)
    lam, sig = lv.drift(y), lv.diffusion(y)
    lhs = y[:, 0] * lam[:, 0] - 0.5 * (K + 1) * np.sum(sig[:, 0, :] ** 2, axis=1)
    assert np.all(lhs >= 0)


def _square_model():
    return SdeModel(
        "square", 1, 1,
        drift=lambda y: y * y,
        diffusion=lambda y: np.zeros((y.shape[0], 1, 1)),
    )


def test_understated_growth_is_falsified():
    params = AssumptionParams(alpha=0, beta=0, J=4, K=1, L1=1)
    report = check_assumptions(_square_model(), params, n_samples=2000)
    lip = next(c for c in report.clauses if c.name == "lipschitz")
    assert not lip.ok
    assert lip.witness is not None
    # Direct pair search oracle: |a^2 - b^2| / |a - b| = a + b exceeds 5 L1.
    (a,), (b,) = lip.witness
    assert a + b > 5 * params.L1


def test_identical_arguments_have_zero_left_sides():
    lv = get_model("lv2")
    a = np.array([[0.3, 7.0], [2.0, 0.01]])
    s = assumption_slacks(lv, lv.params, a, a)
    assert np.all(s["lipschitz"] == 0)
    assert np.all(s["monotonicity"] == 0)
