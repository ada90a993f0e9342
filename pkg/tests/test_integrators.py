import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltem.brownian import brownian_batch, coarsen, generate_brownian
from ltem.errors import ConfigurationError, ExponentOverflowError
from ltem.integrators import ltem1d_solve, ltem_paths, ltem_solve, ltem_step, tem_paths, tem_solve
from ltem.model import SdeModel, get_model, make_lv_model
from ltem.truncation import TruncationPolicy, default_scalar_policy, exponential_policy, get_policy

import oracle


def _zero_model(d=2, m=2):
    return SdeModel("zero", d, m,
                    drift=lambda y: np.zeros_like(y),
                    diffusion=lambda y: np.zeros((y.shape[0], d, m)))


def test_step_hand_arithmetic_near_origin():
    lv = get_model("lv2")
    pol = get_policy("ex1-eps0.25")
    # Truncation inactive; the hand value is the z -> 0 limit of the step.
    out = ltem_step(lv, pol, [1e-12, 1e-12], 0.25, [0.1, -0.2])
    assert out == pytest.approx([-0.525, -0.9], abs=1e-10)
    z = np.array([0.01, -0.02])
    want = z + np.array([1.5 - 4 * math.exp(0.01), 2 - 4 * math.exp(-0.02)]) * 0.25 \
        + np.array([0.1, 2 * -0.2])
    assert ltem_step(lv, pol, z, 0.25, [0.1, -0.2]) == pytest.approx(want, rel=1e-14)


def test_step_zero_branch_at_origin():
    lv = get_model("lv2")
    pol = get_policy("ex1-eps0.25")
    assert ltem_step(lv, pol, [0.0, 0.0], 0.25, [0.1, -0.2]).tolist() == [0.0, 0.0]


def test_drift_root_is_fixed_point():
    lv = get_model("lv2")
    pol = get_policy("ex1-eps0.25")
    z = np.array([math.log(0.375), math.log(0.5)])
    out = ltem_step(lv, pol, z, 0.01, [0.0, 0.0])
    assert np.all(np.abs(out - z) <= 1e-16)


def test_zero_model_is_constant():
    pol = get_policy("ex1-eps0.25")
    z = np.array([0.3, -1.2])
    assert np.array_equal(ltem_step(_zero_model(), pol, z, 0.1, [5.0, -3.0]), z)


def test_step_overflow_raises():
    explode = SdeModel("explode", 1, 1,
                       drift=lambda y: 1e308 * y,
                       diffusion=lambda y: np.zeros((y.shape[0], 1, 1)))
    pol = exponential_policy(1.0, 0.25)
    with pytest.raises(ExponentOverflowError):
        ltem_step(explode, pol, [0.5], 1.0, [0.0])


def test_solve_empty_and_shapes():
    lv = get_model("lv2")
    pol = get_policy("ex1-eps0.25")
    traj = ltem_solve(lv, pol, (1, 2), 1.0, 0, np.zeros((2, 0)))
    assert traj.states.tolist() == [[1.0, 2.0]]
    assert traj.grid.tolist() == [0.0]
    with pytest.raises(ConfigurationError):
        ltem_solve(lv, pol, (1, 2), 1.0, 4, np.zeros((2, 3)))


def test_solve_grid_and_positivity():
    lv = get_model("lv2-fig2")
    pol = get_policy("lv-eps0.25", lv)
    noise = coarsen(generate_brownian(1, 0, 2, 2.0**-8, 512), 4)
    traj = ltem_solve(lv, pol, lv.y0, 2.0, 128, noise)
    assert traj.grid[0] == 0 and traj.grid[-1] == 2.0 and len(traj.grid) == 129
    assert np.all(traj.states > 0)
    assert np.array_equal(traj.states, np.exp(traj.log_states))


@pytest.mark.parametrize("seed", range(10))
def test_matches_straight_line_oracle(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    model = oracle.random_lv(rng, d)
    pol = exponential_policy(model.log_envelope, float(rng.uniform(0.1, 0.45)))
    dt = 2.0 ** -int(rng.integers(3, 9))
    noise = rng.normal(scale=math.sqrt(dt), size=(d, 100))
    traj = ltem_solve(model, pol, model.y0, 100 * dt, 100, noise)
    want = oracle.solve(model, pol.radius(dt), model.y0, dt, noise)
    assert np.array_equal(traj.log_states, want)


def test_oracle_on_shared_noise_model():
    lv3 = get_model("lv3")
    pol = get_policy("ex2")
    dt = 2.0**-7
    noise = generate_brownian(9, 0, 1, dt, 100).increments
    traj = ltem_solve(lv3, pol, lv3.y0, 100 * dt, 100, noise)
    assert np.array_equal(traj.log_states, oracle.solve(lv3, pol.radius(dt), lv3.y0, dt, noise))


def test_inactive_truncation_equals_plain_log_euler():
    lv = get_model("lv2")
    pol = get_policy("ex1-eps0.25")
    dt = 2.0**-8
    noise = generate_brownian(4, 0, 2, dt, 256).increments * 0.1
    traj = ltem_solve(lv, pol, lv.y0, 1.0, 256, noise)
    assert np.max(np.linalg.norm(traj.log_states, axis=1)) <= pol.radius(dt)
    plain = oracle.solve(lv, math.inf, lv.y0, dt, noise)
    assert np.array_equal(traj.log_states, plain)


def test_batch_paths_match_single_solves():
    lv3 = get_model("lv3")
    pol = get_policy("ex2")
    dt = 2.0**-6
    inc = brownian_batch(3, range(4), 1, dt, 64)
    z0 = np.tile(np.log(lv3.y0), (4, 1))
    for k, z, failed in ltem_paths(lv3, pol, z0, dt, inc):
        pass
    for p in range(4):
        traj = ltem_solve(lv3, pol, lv3.y0, 1.0, 64, inc[:, p, :].T)
        assert np.array_equal(traj.log_states[-1], z[p])


def test_failed_paths_are_frozen():
    # Drift pushes any path with y > 1 out of the safe range in one step.
    model = SdeModel("jump", 1, 1,
                     drift=lambda y: np.where(y > 1, 1e306, 0.0),
                     diffusion=lambda y: np.zeros((y.shape[0], 1, 1)))
    pol = exponential_policy(1e307, 0.25, eta_scale=1e308)
    z0 = np.array([[0.5], [-0.5]])
    inc = np.zeros((3, 2, 1))
    out = [(k, z.copy(), f.copy()) for k, z, f in ltem_paths(model, pol, z0, 1.0, inc)]
    k, z, failed = out[-1]
    assert failed.tolist() == [1, -1]
    assert z.tolist() == [[0.5], [-0.5]]


def test_ltem1d_matches_multi_with_same_radius():
    lv1 = get_model("lv1")
    scalar = get_policy("scalar-default", lv1)
    # Same psi and eta under the multi regime, so the radii agree bit for bit.
    multi = TruncationPolicy(scalar.psi, scalar.psi_inv, scalar.eta, 1e9, regime="multi")
    dt = 2.0**-8
    assert multi.radius(dt) == scalar.radius(dt)
    noise = generate_brownian(2, 0, 1, dt, 256).increments
    a = ltem1d_solve(lv1, scalar, lv1.y0, 1.0, 256, noise)
    c = ltem_solve(lv1, multi, lv1.y0, 1.0, 256, noise)
    assert np.array_equal(a.log_states, c.log_states)
    assert np.array_equal(a.log_states, oracle.solve(lv1, scalar.radius(dt), lv1.y0, dt, noise))
    assert a.scheme == "ltem1d" and c.scheme == "ltem"


def test_ltem1d_guards():
    lv1 = get_model("lv1")
    with pytest.raises(ConfigurationError):
        ltem1d_solve(get_model("lv2"), default_scalar_policy(1.0, 1, 0), (1, 2), 1.0, 1, np.zeros((2, 1)))
    with pytest.raises(ConfigurationError):
        ltem1d_solve(lv1, get_policy("ex1-eps0.25"), (1,), 1.0, 1, np.zeros((1, 1)))
    with pytest.raises(ConfigurationError):
        ltem_solve(lv1, get_policy("scalar-default", lv1), (1,), 1.0, 1, np.zeros((1, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 3.0), st.floats(0.5, 5.0))
def test_scalar_gbm_positivity(seed, y0, mu):
    gbm = make_lv_model([0.5], [[0.0]], [mu], y0=(y0,))
    pol = default_scalar_policy(max(1.0, mu * mu), 1, 0)
    noise = generate_brownian(seed, 0, 1, 2.0**-6, 128).increments
    traj = ltem1d_solve(gbm, pol, (y0,), 2.0, 128, noise)
    assert np.all(traj.states > 0)


def test_single_step_hand_arithmetic_scalar():
    lv1 = get_model("lv1")
    pol = get_policy("scalar-default", lv1)
    z = 0.05
    traj = ltem1d_solve(lv1, pol, (math.exp(z),), 0.25, 1, np.array([[0.1]]))
    want = z + (1.5 - 4 * math.exp(z)) * 0.25 + 0.1
    assert traj.log_states[1, 0] == pytest.approx(want, rel=1e-14)


def test_tem_constant_for_zero_model():
    traj = tem_solve(_zero_model(), (1.0, 2.0), 1.0, 8, np.ones((2, 8)), get_policy("ex1-eps0.25"))
    assert np.all(traj.states == [1.0, 2.0])
    assert traj.log_states is None


def test_tem_goes_negative_on_fig2_model():
    lv = get_model("lv2-fig2")
    pol = get_policy("lv-eps0.25", lv)
    dt = 2.0**-5
    inc = brownian_batch(42, range(200), 2, dt, 64)
    lowest = np.inf
    for _, y, _ in tem_paths(lv, pol, np.tile(lv.y0, (200, 1)), dt, inc):
        lowest = min(lowest, float(y.min()))
    assert lowest < 0


def test_tem_first_exit_for_non_extendable_model():
    model = SdeModel("shift", 1, 1,
                     drift=lambda y: -np.ones_like(y),
                     diffusion=lambda y: np.zeros((y.shape[0], 1, 1)),
                     extends_to_real=False)
    pol = exponential_policy(1.0, 0.25)
    traj = tem_solve(model, (1.5,), 4.0, 4, np.zeros((1, 4)), pol)
    assert traj.states[:, 0].tolist() == [1.5, 0.5, -0.5, -0.5, -0.5]
    assert traj.failed_at is None


def test_tem_flags_non_finite():
    model = SdeModel("blow", 1, 1,
                     drift=lambda y: np.full_like(y, np.inf),
                     diffusion=lambda y: np.zeros((y.shape[0], 1, 1)))
    traj = tem_solve(model, (1.0,), 1.0, 2, np.zeros((1, 2)), exponential_policy(1.0, 0.25))
    assert traj.failed_at == 1
    assert np.all(np.isfinite(traj.states))


def test_path_coupling_block_sums():
    path = generate_brownian(11, 0, 2, 2.0**-10, 1024)
    fine = coarsen(path, 4)
    coarse = coarsen(path, 8)
    assert np.array_equal(fine[:, 0::2] + fine[:, 1::2], coarse)
