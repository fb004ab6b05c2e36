"""Flow-path identities and exact-velocity sampler reconstruction."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from streamfx import flow
from streamfx import tensor as T
from streamfx.rng import stream

N_DRAWS = 100


def test_interpolation_endpoints_and_x0_identity():
    for i in range(N_DRAWS):
        rng = stream(31, "flow-ident", i)
        z0 = rng.standard_normal((4, 6)).astype(np.float32)
        eps = rng.standard_normal((4, 6)).astype(np.float32)
        t = flow.sample_time(rng)
        z_t = flow.interpolate(z0, eps, t)
        # endpoint checks
        np.testing.assert_allclose(flow.interpolate(z0, eps, 0.0), z0, atol=0)
        np.testing.assert_allclose(flow.interpolate(z0, eps, 1.0), eps, atol=0)
        # recovering x0 from the true velocity inverts the interpolation
        v = flow.velocity_target(z0, eps)
        np.testing.assert_allclose(flow.x0_from_velocity(z_t, v, t), z0,
                                   rtol=1e-6, atol=1e-6)
        # a single Euler step with the true velocity lands on the path
        t2 = flow.sample_time(rng)
        np.testing.assert_allclose(flow.euler_step(z_t, v, t, t2),
                                   flow.interpolate(z0, eps, t2),
                                   rtol=1e-6, atol=1e-6)


def test_sample_time_respects_bounds():
    rng = stream(32, "tbounds")
    draws = np.array([flow.sample_time(rng) for _ in range(5000)])
    assert draws.min() >= flow.TIME_LO and draws.max() <= flow.TIME_HI
    assert 0.45 < draws.mean() < 0.55


def _exact_velocity(z, z0, t):
    """Velocity field whose integral curve through z_t hits z0 at t=0."""
    return (z - z0) / t


def test_multi_step_euler_with_exact_velocity_reconstructs():
    schedule = [0.999, 0.937, 0.833, 0.624, 0.0]
    for i in range(20):
        rng = stream(33, "recon", i)
        z0 = rng.standard_normal((3, 8)).astype(np.float32)
        eps = rng.standard_normal((3, 8)).astype(np.float32)
        z = flow.interpolate(z0, eps, schedule[0])
        for t, t_next in zip(schedule, schedule[1:]):
            z = flow.euler_step(z, _exact_velocity(z, z0, t), t, t_next)
        np.testing.assert_allclose(z, z0, atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 0.999, allow_nan=False), min_size=1, max_size=8),
       st.integers(0, 10_000))
def test_reconstruction_holds_for_any_decreasing_schedule(times, seed):
    schedule = sorted(set(round(t, 6) for t in times), reverse=True) + [0.0]
    rng = stream(34, "recon-any", seed)
    z0 = rng.standard_normal((2, 4)).astype(np.float64)
    eps = rng.standard_normal((2, 4)).astype(np.float64)
    z = flow.interpolate(z0, eps, schedule[0])
    for t, t_next in zip(schedule, schedule[1:]):
        z = flow.euler_step(z, _exact_velocity(z, z0, t), t, t_next)
    np.testing.assert_allclose(z, z0, atol=1e-9)


def test_flow_ops_work_on_tensors_with_gradients():
    rng = stream(35, "flow-grad")
    z0 = T.Tensor(rng.standard_normal((2, 3)).astype(np.float32), requires_grad=True)
    eps = T.Tensor(rng.standard_normal((2, 3)).astype(np.float32))
    z_t = flow.interpolate(z0, eps, 0.3)
    out = flow.euler_step(z_t, flow.velocity_target(z0, eps), 0.3, 0.1)
    assert isinstance(out, T.Tensor)
    T.sum_all(out).backward()
    # d out / d z0 = (1 - 0.3) + (0.1 - 0.3) * (-1) = 0.9 per element
    np.testing.assert_allclose(z0.grad, 0.9, rtol=1e-6)
