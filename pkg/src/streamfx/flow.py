"""Rectified-flow primitives on the straight path z_t = (1-t) z0 + t eps.

All helpers are plain arithmetic over either numpy arrays or autodiff
Tensors, so the sampler can run under gradient recording during on-policy
training and on raw arrays everywhere else.
"""

from __future__ import annotations

import numpy as np

__all__ = ["TIME_LO", "TIME_HI", "interpolate", "velocity_target",
           "x0_from_velocity", "euler_step", "sample_time", "noise_like"]

# training timesteps are drawn away from the endpoints, where x0-recovery
# (division by t) and the interpolation itself are ill-conditioned
TIME_LO = 0.001
TIME_HI = 0.999


def interpolate(z0, eps, t: float):
    """Point on the straight noising path at time ``t``."""
    return z0 * (1.0 - t) + eps * t


def velocity_target(z0, eps):
    """Ground-truth velocity of the straight path (constant in ``t``)."""
    return eps - z0


def x0_from_velocity(z_t, v, t: float):
    """Recover the clean endpoint implied by velocity ``v`` at time ``t``."""
    return z_t - v * t


def euler_step(z_t, v, t: float, t_next: float):
    """One integrator step from ``t`` to ``t_next`` along velocity ``v``."""
    return z_t + v * (t_next - t)


def sample_time(rng: np.random.Generator) -> float:
    return float(rng.uniform(TIME_LO, TIME_HI))


def noise_like(shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    return rng.standard_normal(shape).astype(dtype)
