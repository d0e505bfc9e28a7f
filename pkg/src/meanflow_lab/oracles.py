"""Independent reference computations used to check the main code paths.

Nothing in here calls the autodiff engine or the RK4 integrator: finite
differences, Monte-Carlo posterior averages and closed forms only.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .flowcore import GaussianTask


def central_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of a scalar function by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def central_difference_jvp(f: Callable[..., np.ndarray], inputs, tangents, h: float = 1e-5) -> np.ndarray:
    """(f(x + h s) - f(x - h s)) / 2h for a list of inputs moved together."""
    plus = [np.asarray(x, dtype=np.float64) + h * np.asarray(s, dtype=np.float64) for x, s in zip(inputs, tangents)]
    minus = [np.asarray(x, dtype=np.float64) - h * np.asarray(s, dtype=np.float64) for x, s in zip(inputs, tangents)]
    return (np.asarray(f(*plus)) - np.asarray(f(*minus))) / (2.0 * h)


def rel_err(a, b, floor: float = 1e-8) -> float:
    """max |a - b| / max(|b|_inf, floor)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


def mc_posterior_velocity(task: GaussianTask, z, t: float, n: int = 1_000_000, rng=None) -> np.ndarray:
    """E[eps - x | z_t = z] by self-normalized importance weighting.

    Draws x from the data law; given x, z_t = z forces eps = (z - (1 - t) x) / t,
    and the weight is the noise density of that eps. Needs t > 0.
    """
    if not t > 0:
        raise ValueError("the importance-weighting oracle needs t > 0")
    rng = np.random.default_rng(0) if rng is None else rng
    z = np.asarray(z, dtype=np.float64)
    x = task.sample(rng, n)
    eps = (z[None, :] - (1.0 - t) * x) / t
    logw = -0.5 * np.sum(eps * eps, axis=1)
    w = np.exp(logw - logw.max())
    v = eps - x
    return (w[:, None] * v).sum(axis=0) / w.sum()


def gaussian_flow_map(task: GaussianTask, z_t, t, r) -> np.ndarray:
    """Exact z_r from z_t along the probability-flow ODE of Gaussian data.

    With w = z - (1 - s) m the ODE reads dw/ds = (d/ds log sigma(s)) w, where
    sigma(s)^2 = (1 - s)^2 std^2 + s^2, so w scales with sigma.
    """
    m = np.asarray(task.mean)
    z_t = np.asarray(z_t, dtype=np.float64)
    st = np.sqrt((1 - t) ** 2 * task.std ** 2 + t ** 2)
    sr = np.sqrt((1 - r) ** 2 * task.std ** 2 + r ** 2)
    return (1 - r) * m + (sr / st) * (z_t - (1 - t) * m)


def gaussian_average_velocity(task: GaussianTask, z_t, t: float, r: float) -> np.ndarray:
    return (gaussian_flow_map(task, z_t, t, r) - np.asarray(z_t)) / (r - t)
