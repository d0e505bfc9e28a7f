"""Linear noising path, Gaussian ground truth, (t, r) schedules, MeanFlow target and losses.

Time runs from data (t = 0) to noise (t = 1). A pair (t, r) always has
t >= r and a jump of the flow map moves z_t to z_r = z_t + (r - t) * u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import numcore as nc
from .velocity_net import VelocityNet, forward_u, forward_v


def _col(t, n: int) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 0:
        return np.full((n, 1), float(arr))
    return arr.reshape(n, 1)


def interpolate(x, eps, t):
    """z_t = (1 - t) x + t eps."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise nc.ShapeError("interpolate", x.shape, eps.shape)
    if x.ndim <= 1:
        t = float(t)
        return (1.0 - t) * x + t * eps
    tc = _col(t, x.shape[0])
    return (1.0 - tc) * x + tc * eps


def cond_velocity(x, eps):
    """Velocity of the straight path from ``x`` to ``eps``: eps - x, independent of t."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise nc.ShapeError("cond_velocity", x.shape, eps.shape)
    return eps - x


# Gaussian ground truth -----------------------------------------------------

@dataclass(frozen=True)
class GaussianTask:
    """Data ~ N(mean, std^2 I)."""

    mean: tuple[float, ...]
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"std must be positive, got {self.std}")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, rng: nc.Rng, n: int) -> np.ndarray:
        return np.asarray(self.mean) + self.std * rng.standard_normal((n, self.dim))

    def marginal_std(self, t) -> np.ndarray:
        """Per-coordinate std of z_t."""
        t = np.asarray(t, dtype=np.float64)
        return np.sqrt((1.0 - t) ** 2 * self.std ** 2 + t ** 2)


def analytic_marginal_velocity(task: GaussianTask, z, t):
    """E[eps - x | z_t = z] for Gaussian data on the linear path.

    (z_t, eps - x) are jointly Gaussian, so the regression is affine in z:
        v = -m + c(t) / s_z(t)^2 * (z - (1 - t) m),
        c(t) = t - (1 - t) std^2,   s_z(t)^2 = (1 - t)^2 std^2 + t^2.
    s_z^2 > 0 on all of [0, 1] because std > 0, so both ends are regular.
    """
    z = np.asarray(z, dtype=np.float64)
    m = np.asarray(task.mean)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any((t_arr < 0) | (t_arr > 1)):
        raise ValueError("t must lie in [0, 1]")
    if z.ndim == 2 and t_arr.ndim > 0:
        t_arr = t_arr.reshape(-1, 1)
    s2 = (1.0 - t_arr) ** 2 * task.std ** 2 + t_arr ** 2
    c = t_arr - (1.0 - t_arr) * task.std ** 2
    return -m + (c / s2) * (z - (1.0 - t_arr) * m)


def rk4_integrate(field: Callable[[np.ndarray, np.ndarray], np.ndarray], z, t, r, max_step: float = 1e-3):
    """Integrate dz/ds = field(z, s) from s = t to s = r with fixed-step RK4.

    ``t``/``r`` may be per-row; every row takes the same number of steps, each
    of size at most ``max_step``.
    """
    z = np.array(z, dtype=np.float64)
    n = z.shape[0] if z.ndim == 2 else 1
    t = _col(t, n) if z.ndim == 2 else np.asarray(t, dtype=np.float64)
    r = _col(r, n) if z.ndim == 2 else np.asarray(r, dtype=np.float64)
    span = float(np.max(np.abs(t - r)))
    steps = max(1, math.ceil(span / max_step - 1e-9))
    h = (r - t) / steps
    s = t.copy()
    for i in range(steps):
        k1 = field(z, s)
        k2 = field(z + 0.5 * h * k1, s + 0.5 * h)
        k3 = field(z + 0.5 * h * k2, s + 0.5 * h)
        k4 = field(z + h * k3, s + h)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        s = t + (i + 1) * h
    return z


def analytic_average_velocity(task: GaussianTask, z_t, t, r, max_step: float = 1e-3):
    """(z_r - z_t) / (r - t) along the exact probability-flow ODE, via RK4."""
    z_t = np.asarray(z_t, dtype=np.float64)
    n = z_t.shape[0] if z_t.ndim == 2 else 1
    tt = _col(t, n) if z_t.ndim == 2 else np.asarray(t, dtype=np.float64)
    rr = _col(r, n) if z_t.ndim == 2 else np.asarray(r, dtype=np.float64)
    if np.any(tt <= rr):
        raise ValueError("average velocity needs t > r; use analytic_marginal_velocity at t == r")
    z_r = rk4_integrate(lambda z, s: analytic_marginal_velocity(task, z, s), z_t, tt, rr, max_step)
    return (z_r - z_t) / (rr - tt)


# (t, r) schedule ---------------------------------------------------------------

FAMILIES = ("uniform", "logit-normal")


@dataclass(frozen=True)
class TimePair:
    t: float
    r: float

    def __post_init__(self):
        if not (0.0 <= self.r <= self.t <= 1.0):
            raise ValueError(f"TimePair needs 0 <= r <= t <= 1, got t={self.t}, r={self.r}")


@dataclass(frozen=True)
class ScheduleConfig:
    family: str = "logit-normal"
    mu_start: float = 0.0
    mu_end: float = 0.0
    sigma_start: float = 1.0
    sigma_end: float = 1.0
    neq_ratio_start: float = 0.25
    neq_ratio_end: float = 0.75

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        for name in ("neq_ratio_start", "neq_ratio_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.sigma_start <= 0 or self.sigma_end <= 0:
            raise ValueError("sigma values must be positive")

    def at(self, progress: float) -> tuple[float, float, float]:
        """(mu, sigma, neq_ratio) linearly interpolated at training progress in [0, 1]."""
        if not 0.0 <= progress <= 1.0:
            raise ValueError(f"progress must lie in [0, 1], got {progress}")
        lerp = lambda a, b: a + progress * (b - a)  # noqa: E731
        return (lerp(self.mu_start, self.mu_end), lerp(self.sigma_start, self.sigma_end),
                lerp(self.neq_ratio_start, self.neq_ratio_end))


def sample_times(rng: nc.Rng, progress: float, cfg: ScheduleConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized draw of n pairs (t, r), t >= r.

    Two draws per pair; with probability neq_ratio the pair is (max, min),
    otherwise r = t = the first draw, so equal pairs keep the family's marginal.
    """
    mu, sigma, ratio = cfg.at(progress)
    if cfg.family == "uniform":
        a = rng.random((n, 2))
    else:
        a = 1.0 / (1.0 + np.exp(-(mu + sigma * rng.standard_normal((n, 2)))))
    neq = rng.random(n) < ratio
    t = np.where(neq, a.max(axis=1), a[:, 0])
    r = np.where(neq, a.min(axis=1), a[:, 0])
    return t, r


def sample_timepair(rng: nc.Rng, progress: float, cfg: ScheduleConfig) -> TimePair:
    t, r = sample_times(rng, progress, cfg, 1)
    return TimePair(float(t[0]), float(r[0]))


# MeanFlow target and losses ----------------------------------------------------

VSource = Union[str, VelocityNet]


def meanflow_target(net, z_t, t, r, psi, v):
    """u_tgt = v + (r - t) * du/dt, where du/dt is the JVP of u along (v, 1, 0, 0).

    ``net`` is a :class:`VelocityNet` or any ``u(z, t, r, psi)`` built from
    numcore primitives (t, r arrive as (B, 1) columns). Rows with t == r get v
    exactly and skip the JVP. The result is a plain array: nothing here
    touches a tape, which is the stop-gradient.
    """
    u_fn = (lambda z, tt, rr, p: forward_u(net, z, tt, rr, p)) if isinstance(net, VelocityNet) else net
    z_t = np.asarray(z_t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    single = z_t.ndim == 1
    if single:
        z_t, v = z_t[None], v[None]
    n = z_t.shape[0]
    t, r = _col(t, n), _col(r, n)
    if np.any(t < r):
        raise ValueError("meanflow_target needs t >= r")
    psi = np.asarray(psi, dtype=np.float64)
    if psi.ndim == 1:
        psi = np.broadcast_to(psi, (n, psi.shape[0]))
    target = v.copy()
    rows = np.flatnonzero(t[:, 0] != r[:, 0])
    if rows.size:
        psi_rows = psi[rows]
        _, dudt = nc.jvp(lambda z, tt, rr: u_fn(z, tt, rr, psi_rows),
                         [z_t[rows], t[rows], r[rows]],
                         [v[rows], np.ones((rows.size, 1)), np.zeros((rows.size, 1))])
        target[rows] = v[rows] + (r[rows] - t[rows]) * dudt
    return target[0] if single else target


def source_velocity(v_source: VSource, x, eps, z_t, t, psi):
    """Velocity to bootstrap from: the conditional eps - x, or a frozen fm net's prediction."""
    if isinstance(v_source, VelocityNet):
        return forward_v(v_source, z_t, t, psi)
    if v_source == "conditional":
        return cond_velocity(x, eps)
    raise ValueError(f"v_source must be 'conditional' or a VelocityNet, got {v_source!r}")


def meanflow_loss(net: VelocityNet, x, eps, psi, t, r, v_source: VSource = "conditional", params=None):
    """Mean over the batch of ||u(z_t, t, r, psi) - sg(u_tgt)||^2.

    With ``params`` mapping to tape variables the returned loss is a tape
    node; gradients only reach the prediction, never the target.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    z_t = interpolate(x, eps, t)
    v = source_velocity(v_source, x, eps, z_t, t, psi)
    target = meanflow_target(net, z_t, t, r, psi, v)
    pred = forward_u(net, z_t, _col(t, n), _col(r, n), psi, params)
    return nc.mul_scalar(nc.sum_sq(nc.sub(pred, target)), 1.0 / n)


def fm_loss(net: VelocityNet, x, eps, psi, t, v=None, params=None):
    """Mean over the batch of ||v(z_t, t, psi) - v_target||^2 (default target eps - x)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    z_t = interpolate(x, eps, t)
    target = cond_velocity(x, eps) if v is None else np.asarray(v, dtype=np.float64)
    pred = forward_v(net, z_t, _col(t, n), psi, params)
    return nc.mul_scalar(nc.sum_sq(nc.sub(pred, target)), 1.0 / n)
