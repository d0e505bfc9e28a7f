"""Few-step samplers and the desk-scale quality metrics."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .velocity_net import VelocityNet, forward_u, forward_v


@dataclass
class SampleRun:
    steps: int
    grid: np.ndarray
    samples: np.ndarray
    intermediates: np.ndarray | None = None  # (steps + 1, N, D), starting with the noise

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g[0] != 1.0 or g[-1] != 0.0 or np.any(np.diff(g) >= 0):
            raise ValueError("grid must decrease strictly from 1 to 0")
        self.grid = g


def uniform_grid(steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    g = np.linspace(1.0, 0.0, steps + 1)
    g[0], g[-1] = 1.0, 0.0
    return g


def _psi_rows(psi, n: int) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.float64)
    if psi.ndim == 1:
        return np.broadcast_to(psi, (n, psi.shape[0]))
    if psi.shape[0] != n:
        raise nc.ShapeError("sample", psi.shape, (n, psi.shape[-1]), detail="one psi row per sample")
    return psi


def _integrate(step_fn, data_dim: int, psi, steps: int, rng: nc.Rng, n: int, record: bool, z0=None) -> SampleRun:
    grid = uniform_grid(steps)
    z = rng.standard_normal((n, data_dim)) if z0 is None else np.array(z0, dtype=np.float64)
    psi = _psi_rows(psi, n)
    states = [z] if record else None
    for t, r in zip(grid[:-1], grid[1:]):
        z = z + (r - t) * step_fn(z, t, r, psi)
        nc.check_finite(z, f"sampler state at t={r:.4f}")
        if record:
            states.append(z)
    return SampleRun(steps, grid, z, np.stack(states) if record else None)


def meanflow_sample(net: VelocityNet, psi, steps: int, rng: nc.Rng, n: int, record: bool = False,
                    z0=None) -> SampleRun:
    """Jump along a uniform grid with the average velocity: z_r = z_t + (r - t) u(z_t, t, r)."""
    return _integrate(lambda z, t, r, p: forward_u(net, z, t, r, p), net.dims.data_dim, psi, steps, rng, n,
                      record, z0)


def fm_euler_sample(net: VelocityNet, psi, steps: int, rng: nc.Rng, n: int, record: bool = False,
                    z0=None) -> SampleRun:
    """Euler integration of the instantaneous velocity on the same uniform grid."""
    return _integrate(lambda z, t, r, p: forward_v(net, z, t, p), net.dims.data_dim, psi, steps, rng, n,
                      record, z0)


def field_sample(field_fn, data_dim: int, steps: int, rng: nc.Rng, n: int, record: bool = False,
                 z0=None) -> SampleRun:
    """Euler integration of an arbitrary velocity field ``field_fn(z, t)``."""
    return _integrate(lambda z, t, r, p: field_fn(z, t), data_dim, np.zeros(1), steps, rng, n, record, z0)


# metrics ------------------------------------------------------------------------

def _mean_pair_distance(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    total = 0.0
    for i in range(0, len(a), chunk):
        blk = a[i:i + chunk]
        d2 = (np.sum(blk * blk, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * blk @ b.T)
        total += float(np.sqrt(np.maximum(d2, 0.0)).sum())
    return total / (len(a) * len(b))


def energy_distance(a, b, max_samples: int | None = None, rng: nc.Rng | None = None) -> float:
    """E-statistic 2 E|a-b| - E|a-a'| - E|b-b'| over all pairs (V-statistic, self-pairs included).

    With ``max_samples`` each set is first subsampled without replacement.
    Returns 0 for identical multisets.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise ValueError("energy_distance needs two non-empty sample sets")
    if a.shape[1] != b.shape[1]:
        raise nc.ShapeError("energy_distance", a.shape, b.shape, detail="dimensionality differs")
    if max_samples is not None:
        rng = rng if rng is not None else nc.make_rng(0, "energy-distance")
        if len(a) > max_samples:
            a = a[rng.choice(len(a), max_samples, replace=False)]
        if len(b) > max_samples:
            b = b[rng.choice(len(b), max_samples, replace=False)]
    ed = 2.0 * _mean_pair_distance(a, b) - _mean_pair_distance(a, a) - _mean_pair_distance(b, b)
    return max(ed, 0.0)


@dataclass
class FidelityReport:
    per_condition: dict[int, float]
    overall: float
    energy_distance: float | None = None
    curvature: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in list(self.per_condition.values()) + [self.overall]:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"accuracy {v} outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_condition"] = {str(k): v for k, v in self.per_condition.items()}
        return d

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FidelityReport":
        return cls({int(k): float(v) for k, v in doc["per_condition"].items()}, float(doc["overall"]),
                   doc.get("energy_distance"), doc.get("curvature"), dict(doc.get("extra") or {}))


def condition_fidelity(samples: Mapping[int, np.ndarray], means) -> FidelityReport:
    """Fraction of each condition's samples whose nearest component mean is the commanded one."""
    means = np.asarray(means, dtype=np.float64)
    per, hits, total = {}, 0, 0
    for cond, xs in samples.items():
        if not (0 <= int(cond) < len(means)):
            raise KeyError(f"unknown condition id {cond!r}; valid ids are 0..{len(means) - 1}")
        xs = np.asarray(xs, dtype=np.float64)
        d2 = np.sum((xs[:, None, :] - means[None, :, :]) ** 2, axis=-1)
        ok = int(np.sum(np.argmin(d2, axis=1) == int(cond)))
        per[int(cond)] = ok / len(xs)
        hits += ok
        total += len(xs)
    return FidelityReport(per, hits / total if total else 0.0)


def curvature_stats(run: SampleRun | np.ndarray, eps: float = 1e-12) -> tuple[float, int]:
    """(mean of path length / chord length - 1, number of zero-chord trajectories skipped)."""
    states = run.intermediates if isinstance(run, SampleRun) else np.asarray(run, dtype=np.float64)
    if states is None or states.shape[0] < 3:
        raise ValueError("trajectory curvature needs at least 3 recorded states per trajectory")
    seg = np.linalg.norm(np.diff(states, axis=0), axis=-1).sum(axis=0)
    chord = np.linalg.norm(states[-1] - states[0], axis=-1)
    ok = chord > eps
    if not np.any(ok):
        return float("nan"), int(len(chord))
    return float(np.mean(seg[ok] / chord[ok] - 1.0)), int(np.sum(~ok))


def trajectory_curvature(run: SampleRun | np.ndarray) -> float:
    return curvature_stats(run)[0]


# export ---------------------------------------------------------------------------

def write_samples_jsonl(path: str | os.PathLike, runs: Mapping[int, SampleRun | np.ndarray], header: dict,
                        kind: str = "samples") -> Path:
    """One header line (kind, digest, steps, ...), then one line per sample: condition id and coordinates.

    ``runs`` values may be bare (N, D) arrays, as for a dataset file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps(dict(header, kind=kind), sort_keys=True) + "\n")
        for cond in sorted(runs):
            run = runs[cond]
            xs = run.samples if isinstance(run, SampleRun) else np.asarray(run, dtype=np.float64)
            paths = run.intermediates if isinstance(run, SampleRun) else None
            for i, x in enumerate(xs):
                row = {"condition": int(cond), "x": [float(v) for v in x]}
                if paths is not None:
                    row["path"] = paths[:, i, :].tolist()
                fh.write(json.dumps(row) + "\n")
    return path


def read_samples_jsonl(path: str | os.PathLike) -> tuple[dict, dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Returns (header, samples by condition, trajectories by condition (may be empty))."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty samples file")
    header = json.loads(lines[0])
    if header.get("kind") not in ("samples", "dataset"):
        raise ValueError(f"{path}: missing samples header line")
    xs: dict[int, list] = {}
    paths: dict[int, list] = {}
    for ln in lines[1:]:
        row = json.loads(ln)
        xs.setdefault(int(row["condition"]), []).append(row["x"])
        if "path" in row:
            paths.setdefault(int(row["condition"]), []).append(row["path"])
    return (header, {k: np.asarray(v, dtype=np.float64) for k, v in xs.items()},
            {k: np.asarray(v, dtype=np.float64).transpose(1, 0, 2) for k, v in paths.items()})


def pooled(samples: Mapping[int, np.ndarray], conds: Sequence[int] | None = None) -> np.ndarray:
    keys = sorted(samples) if conds is None else conds
    return np.concatenate([samples[k] for k in keys])
