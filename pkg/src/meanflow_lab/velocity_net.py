"""Conditional velocity / average-velocity network and its checkpoints.

One network serves both stages. In ``fm`` mode it has a single time embedding
and predicts the instantaneous velocity v(z, t, psi). In ``mf`` mode the time
embedding is split into an interval branch (fed t - r) and an end-time branch
(fed t) whose outputs are summed, and the network predicts the average
velocity u(z, t, r, psi). ``duplicate_time_embedding`` turns a trained fm
network into an mf network by copying the single embedding into both branches.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import numcore as nc
from .numcore import AdamState, DualTensor, ShapeError, Var

FORMAT_VERSION = 1
MODES = ("fm", "mf")


@dataclass(frozen=True)
class TimeEmbedConfig:
    feature_dim: int = 32
    min_freq: float = 1.0
    # top frequency 1000 (or 100) makes the t-derivative of the embedding so
    # large that the MeanFlow target blows up at this scale; 10 trains stably
    max_freq: float = 10.0

    def __post_init__(self):
        if self.feature_dim <= 0 or self.feature_dim % 2:
            raise ValueError(f"feature_dim must be a positive even integer, got {self.feature_dim}")
        if not (0 < self.min_freq < self.max_freq):
            raise ValueError(f"need 0 < min_freq < max_freq, got {self.min_freq}, {self.max_freq}")

    @property
    def freqs(self) -> np.ndarray:
        return np.geomspace(self.min_freq, self.max_freq, self.feature_dim // 2)


@dataclass(frozen=True)
class NetDims:
    data_dim: int = 2
    cond_dim: int = 8
    hidden_dim: int = 128
    depth: int = 3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if int(v) != v or v < 1:
                raise ValueError(f"{k} must be a positive integer, got {v}")


def _time_branches(mode: str) -> tuple[str, ...]:
    return ("time",) if mode == "fm" else ("interval", "end")


@dataclass
class VelocityNet:
    dims: NetDims
    time_cfg: TimeEmbedConfig
    mode: str
    params: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        expected = param_shapes(self.dims, self.time_cfg, self.mode)
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names do not match a {self.mode} net: "
                             f"{sorted(set(expected) ^ set(self.params))}")
        for k, shape in expected.items():
            if self.params[k].shape != shape:
                raise ShapeError("VelocityNet", shape, self.params[k].shape, detail=k)

    @classmethod
    def init(cls, dims: NetDims, time_cfg: TimeEmbedConfig, rng: nc.Rng, mode: str = "fm") -> "VelocityNet":
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases, zero final layer.

        In ``mf`` mode both time branches start from the same draw.
        """
        params = {}
        shapes = param_shapes(dims, time_cfg, mode)
        for name, shape in shapes.items():
            if name.endswith(".b") or name.startswith(f"trunk.{dims.depth}."):
                params[name] = np.zeros(shape)
            elif name.startswith("end."):
                continue
            else:
                bound = 1.0 / np.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
        if mode == "mf":
            params["end.w"] = params["interval.w"].copy()
        return cls(dims, time_cfg, mode, params)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "VelocityNet":
        return VelocityNet(self.dims, self.time_cfg, self.mode, {k: v.copy() for k, v in self.params.items()})

    def with_params(self, params: Mapping[str, np.ndarray]) -> "VelocityNet":
        return VelocityNet(self.dims, self.time_cfg, self.mode, dict(params))


def param_shapes(dims: NetDims, time_cfg: TimeEmbedConfig, mode: str) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for br in _time_branches(mode):
        shapes[f"{br}.w"] = (time_cfg.feature_dim, dims.hidden_dim)
        shapes[f"{br}.b"] = (dims.hidden_dim,)
    width = dims.data_dim + dims.hidden_dim + dims.cond_dim
    for i in range(dims.depth):
        shapes[f"trunk.{i}.w"] = (width, dims.hidden_dim)
        shapes[f"trunk.{i}.b"] = (dims.hidden_dim,)
        width = dims.hidden_dim
    shapes[f"trunk.{dims.depth}.w"] = (width, dims.data_dim)
    shapes[f"trunk.{dims.depth}.b"] = (dims.data_dim,)
    return shapes


# forward -----------------------------------------------------------------

def _column(x, batch: int, what: str):
    """Times as a (B, 1) column. Tape/dual inputs must already have that shape."""
    if isinstance(x, (Var, DualTensor)):
        if x.shape != (batch, 1):
            raise ShapeError("forward_u", (batch, 1), x.shape, detail=f"{what} column")
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        return np.full((batch, 1), float(arr))
    arr = arr.reshape(-1, 1)
    if arr.shape[0] != batch:
        raise ShapeError("forward_u", (batch, 1), arr.shape, detail=f"{what} column")
    return arr


def _check_order(t, r):
    tv, rv = nc.value_of(t), nc.value_of(r)
    if np.any(tv < rv):
        raise ValueError("time pair violates t >= r (t is the noisier end)")
    return tv, rv


def _embed(p, branch: str, x, freqs):
    return nc.affine(nc.sin_cos_features(x, freqs), p[f"{branch}.w"], p[f"{branch}.b"])


def _time_embedding(net: VelocityNet, p, t, r):
    freqs = net.time_cfg.freqs
    if net.mode == "fm":
        tv, rv = _check_order(t, r)
        if np.any(tv != rv):
            raise ValueError("an fm-mode net has a single time embedding and needs r == t")
        return _embed(p, "time", t, freqs)
    _check_order(t, r)
    return nc.add(_embed(p, "interval", nc.sub(t, r), freqs), _embed(p, "end", t, freqs))


def phi_cond(net: VelocityNet, t, r, params=None):
    """Conditional time embedding: interval branch at t - r plus end branch at t."""
    if net.mode != "mf":
        raise ValueError("phi_cond needs an mf-mode net (two time branches)")
    p = net.params if params is None else params
    squeeze = np.ndim(nc.value_of(t)) == 0
    t_col = _column(t, 1 if squeeze else len(np.ravel(nc.value_of(t))), "t")
    r_col = _column(r, t_col.shape[0], "r")
    out = _time_embedding(net, p, t_col, r_col)
    if squeeze and not isinstance(out, (Var, DualTensor)):
        return out[0]
    return out


def forward_u(net: VelocityNet, z, t, r, psi, params: Mapping[str, Any] | None = None):
    """Average-velocity prediction u(z, t, r, psi); same shape as ``z``.

    ``z`` is (B, data_dim) or a single (data_dim,) row. ``t``/``r`` are scalars,
    length-B vectors or (B, 1) columns. ``params`` overrides ``net.params``,
    typically with tape variables during training.
    """
    p = net.params if params is None else params
    d = net.dims
    single = False
    if not isinstance(z, (Var, DualTensor)):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            single = True
            z = z[None, :]
    zshape = z.shape
    if len(zshape) != 2 or zshape[1] != d.data_dim:
        raise ShapeError("forward_u", zshape, (None, d.data_dim), detail="z last dim must equal data_dim")
    batch = zshape[0]

    if not isinstance(psi, (Var, DualTensor)):
        psi = np.asarray(psi, dtype=np.float64)
        if psi.ndim == 1:
            psi = np.broadcast_to(psi, (batch, psi.shape[0]))
    if psi.shape != (batch, d.cond_dim):
        raise ShapeError("forward_u", psi.shape, (batch, d.cond_dim), detail="psi must be (B, cond_dim)")

    t = _column(t, batch, "t")
    r = _column(r, batch, "r")
    h = nc.concat_last_dim(z, _time_embedding(net, p, t, r), psi)
    for i in range(d.depth):
        h = nc.silu(nc.affine(h, p[f"trunk.{i}.w"], p[f"trunk.{i}.b"]))
    out = nc.affine(h, p[f"trunk.{d.depth}.w"], p[f"trunk.{d.depth}.b"])
    if single:
        return out[0]
    return out


def forward_v(net: VelocityNet, z, t, psi, params=None):
    """Instantaneous velocity: the average velocity over a zero-length interval."""
    return forward_u(net, z, t, t, psi, params)


# checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    net: VelocityNet
    metadata: dict = field(default_factory=dict)
    optimizer: AdamState | None = None
    format_version: int = FORMAT_VERSION

    @property
    def mode(self) -> str:
        return self.net.mode


def _pack(arrays: Mapping[str, np.ndarray]) -> dict:
    return {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in sorted(arrays.items())}


def _unpack(blob: Mapping[str, Any]) -> dict[str, np.ndarray]:
    return {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob.items()}


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    net = ckpt.net
    doc = {
        "format_version": ckpt.format_version,
        "mode": net.mode,
        "dims": asdict(net.dims),
        "time_embed": asdict(net.time_cfg),
        "params": _pack(net.params),
        "metadata": dict(ckpt.metadata, mode=net.mode),
    }
    if ckpt.optimizer is not None:
        doc["optimizer"] = {"step": ckpt.optimizer.step, "m": _pack(ckpt.optimizer.m), "v": _pack(ckpt.optimizer.v)}
    return doc


def checkpoint_from_dict(doc: Mapping[str, Any]) -> Checkpoint:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    net = VelocityNet(NetDims(**doc["dims"]), TimeEmbedConfig(**doc["time_embed"]), doc["mode"],
                      _unpack(doc["params"]))
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = AdamState(int(o["step"]), _unpack(o["m"]), _unpack(o["v"]))
    return Checkpoint(net, dict(doc.get("metadata", {})), opt, version)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> Path:
    """Write a checkpoint as JSON. Floats use shortest round-trip repr, so loading is bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(checkpoint_to_dict(ckpt), sort_keys=True, allow_nan=False))
    tmp.replace(path)
    return path


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    return checkpoint_from_dict(json.loads(Path(path).read_text()))


def duplicate_time_embedding(source: Checkpoint | VelocityNet) -> VelocityNet:
    """Build an mf net from an fm one: both time branches start as copies of the
    fm time embedding, the trunk is copied verbatim."""
    net = source.net if isinstance(source, Checkpoint) else source
    if net.mode != "fm":
        raise ValueError(f"duplicate_time_embedding needs an fm checkpoint, got mode {net.mode!r}")
    params = {k: v.copy() for k, v in net.params.items() if not k.startswith("time.")}
    for br in ("interval", "end"):
        params[f"{br}.w"] = net.params["time.w"].copy()
        params[f"{br}.b"] = net.params["time.b"].copy()
    return VelocityNet(net.dims, net.time_cfg, "mf", params)
