"""Named end-to-end experiments and the evaluation helpers they share.

Every recipe returns a :class:`RecipeResult`: a list of checks, each with a
measured value, a threshold and a pass flag, plus free-form tables.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numcore as nc
from .config import EmbedConfig, ExperimentConfig, TaskConfig, TrainConfig
from .encoder_analysis import (
    Corpus,
    EmbeddingRecord,
    SyntheticEmbedSpec,
    discriminability_score,
    disentanglement_score,
    gen_synthetic_embeddings,
    retrieve_topk,
    synthetic_corpus,
)
from .flowcore import (
    GaussianTask,
    ScheduleConfig,
    analytic_average_velocity,
    analytic_marginal_velocity,
    interpolate,
    meanflow_loss,
    meanflow_target,
    sample_times,
)
from .oracles import central_difference_grad, central_difference_jvp, gaussian_flow_map, mc_posterior_velocity, rel_err
from .sampling import (
    SampleRun,
    condition_fidelity,
    curvature_stats,
    energy_distance,
    fm_euler_sample,
    meanflow_sample,
)
from .training import condition_table, finetune_mf, pretrain_fm
from .velocity_net import (
    Checkpoint,
    NetDims,
    TimeEmbedConfig,
    VelocityNet,
    checkpoint_from_dict,
    checkpoint_to_dict,
    forward_u,
    forward_v,
)


@dataclass
class Check:
    name: str
    value: float
    threshold: str
    passed: bool


@dataclass
class RecipeResult:
    name: str
    checks: list[Check] = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, value: float, threshold: str, passed: bool) -> Check:
        c = Check(name, float(value), threshold, bool(passed))
        self.checks.append(c)
        return c

    def to_dict(self) -> dict:
        return {"recipe": self.name, "passed": self.passed, "seconds": round(self.seconds, 3),
                "checks": [vars(c) for c in self.checks], "tables": self.tables}

    def summary(self) -> str:
        width = max([len(c.name) for c in self.checks] + [10])
        lines = [f"recipe {self.name}"]
        for c in self.checks:
            lines.append(f"  {'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.value:.6g}  ({c.threshold})")
        lines.append(f"  {'all passed' if self.passed else 'some checks failed'} in {self.seconds:.1f}s")
        return "\n".join(lines)


# experiment configs ------------------------------------------------------------------

# Both desk experiments draw (t, r) uniformly: the logit-normal default rarely
# visits t near 1 and r near 0, which is exactly the one-step jump.
DESK_SCHEDULE = ScheduleConfig(family="uniform")
DESK_TIME = TimeEmbedConfig(feature_dim=32, min_freq=1.0, max_freq=10.0)


def gaussian_config(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(name="gaussian-oracle", seed=seed, task=TaskConfig(kind="gaussian"),
                            time_embed=DESK_TIME, schedule=DESK_SCHEDULE,
                            train=TrainConfig(fm_steps=10_000, mf_steps=20_000))


def mixture_config(mode: str = "disentangled", seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(name=f"mixture-{mode}", seed=seed,
                            task=TaskConfig(kind="compositional", n_attributes=2, values_per_attribute=2),
                            embedding=EmbedConfig(mode=mode, separation=4.0),
                            time_embed=DESK_TIME, schedule=DESK_SCHEDULE,
                            train=TrainConfig(fm_steps=10_000, mf_steps=20_000))


# With every combination trained both modes reach the Bayes rate, so the
# representation comparison holds out the diagonal of a 3x3 grid: only a
# disentangled table lets the net compose attribute values it never saw together.
REPRESENTATION_HOLDOUT = (0, 4, 8)


def representation_config(mode: str = "disentangled", seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(name=f"representation-{mode}", seed=seed,
                            task=TaskConfig(kind="compositional", n_attributes=2, values_per_attribute=3,
                                            holdout=REPRESENTATION_HOLDOUT),
                            embedding=EmbedConfig(mode=mode, separation=4.0),
                            time_embed=DESK_TIME, schedule=DESK_SCHEDULE,
                            train=TrainConfig(fm_steps=5_000, mf_steps=10_000))


# shared evaluation --------------------------------------------------------------------

def disc_probe(task: GaussianTask, t: float, radius: float = 3.0, n: int = 13) -> np.ndarray:
    """Points within ``radius`` marginal standard deviations of the mean of z_t."""
    g = np.linspace(-radius, radius, n)
    a, b = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([a.ravel(), b.ravel()], axis=1)
    pts = pts[np.sum(pts ** 2, axis=1) <= radius ** 2 + 1e-9]
    return (1 - t) * np.asarray(task.mean) + task.marginal_std(t) * pts


def fm_probe_rmse(net: VelocityNet, task: GaussianTask, psi) -> float:
    errs = []
    for t in np.linspace(0.05, 0.95, 10):
        z = disc_probe(task, t)
        errs.append(np.sum((forward_v(net, z, t, psi) - analytic_marginal_velocity(task, z, t)) ** 2, axis=1))
    return float(np.sqrt(np.mean(np.concatenate(errs))))


def mf_probe_rmse(net: VelocityNet, task: GaussianTask, psi, gaps=(0.25, 0.5, 1.0)) -> dict[float, float]:
    out = {}
    for gap in gaps:
        errs = []
        for t in np.linspace(gap, 1.0, 5):
            r = max(t - gap, 0.0)
            z = disc_probe(task, t, n=9)
            errs.append(np.sum((forward_u(net, z, t, r, psi) - analytic_average_velocity(task, z, t, r)) ** 2, axis=1))
        out[gap] = float(np.sqrt(np.mean(np.concatenate(errs))))
    return out


def sample_conditions(net: VelocityNet, table: np.ndarray, conds, steps: int, n: int, seed: int,
                      sampler: str = "auto", record: bool = False) -> dict[int, SampleRun]:
    """One run per condition; condition k always starts from ``make_rng(seed, "sample", k)`` noise."""
    if sampler == "auto":
        sampler = net.mode
    fn = meanflow_sample if sampler == "mf" else fm_euler_sample
    return {int(k): fn(net, table[k], steps, nc.make_rng(seed, "sample", int(k)), n, record) for k in conds}


def held_out(task, n: int, seed: int) -> dict[int, np.ndarray]:
    return {k: task.sample_condition(nc.make_rng(seed, "held-out", k), k, n) for k in range(task.n_conditions)}


def score_runs(runs: dict[int, SampleRun], task, held: dict[int, np.ndarray], max_samples: int | None = None):
    """Fidelity report; energy distance is the mean of per-condition distances to held-out data."""
    samples = {k: r.samples for k, r in runs.items()}
    rep = condition_fidelity(samples, task.means)
    per_ed = {k: energy_distance(samples[k], held[k], max_samples, nc.make_rng(0, "ed", k)) for k in samples}
    rep.energy_distance = float(np.mean(list(per_ed.values())))
    rep.extra["energy_distance_per_condition"] = {str(k): v for k, v in per_ed.items()}
    recorded = [r for r in runs.values() if r.intermediates is not None and r.intermediates.shape[0] >= 3]
    if recorded:
        stats = [curvature_stats(r) for r in recorded]
        rep.curvature = float(np.mean([s[0] for s in stats]))
        rep.extra["curvature_skipped"] = int(sum(s[1] for s in stats))
    return rep


def train_pair(cfg: ExperimentConfig, log: Callable[[str], None] = lambda s: None):
    t0 = time.time()
    fm = pretrain_fm(cfg).net
    log(f"{cfg.name}: fm pretraining {cfg.train.fm_steps} steps in {time.time() - t0:.0f}s")
    t0 = time.time()
    mf = finetune_mf(cfg, fm).net
    log(f"{cfg.name}: mf finetuning {cfg.train.mf_steps} steps in {time.time() - t0:.0f}s")
    return fm, mf


# oracle suite -------------------------------------------------------------------------------

def _random_small_net(rng: nc.Rng) -> VelocityNet:
    dims = NetDims(int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(3, 9)), int(rng.integers(1, 3)))
    net = VelocityNet.init(dims, TimeEmbedConfig(4, 1.0, 5.0), rng, "mf")
    for k, v in net.params.items():
        net.params[k] = 0.5 * rng.standard_normal(v.shape)
    return net


def autodiff_oracle(n_nets: int = 100, seed: int = 0) -> tuple[float, float]:
    """(max reverse-mode rel. error, max JVP rel. error) over random small nets.

    Reverse mode: gradient of a fixed quadratic readout of u w.r.t. every
    parameter vs. central differences. Forward mode: tangent of u along
    (v, 1, 0, 0) vs. central differences.
    """
    worst_grad = worst_jvp = 0.0
    for i in range(n_nets):
        rng = nc.make_rng(seed, "autodiff-oracle", i)
        net = _random_small_net(rng)
        n, d, c = 3, net.dims.data_dim, net.dims.cond_dim
        z, psi, v = rng.standard_normal((n, d)), rng.standard_normal((n, c)), rng.standard_normal((n, d))
        t = rng.uniform(0.2, 1.0, (n, 1))
        r = t * rng.random((n, 1))
        proj = rng.standard_normal((n, d))

        tape = nc.Tape()
        out = forward_u(net, z, t, r, psi, tape.watch(net.params))
        grads = tape.backward(nc.sum_sq(nc.add(out, proj)))
        for name, base in net.params.items():
            def f(p, name=name):
                return float(np.sum((forward_u(net.with_params({**net.params, name: p}), z, t, r, psi) + proj) ** 2))
            worst_grad = max(worst_grad, rel_err(grads[name], central_difference_grad(f, base, 1e-6)))

        fn = lambda zz, tt, rr: forward_u(net, zz, tt, rr, psi)  # noqa: E731
        tangents = [v, np.ones((n, 1)), np.zeros((n, 1))]
        _, tan = nc.jvp(fn, [z, t, r], tangents)
        worst_jvp = max(worst_jvp, rel_err(tan, central_difference_jvp(fn, [z, t, r], tangents, 1e-5)))
    return worst_grad, worst_jvp


def boundary_identity_error(n: int = 1000, seed: int = 0) -> float:
    rng = nc.make_rng(seed, "boundary")
    net = _random_small_net(rng)
    d, c = net.dims.data_dim, net.dims.cond_dim
    z, v, psi, t = rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((n, c)), rng.random(n)
    return float(np.max(np.abs(meanflow_target(net, z, t, t, psi, v) - v)))


def linear_standin_error(n_cases: int = 20, seed: int = 0) -> float:
    worst = 0.0
    for i in range(n_cases):
        rng = nc.make_rng(seed, "linear-standin", i)
        d = int(rng.integers(1, 5))
        A, b, c = rng.standard_normal((d, d)), rng.standard_normal(d), rng.standard_normal(d)

        def u(z, t, r, psi):
            return nc.add(nc.add(nc.matmul(z, A.T), nc.matmul(t, b[None, :])), nc.matmul(r, c[None, :]))
        z, v = rng.standard_normal((8, d)), rng.standard_normal((8, d))
        t = rng.random(8)
        r = t * rng.random(8)
        got = meanflow_target(u, z, t, r, np.zeros((8, 1)), v)
        want = v + (r - t)[:, None] * (b + v @ A.T)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return worst


def loss_gradient_error(seed: int = 0) -> float:
    """Loss gradient vs. central differences with the target held at the base parameters."""
    rng = nc.make_rng(seed, "loss-grad")
    net = _random_small_net(rng)
    n, d, c = 5, net.dims.data_dim, net.dims.cond_dim
    x, eps, psi = rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((n, c))
    t = rng.uniform(0.2, 1.0, n)
    r = t * rng.random(n)
    tape = nc.Tape()
    grads = tape.backward(meanflow_loss(net, x, eps, psi, t, r, params=tape.watch(net.params)))
    z = interpolate(x, eps, t)
    target = meanflow_target(net, z, t, r, psi, eps - x)
    worst = 0.0
    for name, base in net.params.items():
        def f(p, name=name):
            pred = forward_u(net.with_params({**net.params, name: p}), z, t, r, psi)
            return float(np.mean(np.sum((pred - target) ** 2, axis=1)))
        worst = max(worst, rel_err(grads[name], central_difference_grad(f, base, 1e-6)))
    return worst


def gaussian_closed_form_errors(seed: int = 0) -> tuple[float, float]:
    """(max |analytic - MC| marginal velocity, max rel. error RK4 vs closed-form flow map)."""
    mc_worst = 0.0
    for i in range(3):
        rng = nc.make_rng(seed, "mc-oracle", i)
        task = GaussianTask(tuple(rng.uniform(-1.5, 1.5, 2)), float(rng.uniform(0.3, 1.5)))
        t = float(rng.uniform(0.15, 0.95))
        z = (1 - t) * np.asarray(task.mean) + task.marginal_std(t) * rng.standard_normal(2)
        mc = mc_posterior_velocity(task, z, t, 1_000_000, rng)
        mc_worst = max(mc_worst, float(np.max(np.abs(analytic_marginal_velocity(task, z, t) - mc))))
    task = GaussianTask((0.0, 0.0), 1.0)
    rng = nc.make_rng(seed, "rk4-oracle")
    z = rng.standard_normal((10, 2))
    t = rng.uniform(0.3, 1.0, 10)
    r = t * rng.uniform(0.0, 0.9, 10)
    rk4 = analytic_average_velocity(task, z, t, r)
    exact = np.stack([gaussian_flow_map(task, z[i], t[i], r[i]) - z[i] for i in range(10)]) / (r - t)[:, None]
    return mc_worst, rel_err(rk4, exact)


def schedule_stats(seed: int = 0) -> tuple[float, float]:
    """(P(t >= 0.5) for uniform, neq 1; fraction of equal pairs for neq 0), 10^5 draws each."""
    full = ScheduleConfig(family="uniform", neq_ratio_start=1.0, neq_ratio_end=1.0)
    t, _ = sample_times(nc.make_rng(seed, "sched-full"), 0.5, full, 100_000)
    none = ScheduleConfig(neq_ratio_start=0.0, neq_ratio_end=0.0)
    t0, r0 = sample_times(nc.make_rng(seed, "sched-none"), 0.5, none, 100_000)
    return float(np.mean(t >= 0.5)), float(np.mean(t0 == r0))


def metric_fixture_errors() -> dict[str, float]:
    """Absolute errors of the corpus metrics on hand-computed fixtures."""
    from .encoder_analysis import cosine_distance, mean_pool

    sq2 = np.sqrt(2.0)
    hand = Corpus([
        EmbeddingRecord("r1", np.array([[1.0, 0.0]]), vision_embedding=np.array([1.0, 0.0])),
        EmbeddingRecord("r2", np.array([[1.0, 0.1]]), vision_embedding=np.array([0.0, 1.0])),
        EmbeddingRecord("r3", np.array([[0.0, 1.0]]), vision_embedding=np.array([1.0, 1.0])),
    ])
    two = Corpus([EmbeddingRecord("a", np.array([[1.0, 0.0], [0.0, 1.0]])),
                  EmbeddingRecord("b", np.array([[3.0, 4.0], [3.0, 4.0]]))])
    same = Corpus([EmbeddingRecord(f"s{i}", np.tile(v, (4, 1))) for i, v in enumerate([[0.2, -1.0], [5.0, 0.5]])])
    return {
        "mean_pool": float(np.max(np.abs(mean_pool([[1.0, 2.0], [3.0, 4.0]]) - [2.0, 3.0]))),
        "cosine_distance": max(abs(cosine_distance([1.0, 0.0], [0.0, 2.0]) - 1.0),
                               abs(cosine_distance([1.0, 2.0], [-1.0, -2.0]) - 2.0)),
        "retrieve_topk": 0.0 if retrieve_topk(hand.get("r2"), hand, 2) == ["r2", "r1"] else 1.0,
        "discriminability_score": abs(discriminability_score(hand, hand, k=2) - sq2 / 3),
        "disentanglement_score": abs(disentanglement_score(two, 0.5) - (1 / sq2 + 1) / 2),
        "disentanglement_identical": abs(disentanglement_score(same, 0.3) - 1.0),
    }


def checkpoint_round_trip_ok(seed: int = 0) -> bool:
    net = _random_small_net(nc.make_rng(seed, "ckpt"))
    opt = nc.AdamState(2, {k: 0.1 * v for k, v in net.params.items()}, {k: v * v for k, v in net.params.items()})
    ck = Checkpoint(net, {"step": 2}, opt)
    back = checkpoint_from_dict(checkpoint_to_dict(ck))
    return all(back.net.params[k].tobytes() == v.tobytes() for k, v in net.params.items()) and all(
        back.optimizer.v[k].tobytes() == v.tobytes() for k, v in opt.v.items())


def recipe_oracle_suite(seed: int = 0, **_) -> RecipeResult:
    res = RecipeResult("oracle-suite")
    g, j = autodiff_oracle(100, seed)
    res.add("reverse-mode vs finite differences, 100 nets", g, "< 1e-6", g < 1e-6)
    res.add("JVP along (v,1,0,0) vs finite differences", j, "< 1e-4", j < 1e-4)
    b = boundary_identity_error(1000, seed)
    res.add("boundary identity at r = t, 1000 inputs", b, "<= 1e-12", b <= 1e-12)
    lin = linear_standin_error(20, seed)
    res.add("linear stand-in target", lin, "<= 1e-10", lin <= 1e-10)
    lg = loss_gradient_error(seed)
    res.add("loss gradient with stop-gradient target", lg, "< 1e-4", lg < 1e-4)
    mc, rk = gaussian_closed_form_errors(seed)
    res.add("Gaussian marginal velocity vs MC", mc, "< 0.02", mc < 0.02)
    res.add("RK4 average velocity vs closed form", rk, "< 1e-6", rk < 1e-6)
    p_half, eq = schedule_stats(seed)
    res.add("uniform schedule P(t >= 0.5)", p_half, "0.75 +- 0.02", abs(p_half - 0.75) <= 0.02)
    res.add("neq_ratio 0 equal-pair fraction", eq, "== 1", eq == 1.0)
    for name, err in metric_fixture_errors().items():
        res.add(f"fixture {name}", err, "<= 1e-12", err <= 1e-12)
    ok = checkpoint_round_trip_ok(seed)
    res.add("checkpoint round trip bitwise", float(ok), "== 1", ok)
    return res


# training recipes ---------------------------------------------------------------------------------

def recipe_gaussian_oracle(seed: int = 0, log=print, **_) -> RecipeResult:
    res = RecipeResult("gaussian-oracle")
    cfg = gaussian_config(seed)
    fm, mf = train_pair(cfg, log)
    gt = cfg.build_task().task
    psi = np.zeros(cfg.net.cond_dim)
    e = fm_probe_rmse(fm, gt, psi)
    res.add("fm velocity RMSE on 3-sigma probe", e, "< 0.1", e < 0.1)
    gaps = mf_probe_rmse(mf, gt, psi)
    for gap, val in gaps.items():
        res.add(f"mf average velocity RMSE, t - r = {gap}", val, "< 0.15", val < 0.15)
    return res


def one_step_comparison(cfg: ExperimentConfig, fm: VelocityNet, mf: VelocityNet, n: int = 5000,
                        seed: int = 1) -> dict:
    task, table = cfg.build_task(), condition_table(cfg)
    held = held_out(task, n, seed)
    conds = range(task.n_conditions)
    mf1 = score_runs(sample_conditions(mf, table, conds, 1, n, seed), task, held)
    fm1 = score_runs(sample_conditions(fm, table, conds, 1, n, seed), task, held)
    return {"mf": mf1, "fm": fm1}


def recipe_one_step_gap(seed: int = 0, log=print, **_) -> RecipeResult:
    res = RecipeResult("one-step-gap")
    cfg = mixture_config("disentangled", seed)
    fm, mf = train_pair(cfg, log)
    rep = one_step_comparison(cfg, fm, mf)
    mf1, fm1 = rep["mf"], rep["fm"]
    res.tables["one_step"] = {k: v.to_dict() for k, v in rep.items()}
    res.add("mf 1-step energy distance", mf1.energy_distance, "< 0.05", mf1.energy_distance < 0.05)
    res.add("mf 1-step fidelity", mf1.overall, "> 0.9", mf1.overall > 0.9)
    res.add("fm 1-step energy distance", fm1.energy_distance, f"> {mf1.energy_distance:.4g}",
            fm1.energy_distance > mf1.energy_distance)
    res.add("fm 1-step fidelity", fm1.overall, f"< {mf1.overall:.4g}", fm1.overall < mf1.overall)
    return res


def step_scaling(cfg: ExperimentConfig, fm: VelocityNet, mf: VelocityNet, n: int = 5000, seed: int = 2) -> dict:
    task, table = cfg.build_task(), condition_table(cfg)
    conds = range(task.n_conditions)
    fid = {s: condition_fidelity({k: r.samples for k, r in sample_conditions(mf, table, conds, s, n, seed).items()},
                                 task.means).overall for s in (1, 2, 4)}
    base = condition_fidelity({k: r.samples for k, r in sample_conditions(fm, table, conds, 50, n, seed).items()},
                              task.means).overall
    return {"mf": fid, "fm50": base}


def step_scaling_checks(res: RecipeResult, sc: dict, margin: float = 0.02):
    f = sc["mf"]
    res.add("fidelity(1) <= fidelity(2) + margin", f[1] - f[2], f"<= {margin}", f[1] <= f[2] + margin)
    res.add("fidelity(2) <= fidelity(4) + margin", f[2] - f[4], f"<= {margin}", f[2] <= f[4] + margin)
    gap = abs(f[4] - sc["fm50"])
    res.add("|fidelity(4) - fm 50-step fidelity|", gap, "<= 0.05", gap <= 0.05)


def recipe_fig5_desk(seed: int = 0, log=print, **_) -> RecipeResult:
    """Train the disentangled mixture, tracking 1/2/4-step fidelity during finetuning."""
    res = RecipeResult("fig5-desk")
    cfg = mixture_config("disentangled", seed)
    task, table = cfg.build_task(), condition_table(cfg)
    fm = pretrain_fm(cfg).net
    rows = []
    every = max(cfg.train.mf_steps // 8, 1)

    def on_step(step, net, opt, loss):
        if step % every == 0:
            row = {"step": step}
            for s in (1, 2, 4):
                runs = sample_conditions(net, table, range(task.n_conditions), s, 1000, seed)
                row[f"fidelity_{s}"] = condition_fidelity({k: r.samples for k, r in runs.items()}, task.means).overall
            rows.append(row)
            log(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    mf = finetune_mf(cfg, fm, on_step=on_step).net
    sc = step_scaling(cfg, fm, mf)
    res.tables["during_training"] = rows
    res.tables["final"] = {"mf": {str(k): v for k, v in sc["mf"].items()}, "fm50": sc["fm50"]}
    step_scaling_checks(res, sc)
    return res


def representation_comparison(runs: dict[str, tuple[ExperimentConfig, VelocityNet, VelocityNet]], n: int = 5000,
                              seed: int = 3) -> dict:
    out = {}
    for mode, (cfg, fm, mf) in runs.items():
        task, table = cfg.build_task(), condition_table(cfg)
        conds = range(task.n_conditions)
        fid = condition_fidelity({k: r.samples for k, r in sample_conditions(mf, table, conds, 1, n, seed).items()},
                                 task.means)
        curv, skipped = zip(*[curvature_stats(r) for r in
                              sample_conditions(fm, table, conds, 50, 1000, seed, record=True).values()])
        out[mode] = {"fidelity_1": fid.overall,
                     "per_condition": {str(k): v for k, v in fid.per_condition.items()},
                     "fm_curvature": float(np.mean(curv)), "skipped": int(sum(skipped))}
    return out


def representation_checks(res: RecipeResult, comp: dict):
    d, e = comp["disentangled"], comp["entangled"]
    gap = d["fidelity_1"] - e["fidelity_1"]
    res.add("1-step fidelity, disentangled - entangled", gap, ">= 0.1", gap >= 0.1)
    res.add("fm curvature, entangled - disentangled", e["fm_curvature"] - d["fm_curvature"], "> 0",
            e["fm_curvature"] > d["fm_curvature"])


def recipe_representation_thesis(seed: int = 0, log=print, **_) -> RecipeResult:
    res = RecipeResult("representation-thesis")
    runs = {}
    for mode in ("disentangled", "entangled"):
        cfg = representation_config(mode, seed)
        runs[mode] = (cfg, *train_pair(cfg, log))
    comp = representation_comparison(runs)
    res.tables["comparison"] = comp
    representation_checks(res, comp)
    return res


def recipe_discriminability_ablation(seed: int = 0, **_) -> RecipeResult:
    """Corpus metrics on synthetic encoders: separation 4.0 vs 0.5, disentangled vs entangled."""
    res = RecipeResult("discriminability-ablation")
    table = {}
    for mode in ("disentangled", "entangled"):
        for sep in (4.0, 0.5):
            spec = SyntheticEmbedSpec(2, 2, 8, sep, mode, tokens_per_attribute=4)
            corpus = synthetic_corpus(gen_synthetic_embeddings(spec, seed), 50, seed, token_noise=0.5)
            table[f"{mode}@{sep}"] = {"discriminability": discriminability_score(corpus, corpus, k=2),
                                      "disentanglement": disentanglement_score(corpus, 0.3, seed)}
    res.tables["scores"] = table
    for mode in ("disentangled", "entangled"):
        hi, lo = table[f"{mode}@4.0"]["discriminability"], table[f"{mode}@0.5"]["discriminability"]
        res.add(f"{mode}: discriminability(4.0) - discriminability(0.5)", hi - lo, "> 0", hi > lo)
    d, e = table["disentangled@4.0"]["disentanglement"], table["entangled@4.0"]["disentanglement"]
    res.add("disentanglement, disentangled - entangled", d - e, "> 0", d > e)
    return res


RECIPES: dict[str, Callable[..., RecipeResult]] = {
    "oracle-suite": recipe_oracle_suite,
    "gaussian-oracle": recipe_gaussian_oracle,
    "one-step-gap": recipe_one_step_gap,
    "fig5-desk": recipe_fig5_desk,
    "representation-thesis": recipe_representation_thesis,
    "discriminability-ablation": recipe_discriminability_ablation,
}


def run_recipe(name: str, seed: int = 0, log=print) -> RecipeResult:
    if name not in RECIPES:
        raise KeyError(f"unknown recipe {name!r}; available: {', '.join(sorted(RECIPES))}")
    t0 = time.time()
    res = RECIPES[name](seed=seed, log=log)
    res.seconds = time.time() - t0
    return res
