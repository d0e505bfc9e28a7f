"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The training criteria (4-7) share session fixtures, so the whole file trains
three model pairs once: the 2-D Gaussian, the disentangled 2x2 mixture and the
3x3 held-out-diagonal pair used for the representation comparison.
"""
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from meanflow_lab import numcore as nc
from meanflow_lab.cli import main
from meanflow_lab.config import ExperimentConfig, TaskConfig, TrainConfig, save_config
from meanflow_lab.encoder_analysis import (
    SyntheticEmbedSpec,
    gen_synthetic_embeddings,
    retrieve_topk,
    synthetic_corpus,
)
from meanflow_lab.flowcore import ScheduleConfig
from meanflow_lab.recipes import (
    autodiff_oracle,
    boundary_identity_error,
    gaussian_config,
    linear_standin_error,
    metric_fixture_errors,
    fm_probe_rmse,
    mf_probe_rmse,
    mixture_config,
    one_step_comparison,
    representation_comparison,
    representation_config,
    schedule_stats,
    step_scaling,
    train_pair,
)
from meanflow_lab.velocity_net import NetDims, TimeEmbedConfig, load_checkpoint, save_checkpoint


@pytest.fixture(scope="session")
def gaussian_pair():
    t0 = time.time()
    cfg = gaussian_config(0)
    fm, mf = train_pair(cfg)
    return cfg, fm, mf, time.time() - t0


@pytest.fixture(scope="session")
def mixture_pair():
    cfg = mixture_config("disentangled", 0)
    return (cfg, *train_pair(cfg))


@pytest.fixture(scope="session")
def representation_runs():
    runs = {}
    for mode in ("disentangled", "entangled"):
        cfg = representation_config(mode, 0)
        runs[mode] = (cfg, *train_pair(cfg))
    return runs


def test_criterion_01_autodiff_oracle(acceptance):
    t0 = time.time()
    grad, jvp = autodiff_oracle(100, seed=0)
    secs = time.time() - t0
    acceptance(1, "autodiff oracle suite, 100 random nets", {
        "reverse_rel_err": (grad, grad < 1e-6),
        "jvp_rel_err": (jvp, jvp < 1e-4),
        "seconds": (secs, secs < 60),
    })


def test_criterion_02_boundary_identity(acceptance):
    err = boundary_identity_error(1000, seed=0)
    acceptance(2, "boundary identity at r = t, 1000 inputs", {"max_abs_err": (err, err <= 1e-12)})


def test_criterion_03_linear_standin(acceptance):
    err = linear_standin_error(50, seed=0)
    acceptance(3, "linear stand-in target exactness", {"max_abs_err": (err, err <= 1e-10)})


def test_criterion_04_gaussian_oracle(acceptance, gaussian_pair):
    cfg, fm, mf, secs = gaussian_pair
    task = cfg.build_task().task
    psi = np.zeros(cfg.net.cond_dim)
    fm_rmse = fm_probe_rmse(fm, task, psi)
    checks = {
        "fm_steps": (cfg.train.fm_steps, cfg.train.fm_steps <= 10_000),
        "mf_steps": (cfg.train.mf_steps, cfg.train.mf_steps <= 20_000),
        "fm_rmse": (fm_rmse, fm_rmse < 0.1),
    }
    for gap, val in mf_probe_rmse(mf, task, psi).items():
        checks[f"mf_rmse_gap{gap}"] = (val, val < 0.15)
    checks["train_seconds"] = (secs, secs < 15 * 60)
    acceptance(4, "analytic Gaussian oracle", checks)


def test_criterion_05_one_step_quality(acceptance, mixture_pair):
    cfg, fm, mf = mixture_pair
    rep = one_step_comparison(cfg, fm, mf, n=5000)
    mf1, fm1 = rep["mf"], rep["fm"]
    acceptance(5, "one-step generation quality, MF vs FM Euler", {
        "mf_energy_distance": (mf1.energy_distance, mf1.energy_distance < 0.05),
        "mf_fidelity": (mf1.overall, mf1.overall > 0.9),
        "fm_energy_distance": (fm1.energy_distance, fm1.energy_distance > mf1.energy_distance),
        "fm_fidelity": (fm1.overall, fm1.overall < mf1.overall),
    })


def test_criterion_06_step_scaling(acceptance, mixture_pair):
    cfg, fm, mf = mixture_pair
    sc = step_scaling(cfg, fm, mf, n=5000)
    f = sc["mf"]
    acceptance(6, "step-scaling monotonicity", {
        "fidelity_1": (f[1], f[1] <= f[2] + 0.02),
        "fidelity_2": (f[2], f[2] <= f[4] + 0.02),
        "fidelity_4": (f[4], abs(f[4] - sc["fm50"]) <= 0.05),
        "fm50_fidelity": (sc["fm50"], True),
    })


def test_criterion_07_representation_thesis(acceptance, representation_runs):
    comp = representation_comparison(representation_runs)
    d, e = comp["disentangled"], comp["entangled"]
    gap = d["fidelity_1"] - e["fidelity_1"]
    acceptance(7, "representation quality, disentangled vs entangled", {
        "fidelity_gap": (gap, gap >= 0.1),
        "curvature_disentangled": (d["fm_curvature"], d["fm_curvature"] < e["fm_curvature"]),
        "curvature_entangled": (e["fm_curvature"], True),
    })


def _brute_force_topk(q, corpus, k):
    qv = np.mean(q.token_embeddings, axis=0)
    scored = []
    for r in corpus.records:
        v = np.mean(r.token_embeddings, axis=0)
        scored.append((-(qv @ v) / (np.linalg.norm(qv) * np.linalg.norm(v)), r.id))
    return [rid for _, rid in sorted(scored)[:k]]


def test_criterion_08_metric_fixtures(acceptance):
    checks = {name: (err, err <= 1e-12) for name, err in metric_fixture_errors().items()}
    mismatches = 0
    for mode in ("disentangled", "entangled"):
        table = gen_synthetic_embeddings(SyntheticEmbedSpec(2, 2, 8, 4.0, mode), seed=0)
        corpus = synthetic_corpus(table, 250, seed=0, token_noise=0.5)
        assert len(corpus.records) == 1000
        for q in corpus.records[::40]:
            mismatches += retrieve_topk(q, corpus, 10) != _brute_force_topk(q, corpus, 10)
    checks["brute_force_mismatches"] = (mismatches, mismatches == 0)
    acceptance(8, "metric fixtures and brute-force retrieval", checks)


def test_criterion_09_schedule_statistics(acceptance):
    p_half, equal = schedule_stats(seed=0)
    acceptance(9, "time-pair schedule statistics", {
        "P(t>=0.5)": (p_half, abs(p_half - 0.75) <= 0.02),
        "equal_fraction_neq0": (equal, equal == 1.0),
    })


def _tiny_config(path):
    cfg = ExperimentConfig(task=TaskConfig(n_samples=400), net=NetDims(2, 8, 8, 1),
                           time_embed=TimeEmbedConfig(8, 1.0, 10.0), schedule=ScheduleConfig(family="uniform"),
                           train=TrainConfig(fm_steps=30, mf_steps=30, batch_size=16, eval_every=15,
                                             eval_samples=50, checkpoint_every=15))
    return str(save_config(path / "cfg.json", cfg))


def _pipeline(root):
    cfg = _tiny_config(root)
    assert main(["gen-data", "--config", cfg, "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg, "--mode", "fm", "--out", str(root / "fm")]) == 0
    assert main(["train", "--config", cfg, "--mode", "mf", "--init-from", str(root / "fm" / "fm_last.json"),
                 "--out", str(root / "mf")]) == 0
    assert main(["sample", str(root / "mf" / "mf_last.json"), "--steps", "2", "-N", "64", "--seed", "5",
                 "--out", str(root / "samples.jsonl")]) == 0
    return [root / "data" / "data.jsonl", root / "fm" / "fm_last.json", root / "mf" / "mf_last.json",
            root / "mf" / "metrics.csv", root / "samples.jsonl"]


def test_criterion_10_determinism_and_persistence(acceptance, tmp_path):
    # same command in the same place twice; checkpoints record their init path
    run = tmp_path / "run"
    run.mkdir()
    first = [f.read_bytes() for f in _pipeline(run)]
    shutil.rmtree(run)
    run.mkdir()
    files_a = _pipeline(run)
    identical = first == [f.read_bytes() for f in files_a]

    ck = load_checkpoint(files_a[2])
    again = save_checkpoint(tmp_path / "again.json", ck)
    back = load_checkpoint(again)
    round_trip = again.read_bytes() == files_a[2].read_bytes() and all(
        back.net.params[k].tobytes() == v.tobytes() for k, v in ck.net.params.items()) and all(
        back.optimizer.m[k].tobytes() == v.tobytes() for k, v in ck.optimizer.m.items())

    proc = subprocess.run([sys.executable, "-m", "meanflow_lab.cli", "repro", "oracle-suite"],
                          capture_output=True, text=True)
    acceptance(10, "determinism and persistence", {
        "pipeline_byte_identical": (float(identical), identical),
        "checkpoint_round_trip": (float(round_trip), round_trip),
        "oracle_suite_exit": (proc.returncode, proc.returncode == 0),
    })


def test_rng_paths_are_independent():
    a = nc.make_rng(0, "sample", 1).standard_normal(4)
    b = nc.make_rng(0, "sample", 2).standard_normal(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, nc.make_rng(0, "sample", 1).standard_normal(4))
