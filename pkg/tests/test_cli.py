import csv
import json

import numpy as np
import pytest

from meanflow_lab.cli import main
from meanflow_lab.config import ExperimentConfig, TaskConfig, TrainConfig, save_config
from meanflow_lab.encoder_analysis import (
    Corpus,
    EmbeddingRecord,
    SyntheticEmbedSpec,
    gen_synthetic_embeddings,
    save_corpus,
    synthetic_corpus,
)
from meanflow_lab.flowcore import ScheduleConfig
from meanflow_lab.sampling import read_samples_jsonl, write_samples_jsonl
from meanflow_lab.velocity_net import Checkpoint, NetDims, TimeEmbedConfig, load_checkpoint, \
    save_checkpoint

TINY_TRAIN = TrainConfig(fm_steps=40, mf_steps=40, batch_size=16, eval_every=20, eval_samples=50,
                         checkpoint_every=20)


def _cfg(tmp_path, **task):
    cfg = ExperimentConfig(task=TaskConfig(n_samples=400, **task), net=NetDims(2, 8, 8, 1),
                           time_embed=TimeEmbedConfig(8, 1.0, 10.0), schedule=ScheduleConfig(family="uniform"),
                           train=TINY_TRAIN)
    return str(save_config(tmp_path / "cfg.json", cfg))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = _cfg(root)
    assert main(["gen-data", "--config", cfg, "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg, "--mode", "fm", "--out", str(root / "fm")]) == 0
    assert main(["train", "--config", cfg, "--mode", "mf", "--init-from", str(root / "fm" / "fm_last.json"),
                 "--out", str(root / "mf")]) == 0
    return root


# gen-data -----------------------------------------------------------------------------------

def test_gen_data_is_byte_identical(tmp_path):
    cfg = _cfg(tmp_path)
    for d in ("a", "b"):
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for name in ("data.jsonl", "manifest.json", "embeddings.json", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_data_three_by_three(tmp_path):
    cfg = _cfg(tmp_path, values_per_attribute=3)
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["n_conditions"] == 9 and manifest["condition_ids"] == list(range(9))
    assert manifest["config_digest"] == ExperimentConfig.from_dict(
        json.loads((tmp_path / "cfg.json").read_text())).digest()


def test_gen_data_gaussian_mean(tmp_path):
    cfg = ExperimentConfig(task=TaskConfig(kind="gaussian", mean=(1.0, -0.5), std=0.5, n_samples=10_000))
    path = save_config(tmp_path / "g.json", cfg)
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "d")]) == 0
    _, data, _ = read_samples_jsonl(tmp_path / "d" / "data.jsonl")
    x = data[0]
    assert np.all(np.abs(x.mean(axis=0) - [1.0, -0.5]) < 4 * 0.5 / np.sqrt(len(x)))


def test_invalid_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"task": {"kind": "spiral"}}))
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    bad.write_text(json.dumps({"tusk": {}}))
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert "unknown" in capsys.readouterr().err


# train ---------------------------------------------------------------------------------------

def test_train_outputs(trained):
    ck = load_checkpoint(trained / "mf" / "mf_last.json")
    assert ck.mode == "mf" and ck.metadata["step"] == 40 and ck.metadata["v_source"] == "pretrained"
    assert ck.metadata["config_digest"] == ExperimentConfig.from_dict(ck.metadata["config"]).digest()
    with open(trained / "mf" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["step"]) for r in rows] == [20, 40]
    assert all(0.0 <= float(r[f"fidelity_{s}"]) <= 1.0 for r in rows for s in (1, 2, 4))
    assert (trained / "mf" / "ckpt_mf_000020.json").exists()


def test_train_mode_checkpoint_mismatch(trained, tmp_path):
    mf_ck = str(trained / "mf" / "mf_last.json")
    assert main(["train", "--mode", "mf", "--init-from", mf_ck, "--out", str(tmp_path)]) == 1
    assert main(["train", "--mode", "fm", "--init-from", str(trained / "fm" / "fm_last.json"),
                 "--out", str(tmp_path)]) == 1
    assert main(["train", "--mode", "fm", "--resume", mf_ck, "--out", str(tmp_path)]) == 1


def test_mf_from_scratch(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["train", "--config", cfg, "--mode", "mf", "--steps", "5", "--out", str(tmp_path / "mf")]) == 0
    ck = load_checkpoint(tmp_path / "mf" / "mf_last.json")
    assert ck.metadata["v_source"] == "conditional" and ck.metadata["step"] == 5


def test_resume_matches_uninterrupted_run(trained, tmp_path):
    out = tmp_path / "resumed"
    out.mkdir()
    half = load_checkpoint(trained / "mf" / "ckpt_mf_000020.json")
    save_checkpoint(out / "start.json", half)
    with open(trained / "mf" / "metrics.csv") as fh:
        lines = fh.readlines()
    (out / "metrics.csv").write_text("".join(lines[:2]))
    assert main(["train", "--mode", "mf", "--resume", str(out / "start.json"), "--out", str(out)]) == 0
    assert (out / "mf_last.json").read_bytes() == (trained / "mf" / "mf_last.json").read_bytes()
    assert (out / "metrics.csv").read_bytes() == (trained / "mf" / "metrics.csv").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_2_and_keeps_last_good(tmp_path):
    cfg = ExperimentConfig(task=TaskConfig(n_samples=10), net=NetDims(2, 8, 8, 1),
                           time_embed=TimeEmbedConfig(8, 1.0, 10.0),
                           train=TrainConfig(fm_steps=50, batch_size=8, lr=1e300, lr_schedule="constant",
                                             eval_every=1000, checkpoint_every=1000))
    path = save_config(tmp_path / "c.json", cfg)
    assert main(["train", "--config", str(path), "--mode", "fm", "--out", str(tmp_path / "o")]) == 2
    good = load_checkpoint(tmp_path / "o" / "fm_last_good.json")
    assert all(np.all(np.isfinite(v)) for v in good.net.params.values())


# sample / eval ----------------------------------------------------------------------------------

def test_sample_shares_noise_across_step_counts(trained, tmp_path):
    ck = str(trained / "mf" / "mf_last.json")
    for s in ("1", "4"):
        assert main(["sample", ck, "--steps", s, "-N", "30", "--record", "--out", str(tmp_path / f"s{s}.jsonl")]) == 0
    _, _, p1 = read_samples_jsonl(tmp_path / "s1.jsonl")
    h4, _, p4 = read_samples_jsonl(tmp_path / "s4.jsonl")
    assert h4["steps"] == 4
    for k in p1:
        np.testing.assert_array_equal(p1[k][0], p4[k][0])


def test_sample_constant_field_checkpoint_telescopes(trained, tmp_path):
    ck = load_checkpoint(trained / "mf" / "mf_last.json")
    net = ck.net.copy()
    for k in net.params:
        if k.startswith(f"trunk.{net.dims.depth}."):
            net.params[k] = np.zeros_like(net.params[k])
    net.params[f"trunk.{net.dims.depth}.b"] = np.array([0.3, -0.7])
    path = save_checkpoint(tmp_path / "const.json", Checkpoint(net, ck.metadata))
    outs = []
    for s in ("1", "2", "4"):
        assert main(["sample", str(path), "--steps", s, "-N", "20", "--out", str(tmp_path / f"c{s}.jsonl")]) == 0
        outs.append(read_samples_jsonl(tmp_path / f"c{s}.jsonl")[1])
    for k in outs[0]:
        np.testing.assert_allclose(outs[1][k], outs[0][k], atol=1e-12)
        np.testing.assert_allclose(outs[2][k], outs[0][k], atol=1e-12)


def test_sample_unknown_condition(trained, tmp_path):
    assert main(["sample", str(trained / "mf" / "mf_last.json"), "--conditions", "0,7",
                 "--out", str(tmp_path / "x.jsonl")]) == 1


def test_eval_dataset_subset_has_zero_distance(trained, tmp_path):
    header, data, _ = read_samples_jsonl(trained / "data" / "data.jsonl")
    subset = {k: v[:200] for k, v in data.items()}
    write_samples_jsonl(tmp_path / "s.jsonl", subset, {"config_digest": header["config_digest"], "steps": 0})
    assert main(["eval", str(tmp_path / "s.jsonl"), str(trained / "data" / "data.jsonl"),
                 "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["energy_distance"] < 0.02
    from meanflow_lab.sampling import FidelityReport
    assert FidelityReport.from_dict(rep).to_dict() == rep


def test_eval_hand_fixture(tmp_path):
    means = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]
    data = {k: np.tile(means[k], (3, 1)) for k in range(4)}
    write_samples_jsonl(tmp_path / "d.jsonl", data, {"config_digest": "x", "means": means}, kind="dataset")
    # condition 0: two right, one wrong; condition 3: one right
    samples = {0: np.array([[-0.9, -1.1], [-2.0, -0.5], [0.5, 0.5]]), 3: np.array([[1.2, 0.8]])}
    write_samples_jsonl(tmp_path / "s.jsonl", samples, {"config_digest": "x", "steps": 1})
    assert main(["eval", str(tmp_path / "s.jsonl"), str(tmp_path / "d.jsonl"), "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["per_condition"] == {"0": 2 / 3, "3": 1.0}
    assert rep["overall"] == 0.75


def test_eval_refuses_mismatched_digest(trained, tmp_path):
    _, data, _ = read_samples_jsonl(trained / "data" / "data.jsonl")
    write_samples_jsonl(tmp_path / "s.jsonl", {0: data[0][:10]}, {"config_digest": "other"})
    args = ["eval", str(tmp_path / "s.jsonl"), str(trained / "data" / "data.jsonl")]
    assert main(args) == 1
    assert main(args + ["--force-digest"]) == 0


def test_eval_dimension_mismatch(trained, tmp_path):
    header, _, _ = read_samples_jsonl(trained / "data" / "data.jsonl")
    write_samples_jsonl(tmp_path / "s.jsonl", {0: np.zeros((3, 3))}, {"config_digest": header["config_digest"]})
    assert main(["eval", str(tmp_path / "s.jsonl"), str(trained / "data" / "data.jsonl")]) == 1


# analyze ----------------------------------------------------------------------------------------------

def _analyze(tmp_path, corpus, *flags):
    path = save_corpus(tmp_path / "c.jsonl", corpus)
    out = tmp_path / "a.json"
    rc = main(["analyze", str(path), *flags, "--out", str(out)])
    return rc, (json.loads(out.read_text()) if rc == 0 else None)


def test_analyze_identical_tokens(tmp_path):
    corpus = Corpus([EmbeddingRecord(f"r{i}", np.tile([1.0, float(i)], (4, 1))) for i in range(3)])
    rc, doc = _analyze(tmp_path, corpus, "--metric", "disentanglement", "--rho", "0.5")
    assert rc == 0 and doc["score"] == pytest.approx(1.0, abs=1e-12)


def test_analyze_hand_fixture(tmp_path):
    corpus = Corpus([
        EmbeddingRecord("r1", np.array([[1.0, 0.0]]), vision_embedding=np.array([1.0, 0.0])),
        EmbeddingRecord("r2", np.array([[1.0, 0.1]]), vision_embedding=np.array([0.0, 1.0])),
        EmbeddingRecord("r3", np.array([[0.0, 1.0]]), vision_embedding=np.array([1.0, 1.0])),
    ])
    rc, doc = _analyze(tmp_path, corpus, "--metric", "discriminability", "--k", "2")
    assert rc == 0 and doc["score"] == pytest.approx(np.sqrt(2) / 3, abs=1e-12)
    assert set(doc["per_item"]) == {"r1", "r2", "r3"}


def test_analyze_separation_ordering(tmp_path):
    scores = {}
    for sep in (4.0, 0.5):
        table = gen_synthetic_embeddings(SyntheticEmbedSpec(separation=sep, tokens_per_attribute=4), 0)
        corpus = synthetic_corpus(table, 30, 0, token_noise=0.5)
        d = tmp_path / str(sep)
        d.mkdir()
        rc, doc = _analyze(d, corpus, "--metric", "discriminability", "--query-count", "60", "--seed", "1")
        assert rc == 0 and doc["params"]["query_count"] == 60
        scores[sep] = doc["score"]
    assert scores[4.0] > scores[0.5]


def test_analyze_missing_vision_exits_1(tmp_path, capsys):
    corpus = Corpus([EmbeddingRecord("a", np.ones((2, 2))), EmbeddingRecord("b", np.ones((2, 2)))])
    rc, _ = _analyze(tmp_path, corpus, "--metric", "discriminability")
    assert rc == 1 and "['a', 'b']" in capsys.readouterr().err


# repro ---------------------------------------------------------------------------------------------------

def test_repro_unknown_recipe_lists_available(capsys):
    assert main(["repro", "nope"]) == 1
    err = capsys.readouterr().err
    assert "oracle-suite" in err and "fig5-desk" in err


def test_repro_discriminability_ablation(tmp_path):
    assert main(["repro", "discriminability-ablation", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "discriminability-ablation.json").read_text())
    assert doc["passed"] and len(doc["checks"]) == 3
