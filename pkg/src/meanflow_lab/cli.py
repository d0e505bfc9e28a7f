"""Command-line harness: gen-data, train, sample, eval, analyze, repro.

Exit codes: 0 success, 1 validation error, 2 numeric failure, 3 a repro
recipe missed one of its acceptance thresholds.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import numcore as nc
from .config import ExperimentConfig, load_config, save_config
from .encoder_analysis import (
    disentanglement_per_record,
    discriminability_per_query,
    gen_synthetic_embeddings,
    load_corpus,
    select_queries,
)
from .recipes import RECIPES, held_out, run_recipe, sample_conditions, score_runs
from .sampling import condition_fidelity, curvature_stats, energy_distance, read_samples_jsonl, \
    write_samples_jsonl
from .training import TrainingDiverged, condition_table, init_net, train
from .velocity_net import Checkpoint, duplicate_time_embedding, load_checkpoint, save_checkpoint

log = logging.getLogger("meanflow_lab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 1, 2, 3


class CliError(Exception):
    """Validation failure reported to the user with exit code 1."""


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")
    return path


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _ckpt_config(ckpt: Checkpoint) -> ExperimentConfig:
    doc = ckpt.metadata.get("config")
    if doc is None:
        raise CliError("checkpoint metadata carries no config; it was not written by `train`")
    return ExperimentConfig.from_dict(doc)


# gen-data --------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    task = cfg.build_task()
    n = cfg.task.n_samples
    data = {k: task.sample_condition(nc.make_rng(cfg.seed, "data", k), k, n) for k in range(task.n_conditions)}
    digest = cfg.digest()
    header = {"config_digest": digest, "seed": cfg.seed, "n_per_condition": n,
              "means": np.asarray(task.means).tolist(), "conditions": [list(c) for c in task.conditions]}
    write_samples_jsonl(out / "data.jsonl", data, header, kind="dataset")
    files = ["data.jsonl", "config.json"]
    save_config(out / "config.json", cfg)
    spec = cfg.embed_spec()
    if spec is not None:
        table = gen_synthetic_embeddings(spec, cfg.embedding.seed)
        _write_json(out / "embeddings.json", dict(table.to_dict(), config_digest=digest))
        files.append("embeddings.json")
    manifest = {"config_digest": digest, "seed": cfg.seed, "task": cfg.task.kind,
                "n_conditions": task.n_conditions, "condition_ids": list(range(task.n_conditions)),
                "conditions": header["conditions"], "n_per_condition": n, "files": sorted(files)}
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {task.n_conditions} condition(s) x {n} samples to {out}")
    return EXIT_OK


# train --------------------------------------------------------------------------------------

METRIC_FIELDS = ["step", "loss", "fidelity_1", "fidelity_2", "fidelity_4",
                 "energy_distance_1", "energy_distance_2", "energy_distance_4", "curvature_4"]


def _evaluate(net, cfg: ExperimentConfig, task, table, held, step: int) -> dict:
    row = {"step": step}
    n = cfg.train.eval_samples
    for s in (1, 2, 4):
        runs = sample_conditions(net, table, range(task.n_conditions), s, n, cfg.seed,
                                 record=(s == 4))
        rep = score_runs(runs, task, held, max_samples=n)
        row[f"fidelity_{s}"] = rep.overall
        row[f"energy_distance_{s}"] = rep.energy_distance
        if s == 4:
            row["curvature_4"] = rep.curvature
    return row


def cmd_train(args) -> int:
    out = Path(args.out)
    init_from = load_checkpoint(args.init_from) if args.init_from else None
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        cfg = _ckpt_config(resume)
        if args.config or args.seed is not None:
            raise CliError("--resume takes its config from the checkpoint; drop --config/--seed")
        if resume.mode != args.mode:
            raise CliError(f"--resume checkpoint is mode {resume.mode!r} but --mode is {args.mode!r}")
        if init_from is None and resume.metadata.get("init_from"):
            init_from = load_checkpoint(resume.metadata["init_from"])
    else:
        cfg = _load_cfg(args)

    total = args.steps if args.steps is not None else (cfg.train.fm_steps if args.mode == "fm" else cfg.train.mf_steps)
    if resume is not None:
        total = int(resume.metadata["total_steps"])
    if args.mode == "fm" and init_from is not None:
        raise CliError("--init-from is for mf finetuning; continue an fm run with --resume")
    v_source = "conditional"
    if args.mode == "mf":
        if init_from is not None and init_from.mode != "fm":
            raise CliError(f"--init-from needs an fm checkpoint, got mode {init_from.mode!r}")
        if init_from is not None and cfg.train.v_source == "pretrained":
            v_source = init_from.net
        elif init_from is None and cfg.train.v_source == "pretrained":
            log.info("mf from scratch: bootstrapping from the conditional velocity")

    if resume is not None:
        net, opt, start = resume.net, resume.optimizer, int(resume.metadata["step"])
    elif args.mode == "mf" and init_from is not None:
        net, opt, start = duplicate_time_embedding(init_from), None, 0
    else:
        net, opt, start = init_net(cfg, args.mode), None, 0

    task, table = cfg.build_task(), condition_table(cfg)
    held = held_out(task, cfg.train.eval_samples, cfg.seed)
    digest = cfg.digest()
    save_config(out / "config.json", cfg)
    meta_base = {"config": cfg.to_dict(), "config_digest": digest, "seed": cfg.seed, "total_steps": total,
                 "init_from": str(Path(args.init_from).resolve()) if args.init_from else
                 (resume.metadata.get("init_from") if resume is not None else None),
                 "v_source": "pretrained" if not isinstance(v_source, str) else "conditional"}
    metrics_path = out / "metrics.csv"
    rows = []
    if resume is not None and metrics_path.exists():
        with open(metrics_path) as fh:
            rows = [r for r in csv.DictReader(fh) if int(r["step"]) <= start]
    window: list[float] = []
    last_good = {"net": net, "opt": opt, "step": start}

    def save(name: str, step: int, n, o):
        save_checkpoint(out / name, Checkpoint(n, dict(meta_base, step=step), o))

    def on_step(step, cur, cur_opt, loss):
        window.append(loss)
        last_good.update(net=cur, opt=cur_opt, step=step)
        if step % cfg.train.eval_every == 0 or step == total:
            row = {"step": step, "loss": float(np.mean(window))}
            row.update(_evaluate(cur, cfg, task, table, held, step))
            window.clear()
            rows.append(row)
            log.info("step %d loss %.5g fidelity 1/2/4 %.4f/%.4f/%.4f", step, row["loss"], row["fidelity_1"],
                     row["fidelity_2"], row["fidelity_4"])
            _write_metrics(metrics_path, rows)
        if step % cfg.train.checkpoint_every == 0 or step == total:
            save(f"ckpt_{args.mode}_{step:06d}.json", step, cur, cur_opt)
            save(f"{args.mode}_last.json", step, cur, cur_opt)

    try:
        train(net, cfg, args.mode, total - start, task=task, table=table, v_source=v_source, start_step=start,
              opt=opt, total_steps=total, on_step=on_step)
    except TrainingDiverged:
        save(f"{args.mode}_last_good.json", last_good["step"], last_good["net"], last_good["opt"])
        raise
    print(f"trained {args.mode} to step {total}; checkpoints and metrics.csv in {out}")
    return EXIT_OK


def _write_metrics(path: Path, rows: list[dict]):
    steps = [int(r["step"]) for r in rows]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise CliError("metrics rows must have strictly increasing steps")
    tmp = path.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in METRIC_FIELDS})
    tmp.replace(path)


# sample / eval ---------------------------------------------------------------------------------

def _parse_conditions(text: str | None, n_conditions: int) -> list[int]:
    if text is None:
        return list(range(n_conditions))
    try:
        ids = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise CliError(f"--conditions must be a comma-separated list of integers, got {text!r}") from None
    bad = [i for i in ids if not 0 <= i < n_conditions]
    if bad:
        raise CliError(f"unknown condition id(s) {bad}; valid ids are 0..{n_conditions - 1}")
    return ids


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _ckpt_config(ckpt)
    task, table = cfg.build_task(), condition_table(cfg)
    conds = _parse_conditions(args.conditions, task.n_conditions)
    seed = cfg.seed if args.seed is None else args.seed
    runs = sample_conditions(ckpt.net, table, conds, args.steps, args.n, seed, args.sampler, args.record)
    header = {"config_digest": ckpt.metadata.get("config_digest"), "steps": args.steps, "seed": seed,
              "sampler": ckpt.mode if args.sampler == "auto" else args.sampler,
              "checkpoint_step": ckpt.metadata.get("step"), "n_per_condition": args.n}
    path = write_samples_jsonl(args.out, runs, header)
    print(f"wrote {len(conds)} x {args.n} samples ({args.steps} step(s)) to {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    sh, samples, paths = read_samples_jsonl(args.samples)
    dh, data, _ = read_samples_jsonl(args.data)
    if dh.get("kind") != "dataset":
        raise CliError(f"{args.data} is not a dataset file (kind={dh.get('kind')!r})")
    if sh.get("config_digest") != dh.get("config_digest") and not args.force_digest:
        raise CliError(f"config digest mismatch: samples {sh.get('config_digest')} vs data "
                       f"{dh.get('config_digest')}; pass --force-digest to compare anyway")
    means = np.asarray(dh["means"], dtype=np.float64)
    for k, xs in samples.items():
        if k not in data:
            raise CliError(f"samples use condition id {k} which the dataset does not contain")
        if xs.shape[1] != data[k].shape[1]:
            raise CliError(f"dimension mismatch for condition {k}: samples {xs.shape[1]} vs data {data[k].shape[1]}")
    rep = condition_fidelity(samples, means)
    rng = nc.make_rng(0, "eval")
    per_ed = {k: energy_distance(samples[k], data[k], args.max_samples, rng) for k in sorted(samples)}
    rep.energy_distance = float(np.mean(list(per_ed.values())))
    rep.extra.update({"energy_distance_per_condition": {str(k): v for k, v in per_ed.items()},
                      "config_digest": sh.get("config_digest"), "data_digest": dh.get("config_digest"),
                      "steps": sh.get("steps"), "n_samples": int(sum(len(v) for v in samples.values()))})
    usable = [p for p in paths.values() if p.shape[0] >= 3]
    if usable:
        stats = [curvature_stats(p) for p in usable]
        rep.curvature = float(np.mean([s[0] for s in stats]))
        rep.extra["curvature_skipped"] = int(sum(s[1] for s in stats))
    doc = rep.to_dict()
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps(doc, sort_keys=True, indent=2))
    return EXIT_OK


# analyze / repro -----------------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    corpus = load_corpus(args.corpus)
    if args.metric == "discriminability":
        queries = select_queries(corpus, args.query_count, args.seed)
        per = discriminability_per_query(queries, corpus, args.k, args.retrieval)
        params = {"k": args.k, "mode": args.retrieval, "query_count": len(queries), "seed": args.seed}
    else:
        per = disentanglement_per_record(corpus, args.rho, args.seed)
        params = {"rho": args.rho, "seed": args.seed}
    doc = {"metric": args.metric, "score": float(np.mean(list(per.values()))), "params": params,
           "n_records": len(corpus), "per_item": per}
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps({k: v for k, v in doc.items() if k != "per_item"}, sort_keys=True))
    return EXIT_OK


def cmd_repro(args) -> int:
    res = run_recipe(args.recipe, seed=args.seed or 0, log=lambda s: log.info(s))
    print(res.summary())
    if args.out:
        _write_json(Path(args.out) / f"{args.recipe}.json", res.to_dict())
    return EXIT_OK if res.passed else EXIT_THRESHOLD


# parser ---------------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meanflow-lab", description="Desk-scale MeanFlow experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None, out_required=False):
        sp.add_argument("--config", help="experiment config JSON (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default=out_default, required=out_required)

    g = sub.add_parser("gen-data", help="write a dataset, embedding table and manifest")
    common(g, out_required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fm pretraining or mf finetuning with checkpoints and metrics")
    common(t, out_required=True)
    t.add_argument("--mode", choices=("fm", "mf"), required=True)
    t.add_argument("--init-from", help="fm checkpoint to finetune from (mf only)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int, help="total optimizer steps (overrides the config)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--steps", type=int, default=1)
    s.add_argument("--conditions", help="comma-separated condition ids (default: all)")
    s.add_argument("-N", "--n", type=int, default=1000, help="samples per condition")
    s.add_argument("--seed", type=int)
    s.add_argument("--sampler", choices=("auto", "mf", "fm"), default="auto")
    s.add_argument("--record", action="store_true", help="store every intermediate state")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="score samples against a dataset")
    e.add_argument("samples")
    e.add_argument("data")
    e.add_argument("--out")
    e.add_argument("--max-samples", type=int, default=5000)
    e.add_argument("--force-digest", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="corpus representation metrics")
    a.add_argument("corpus")
    a.add_argument("--metric", choices=("discriminability", "disentanglement"), required=True)
    a.add_argument("--k", type=int, default=2)
    a.add_argument("--rho", type=float, default=0.3)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--query-count", type=int)
    a.add_argument("--retrieval", choices=("text", "image"), default="text")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("repro", help=f"run a named experiment: {', '.join(sorted(RECIPES))}")
    r.add_argument("recipe")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (TrainingDiverged, nc.NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CliError, ValueError, KeyError, nc.ShapeError, FileNotFoundError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
