"""Text-representation quality metrics over precomputed embedding corpora.

Two measurements:

* discriminability -- retrieve the top-k records by cosine similarity of
  mean-pooled text embeddings, then score how similar the retrieved records'
  vision-backbone embeddings are to the query's;
* disentanglement -- drop a random fraction of tokens and measure how close
  the pooled embedding stays to the original.

Also generates synthetic condition embeddings (compositional vs entangled) for
the generative experiments, and synthetic corpora built on them.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc

CORPUS_FORMAT_VERSION = 1
RETRIEVAL_MODES = ("text", "image")


@dataclass
class EmbeddingRecord:
    id: str
    token_embeddings: np.ndarray
    image_embedding: np.ndarray | None = None
    vision_embedding: np.ndarray | None = None
    text: str | None = None

    def __post_init__(self):
        self.id = str(self.id)
        tok = np.asarray(self.token_embeddings, dtype=np.float64)
        if tok.ndim != 2 or tok.shape[0] < 1:
            raise ValueError(f"record {self.id!r}: token_embeddings must be a non-empty (L, D) matrix, "
                             f"got shape {tok.shape}")
        self.token_embeddings = nc.check_finite(tok, f"record {self.id!r} tokens")
        for name in ("image_embedding", "vision_embedding"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, nc.check_finite(np.asarray(val, dtype=np.float64).ravel(),
                                                    f"record {self.id!r} {name}"))

    @property
    def seq_len(self) -> int:
        return self.token_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.token_embeddings.shape[1]


@dataclass
class Corpus:
    records: list[EmbeddingRecord]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.records:
            raise ValueError("corpus is empty")
        dims = {r.dim for r in self.records}
        if len(dims) != 1:
            raise ValueError(f"token dims differ within corpus: {sorted(dims)}")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate record ids: {dup[:10]}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int:
        return self.records[0].dim

    @cached_property
    def index(self) -> dict[str, int]:
        return {r.id: i for i, r in enumerate(self.records)}

    @cached_property
    def pooled(self) -> np.ndarray:
        return np.stack([mean_pool(r.token_embeddings) for r in self.records])

    @cached_property
    def _id_rank(self) -> np.ndarray:
        order = sorted(range(len(self.records)), key=lambda i: self.records[i].id)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        return rank

    def get(self, rid: str) -> EmbeddingRecord:
        return self.records[self.index[rid]]

    def subset(self, ids: Iterable[str]) -> "Corpus":
        return Corpus([self.get(i) for i in ids], dict(self.meta))


# basic measures ------------------------------------------------------------

def mean_pool(token_embeddings) -> np.ndarray:
    """Average of the token vectors along the sequence axis."""
    tok = np.asarray(token_embeddings, dtype=np.float64)
    if tok.ndim != 2 or tok.shape[0] == 0:
        raise ValueError(f"mean_pool needs a non-empty (L, D) sequence, got shape {tok.shape}")
    return tok.mean(axis=0)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise nc.ShapeError("cosine_similarity", a.shape, b.shape)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine measure is undefined for a zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def cosine_distance(a, b) -> float:
    """1 - cosine similarity, in [0, 2]."""
    return 1.0 - cosine_similarity(a, b)


# retrieval -------------------------------------------------------------------

def _similarities(query_vec: np.ndarray, mat: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(query_vec)
    norms = np.linalg.norm(mat, axis=1)
    if qn == 0 or np.any(norms == 0):
        raise ValueError("cosine measure is undefined for a zero-norm vector")
    return (mat @ query_vec) / (norms * qn)


def retrieve_topk(query: EmbeddingRecord, corpus: Corpus, k: int, mode: str = "text",
                  exclude: Iterable[str] = ()) -> list[str]:
    """Ids of the k corpus records most cosine-similar to the query's pooled text.

    ``mode="text"`` compares against the records' pooled text embeddings,
    ``mode="image"`` against their image embeddings (dims must agree). Ties
    go to the lexicographically smaller id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if mode not in RETRIEVAL_MODES:
        raise ValueError(f"mode must be one of {RETRIEVAL_MODES}, got {mode!r}")
    q = mean_pool(query.token_embeddings)
    if mode == "text":
        mat = corpus.pooled
    else:
        missing = [r.id for r in corpus.records if r.image_embedding is None]
        if missing:
            raise ValueError(f"image retrieval needs image_embedding on every record; missing: {missing[:10]}")
        mat = np.stack([r.image_embedding for r in corpus.records])
    if mat.shape[1] != q.shape[0]:
        raise nc.ShapeError("retrieve_topk", q.shape, mat.shape[1:], detail=f"{mode} mode dims differ")
    sims = _similarities(q, mat)
    order = np.lexsort((corpus._id_rank, -sims))
    skip = set(exclude)
    out = []
    for i in order:
        rid = corpus.records[i].id
        if rid in skip:
            continue
        out.append(rid)
        if len(out) == k:
            break
    return out


def _require_vision(records: Sequence[EmbeddingRecord]):
    missing = [r.id for r in records if r.vision_embedding is None]
    if missing:
        raise ValueError(f"vision_embedding missing for record ids: {missing}")


def discriminability_per_query(queries: Corpus | Sequence[EmbeddingRecord], corpus: Corpus, k: int = 2,
                               mode: str = "text", exclude_self: bool = True) -> dict[str, float]:
    """Per query: mean vision-embedding cosine similarity between the query and its top-k retrievals.

    The query record itself is excluded from its own retrieval list by default
    (otherwise top-1 is trivially the query).
    """
    qs = list(queries.records if isinstance(queries, Corpus) else queries)
    _require_vision(qs)
    _require_vision(corpus.records)
    out = {}
    for q in qs:
        hits = retrieve_topk(q, corpus, k, mode, exclude=(q.id,) if exclude_self else ())
        out[q.id] = float(np.mean([cosine_similarity(corpus.get(h).vision_embedding, q.vision_embedding)
                                   for h in hits]))
    return out


def discriminability_score(queries, corpus: Corpus, k: int = 2, mode: str = "text",
                           exclude_self: bool = True) -> float:
    per = discriminability_per_query(queries, corpus, k, mode, exclude_self)
    return float(np.mean(list(per.values())))


def select_queries(corpus: Corpus, count: int | None, seed: int) -> list[EmbeddingRecord]:
    """Seeded uniform subset of ``count`` records (all of them when count is None or too big)."""
    if count is None or count >= len(corpus):
        return list(corpus.records)
    idx = np.sort(nc.make_rng(seed, "queries").choice(len(corpus), size=count, replace=False))
    return [corpus.records[i] for i in idx]


# ablation / disentanglement ------------------------------------------------------

def n_removed(seq_len: int, rho: float) -> int:
    """round(rho * L) with halves rounded up, capped so one token survives."""
    return min(int(math.floor(rho * seq_len + 0.5)), seq_len - 1)


def ablate_tokens(record: EmbeddingRecord, rho: float, rng: nc.Rng) -> EmbeddingRecord:
    """Copy of ``record`` with round(rho * L) token positions removed uniformly at random.

    Positions are drawn over the rows sorted lexicographically, so the
    selection does not depend on the order the tokens are stored in.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie strictly between 0 and 1, got {rho}")
    tok = record.token_embeddings
    if tok.shape[0] < 2:
        raise ValueError(f"record {record.id!r} has a single token; nothing can be removed")
    canon = np.lexsort(tok.T[::-1])
    drop = canon[rng.choice(tok.shape[0], size=n_removed(tok.shape[0], rho), replace=False)]
    keep = np.setdiff1d(np.arange(tok.shape[0]), drop)
    return EmbeddingRecord(record.id, tok[keep], record.image_embedding, record.vision_embedding, record.text)


def disentanglement_per_record(corpus: Corpus, rho: float = 0.3, seed: int = 0) -> dict[str, float]:
    """Cosine similarity of pooled original vs pooled ablated text, per record.

    Each record's ablation stream is ``make_rng(seed, "ablate", record.id)``.
    """
    out = {}
    for rec in corpus.records:
        ab = ablate_tokens(rec, rho, nc.make_rng(seed, "ablate", rec.id))
        out[rec.id] = cosine_similarity(mean_pool(rec.token_embeddings), mean_pool(ab.token_embeddings))
    return out


def disentanglement_score(corpus: Corpus, rho: float = 0.3, seed: int = 0) -> float:
    return float(np.mean(list(disentanglement_per_record(corpus, rho, seed).values())))


# synthetic condition embeddings -----------------------------------------------------

EMBED_MODES = ("disentangled", "entangled")


@dataclass(frozen=True)
class SyntheticEmbedSpec:
    n_attributes: int = 2
    values_per_attribute: int = 2
    dim: int = 8
    separation: float = 4.0
    mode: str = "disentangled"
    tokens_per_attribute: int = 3

    def __post_init__(self):
        if self.mode not in EMBED_MODES:
            raise ValueError(f"mode must be one of {EMBED_MODES}, got {self.mode!r}")
        if not self.separation > 0:
            raise ValueError(f"separation must be positive, got {self.separation}")
        if self.n_attributes < 1 or self.values_per_attribute < 1 or self.tokens_per_attribute < 1:
            raise ValueError("attribute counts must be positive")
        if self.n_attributes * self.values_per_attribute > self.dim:
            raise ValueError(f"dim {self.dim} cannot host {self.n_attributes} x {self.values_per_attribute} "
                             "concatenated attribute codes")

    @property
    def conditions(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.values_per_attribute), repeat=self.n_attributes))

    @property
    def seq_len(self) -> int:
        return self.n_attributes * self.tokens_per_attribute


@dataclass
class EmbeddingTable:
    """Condition combination -> psi vector, with the token sequences that pool to it."""

    spec: SyntheticEmbedSpec
    seed: int
    vectors: np.ndarray  # (K, dim), row i belongs to spec.conditions[i]
    tokens: np.ndarray  # (K, L, dim), mean over L equals vectors

    @property
    def conditions(self) -> list[tuple[int, ...]]:
        return self.spec.conditions

    def __getitem__(self, combo: tuple[int, ...]) -> np.ndarray:
        return self.vectors[self.conditions.index(tuple(combo))]

    def lookup(self, cond_ids) -> np.ndarray:
        return self.vectors[np.asarray(cond_ids, dtype=np.int64)]

    def to_dict(self) -> dict:
        return {
            "spec": vars(self.spec).copy(),
            "seed": self.seed,
            "conditions": [list(c) for c in self.conditions],
            "vectors": self.vectors.tolist(),
            "tokens": self.tokens.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EmbeddingTable":
        return cls(SyntheticEmbedSpec(**doc["spec"]), int(doc["seed"]),
                   np.asarray(doc["vectors"], dtype=np.float64), np.asarray(doc["tokens"], dtype=np.float64))


def _mean_pairwise_distance(v: np.ndarray) -> float:
    if len(v) < 2:
        return 0.0
    d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
    iu = np.triu_indices(len(v), 1)
    return float(d[iu].mean())


def gen_synthetic_embeddings(spec: SyntheticEmbedSpec, seed: int) -> EmbeddingTable:
    """Condition-embedding table for an attribute layout.

    disentangled: psi is the concatenation of one-hot codes, one block per
      attribute, scaled by ``separation`` (zero padded up to ``dim``). Each
      attribute contributes ``tokens_per_attribute`` identical tokens that
      carry only its own block.
    entangled: every combination gets its own independent Gaussian tokens;
      psi is their mean, and everything is rescaled so the mean pairwise
      distance between psi vectors equals the disentangled layout's.
    """
    conds = spec.conditions
    K, A, V, L = len(conds), spec.n_attributes, spec.values_per_attribute, spec.seq_len
    disent = np.zeros((K, spec.dim))
    for i, combo in enumerate(conds):
        for a, val in enumerate(combo):
            disent[i, a * V + val] = spec.separation
    if spec.mode == "disentangled":
        tokens = np.zeros((K, L, spec.dim))
        for i, combo in enumerate(conds):
            for a, val in enumerate(combo):
                sl = slice(a * spec.tokens_per_attribute, (a + 1) * spec.tokens_per_attribute)
                tokens[i, sl, a * V + val] = A * spec.separation
        return EmbeddingTable(spec, seed, tokens.mean(axis=1), tokens)

    rng = nc.make_rng(seed, "entangled-embeddings")
    tokens = rng.standard_normal((K, L, spec.dim))
    vectors = tokens.mean(axis=1)
    target = _mean_pairwise_distance(disent)
    if K > 1:
        scale = target / _mean_pairwise_distance(vectors)
    else:
        scale = spec.separation / max(np.linalg.norm(vectors[0]), 1e-300)
    return EmbeddingTable(spec, seed, vectors * scale, tokens * scale)


def synthetic_corpus(table: EmbeddingTable, per_condition: int, seed: int, token_noise: float = 1.0,
                     vision_dim: int = 16, vision_noise: float = 0.5) -> Corpus:
    """Caption-like records for every condition: the condition's tokens plus
    per-record Gaussian jitter, and a vision embedding drawn around a
    per-condition prototype."""
    rng = nc.make_rng(seed, "synthetic-corpus")
    K = len(table.conditions)
    protos = rng.standard_normal((K, vision_dim))
    records = []
    for i, combo in enumerate(table.conditions):
        for j in range(per_condition):
            tok = table.tokens[i] + token_noise * rng.standard_normal(table.tokens[i].shape)
            vis = protos[i] + vision_noise * rng.standard_normal(vision_dim)
            rid = f"c{i:03d}-{j:05d}"
            records.append(EmbeddingRecord(rid, tok, None, vis, "attrs " + " ".join(map(str, combo))))
    meta = {"token_dim": table.spec.dim, "vision_dim": vision_dim, "source": "synthetic",
            "embed_mode": table.spec.mode, "separation": table.spec.separation}
    return Corpus(records, meta)


# corpus files ------------------------------------------------------------------------

def _opt_list(x):
    return None if x is None else [float(v) for v in np.asarray(x).ravel()]


def save_corpus(path: str | os.PathLike, corpus: Corpus) -> Path:
    """JSONL: one metadata header line, then one record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    first = corpus.records[0]
    header = {
        "format_version": CORPUS_FORMAT_VERSION,
        "kind": "corpus",
        "n_records": len(corpus),
        "dims": {
            "token_dim": corpus.dim,
            "image_dim": None if first.image_embedding is None else int(first.image_embedding.size),
            "vision_dim": None if first.vision_embedding is None else int(first.vision_embedding.size),
        },
        "meta": corpus.meta,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in corpus.records:
            row = {"id": r.id, "token_embeddings": r.token_embeddings.tolist()}
            if r.image_embedding is not None:
                row["image_embedding"] = _opt_list(r.image_embedding)
            if r.vision_embedding is not None:
                row["vision_embedding"] = _opt_list(r.vision_embedding)
            if r.text is not None:
                row["text"] = r.text
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def load_corpus(path: str | os.PathLike) -> Corpus:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty corpus file")
    header = json.loads(lines[0])
    if header.get("kind") != "corpus" or header.get("format_version") != CORPUS_FORMAT_VERSION:
        raise ValueError(f"{path}: first line is not a version-{CORPUS_FORMAT_VERSION} corpus header")
    records = []
    for n, ln in enumerate(lines[1:], start=2):
        row = json.loads(ln)
        try:
            records.append(EmbeddingRecord(row["id"], row["token_embeddings"], row.get("image_embedding"),
                                           row.get("vision_embedding"), row.get("text")))
        except KeyError as exc:
            raise ValueError(f"{path}:{n}: missing field {exc}") from None
    corpus = Corpus(records, dict(header.get("meta") or {}))
    if corpus.dim != header["dims"]["token_dim"]:
        raise ValueError(f"{path}: header token_dim {header['dims']['token_dim']} != records' {corpus.dim}")
    return corpus
