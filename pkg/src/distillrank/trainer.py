"""Iterative retrieve -> rerank -> fine-tune training loop.

Each iteration freezes teacher outputs for the current retriever
(prepare_iteration), then runs SGD over shuffled query batches
(train_iteration).  Per-query gradient contributions are collected
sparsely and merged in query order, so ``workers`` only changes wall
time, never the resulting bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus import save_run
from .distill import BatchItem, LossSettings, loss_total, sample_pairs
from .encoder import MODES, EncoderModel
from .errors import TrainingDivergedError, ValidationError
from .evaluation import evaluate_runs
from .index import build_index, retrieve
from .teacher import QueryTeacherScores, TeacherScores, rerank_pointwise

_REDUCTIONS = ("sum", "mean")


@dataclass
class DistillConfig:
    """Every knob of the training loop in one flat, serializable record."""

    dim: int = 32
    similarity: str = "dot"
    shared_encoders: bool = False
    seed: int = 0
    k: int = 100
    delta: int = 10
    pair_budget: int = 50
    tau: float = 1.0
    lambda_kd: float = 1.0
    lambda_pair: float = 3.0
    batch_size: int = 32
    candidates_per_query: int = 64
    learning_rate: float = 1e-5
    momentum: float = 0.0
    steps: int = 100
    iterations: int = 1
    use_cl: bool = True
    use_kd: bool = True
    use_pair: bool = True
    zero_shot: bool = False
    pair_reduction: str = "mean"
    workers: int = 1
    eval_k: int = 10

    def validate(self):
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")
        if self.similarity not in MODES:
            raise ValidationError(f"unknown similarity {self.similarity!r}")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.delta < 1:
            raise ValidationError("delta must be >= 1")
        if self.pair_budget < 1:
            raise ValidationError("pair_budget must be >= 1")
        if self.tau <= 0:
            raise ValidationError("tau must be > 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.candidates_per_query < 2:
            raise ValidationError("candidates_per_query must be >= 2")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.pair_reduction not in _REDUCTIONS:
            raise ValidationError(f"unknown pair_reduction {self.pair_reduction!r}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.eval_k < 1:
            raise ValidationError("eval_k must be >= 1")
        return self

    def loss_settings(self):
        # Zero-shot training discards the contrastive term outright.
        return LossSettings(
            tau=self.tau,
            lambda_kd=self.lambda_kd,
            lambda_pair=self.lambda_pair,
            use_cl=self.use_cl and not self.zero_shot,
            use_kd=self.use_kd,
            use_pair=self.use_pair,
            zero_shot=self.zero_shot,
            pair_reduction=self.pair_reduction,
        )

    def to_text(self):
        """key=value lines, one per field, in field order; round-trips."""
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, base=None):
        config = dataclasses.replace(base) if base is not None else cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        defaults = cls()
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not sep or not key:
                raise ValidationError(f"config line {line_no}: expected key=value")
            if key not in types:
                raise ValidationError(f"config line {line_no}: unknown key {key!r}")
            setattr(config, key, _coerce(key, value, getattr(defaults, key)))
        return config


def _coerce(key, text, default):
    if isinstance(default, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValidationError(f"config key {key!r}: {text!r} is not a boolean")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {text!r}")
    return text


def derive_seed(base, *parts):
    """Stable 63-bit stream seed from a base seed and string parts."""
    payload = ":".join([str(int(base))] + [str(p) for p in parts])
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


class SGD:
    """Plain SGD with optional heavy-ball momentum over the model tables."""

    def __init__(self, learning_rate, momentum=0.0):
        if learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocity = None

    def step(self, model, gradient):
        if self.velocity is None:
            self.velocity = {
                name: np.zeros_like(arr) for name, arr in model.tables.items()
            }
        for name, table in model.tables.items():
            g = gradient.tables[name]
            if self.momentum > 0.0:
                v = self.velocity[name]
                v *= self.momentum
                v += g
                update = v
            else:
                update = g
            table -= self.learning_rate * update


def _reranked_order(pointwise):
    return sorted(pointwise, key=lambda d: (-pointwise[d], d))


def prepare_iteration(
    model, corpus, query_ids, point_teacher, pair_teacher, config, seed
):
    """Retrieve, rerank, and sample teacher-labeled pairs for each query.

    Returns (TeacherScores, retrieved runs by query_id).  Queries are
    processed in sorted id order and pair sampling seeds are derived per
    query, so output is independent of caller iteration order.
    """
    config.validate()
    index = build_index(model, corpus)
    scores = TeacherScores()
    runs = {}
    for query_id in sorted(query_ids):
        if query_id not in corpus.queries:
            raise ValidationError(f"unknown query {query_id!r}")
        query = corpus.queries[query_id]
        run = retrieve(index, model, query, config.k)
        runs[query_id] = run
        reranked, scored = rerank_pointwise(run, query, corpus, point_teacher)
        pointwise = {d: scored[d] for d in reranked.doc_ids()}
        sample = sample_pairs(
            reranked,
            config.delta,
            config.pair_budget,
            derive_seed(seed, "pairs", query_id),
        )
        probs = [
            pair_teacher.prefer(
                query, corpus.documents[p.doc_i], corpus.documents[p.doc_j]
            )
            for p in sample.pairs
        ]
        scores.add(QueryTeacherScores(query_id, pointwise, sample.with_probs(probs)))
    return scores, runs


def _select_positive(judgments, query_id):
    relevant = judgments.relevant_docs(query_id)
    if not relevant:
        return None
    best = max(relevant.values())
    return min(d for d, g in relevant.items() if g == best)


def _build_batch_items(corpus, teacher_scores, batch_ids, positives, config):
    """Assemble per-query loss inputs for one optimizer step.

    Contrastive negatives are the reranked top-k minus the positive, then
    the other batch queries' positives, deduplicated in that order and
    capped so the candidate list holds ``candidates_per_query`` docs.
    """
    items = []
    for query_id in batch_ids:
        entry = teacher_scores[query_id]
        order = _reranked_order(entry.pointwise)
        kd_docs = [corpus.documents[d] for d in order]
        kd_scores = np.array([entry.pointwise[d] for d in order])
        positive_id = positives.get(query_id)
        positive = None
        negatives = []
        if positive_id is not None:
            positive = corpus.documents[positive_id]
            seen = {positive_id}
            pool = [d for d in order]
            pool.extend(
                positives[other]
                for other in batch_ids
                if other != query_id and positives.get(other) is not None
            )
            for doc_id in pool:
                if doc_id in seen:
                    continue
                seen.add(doc_id)
                negatives.append(corpus.documents[doc_id])
                if len(negatives) >= config.candidates_per_query - 1:
                    break
        items.append(
            BatchItem(
                query=corpus.queries[query_id],
                kd_docs=kd_docs,
                kd_teacher_scores=kd_scores,
                pairs=entry.pairs,
                positive=positive,
                negatives=negatives,
            )
        )
    return items


def train_iteration(
    model, corpus, teacher_scores, judgments, config, seed, log_path=None
):
    """Run ``config.steps`` SGD updates against frozen teacher outputs.

    ``judgments`` supplies contrastive positives and may be None when the
    contrastive term is disabled (always the case in zero-shot mode).
    Returns the per-step loss records that were also written to
    ``log_path`` as JSONL.
    """
    config.validate()
    settings = config.loss_settings()
    query_ids = sorted(teacher_scores.query_ids())
    if not query_ids:
        raise ValidationError("no queries with teacher scores")
    for query_id in query_ids:
        if query_id not in corpus.queries:
            raise ValidationError(f"teacher scores reference unknown query {query_id!r}")

    positives = {}
    if settings.use_cl:
        if judgments is None:
            raise ValidationError("contrastive training requires judgments")
        for query_id in query_ids:
            positives[query_id] = _select_positive(judgments, query_id)

    optimizer = SGD(config.learning_rate, config.momentum)
    rng = np.random.default_rng(derive_seed(seed, "batches"))
    batch_size = min(config.batch_size, len(query_ids))
    order = []
    records = []
    executor = None
    map_fn = None
    try:
        if config.workers > 1:
            executor = ThreadPoolExecutor(max_workers=config.workers)
            map_fn = executor.map
        for step in range(config.steps):
            if len(order) < batch_size:
                shuffled = list(rng.permutation(query_ids))
                order.extend(str(q) for q in shuffled)
            batch_ids = order[:batch_size]
            del order[:batch_size]
            items = _build_batch_items(
                corpus, teacher_scores, batch_ids, positives, config
            )
            breakdown = loss_total(
                model, items, settings, corpus.documents, map_fn=map_fn
            )
            record = breakdown.to_log_record(step)
            records.append(record)
            if not all(np.isfinite(v) for v in record.values()):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}",
                    dump={"record": record, "batch": batch_ids},
                )
            combined = breakdown.combined_gradient(settings)
            combined.check_finite()
            optimizer.step(model, combined)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return records


def evaluate_model(model, corpus, query_ids, judgments, config, run_path=None):
    """Retrieve with a fresh index and score the dev queries."""
    index = build_index(model, corpus)
    runs = {}
    for query_id in sorted(query_ids):
        if query_id not in corpus.queries:
            raise ValidationError(f"unknown query {query_id!r}")
        runs[query_id] = retrieve(index, model, corpus.queries[query_id], config.eval_k)
    if run_path is not None:
        save_run(list(runs.values()), run_path)
    return evaluate_runs(runs, judgments, ks=(config.eval_k,))


@dataclass
class IterationRecord:
    iteration: int
    fingerprint: str
    dev_means: dict = field(default_factory=dict)
    checkpoint: str = ""

    def to_json_obj(self):
        # Basename only, so summaries are identical across working dirs.
        return {
            "iteration": self.iteration,
            "fingerprint": self.fingerprint,
            "dev_means": self.dev_means,
            "checkpoint": os.path.basename(self.checkpoint),
        }


def run_iterative(
    corpus,
    train_ids,
    dev_ids,
    point_teacher,
    pair_teacher,
    config,
    workdir,
    judgments=None,
    dev_judgments=None,
    model=None,
):
    """Full training loop with per-iteration artifacts in ``workdir``.

    Writes iter<N>.ckpt, iter<N>.scores.jsonl, iter<N>.log.jsonl for each
    iteration plus iter0.ckpt for the initial model and summary.json at
    the end.  ``judgments`` feeds the contrastive term; ``dev_judgments``
    (default: same object) feeds evaluation only.
    """
    config.validate()
    if dev_judgments is None:
        dev_judgments = judgments
    os.makedirs(workdir, exist_ok=True)
    if model is None:
        model = EncoderModel(
            vocab_size=len(corpus.vocabulary),
            dim=config.dim,
            mode=config.similarity,
            seed=config.seed,
            shared=config.shared_encoders,
        )
    records = []

    def snapshot(iteration):
        path = os.path.join(workdir, f"iter{iteration}.ckpt")
        model.save(path)
        record = IterationRecord(
            iteration=iteration, fingerprint=model.fingerprint(), checkpoint=path
        )
        if dev_ids and dev_judgments is not None:
            report = evaluate_model(model, corpus, dev_ids, dev_judgments, config)
            record.dev_means = {
                name: report[name].mean for name in sorted(report.names())
            }
        records.append(record)
        return record

    snapshot(0)
    for iteration in range(1, config.iterations + 1):
        scores, _ = prepare_iteration(
            model,
            corpus,
            train_ids,
            point_teacher,
            pair_teacher,
            config,
            derive_seed(config.seed, "iteration", iteration),
        )
        scores.save(os.path.join(workdir, f"iter{iteration}.scores.jsonl"))
        train_iteration(
            model,
            corpus,
            scores,
            judgments,
            config,
            derive_seed(config.seed, "train", iteration),
            log_path=os.path.join(workdir, f"iter{iteration}.log.jsonl"),
        )
        snapshot(iteration)

    # Config lives in its own file: execution knobs like ``workers`` may
    # differ between runs whose result artifacts are still byte-identical.
    with open(os.path.join(workdir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config.to_text())
    summary = {"iterations": [r.to_json_obj() for r in records]}
    with open(os.path.join(workdir, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return records
