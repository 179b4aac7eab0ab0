"""Command line interface.

Subcommands cover the full workflow: synthesize a corpus (gen-data),
run the iterative distillation loop (train), and inspect intermediate
artifacts (retrieve, rerank, sample-pairs, evaluate, disagreement).
Exit codes: 0 on success, 1 on any package error (message on stderr),
2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .corpus import (
    QRELS_FILENAME,
    SyntheticSpec,
    TrueRelevance,
    generate_synthetic,
    load_corpus,
    load_qrels,
    load_run,
    save_corpus,
    save_qrels,
    save_run,
)
from .distill import sample_pairs
from .encoder import EncoderModel
from .errors import DistillRankError, ValidationError
from .evaluation import evaluate_runs, pairwise_disagreement
from .index import build_index, retrieve
from .teacher import (
    CachedPairwiseTeacher,
    CachedPointwiseTeacher,
    SyntheticTeacher,
    TeacherScores,
    load_teacher_cache,
    rerank_pointwise,
    save_teacher_cache,
)
from .trainer import DistillConfig, run_iterative

RELEVANCE_FILENAME = "relevance.bin"
DEV_QUERIES_FILENAME = "dev_queries.txt"

CACHE_DIR_ENV = "DISTILLRANK_CACHE_DIR"
_CACHE_FILENAME = "teacher-cache.jsonl"


def _add_teacher_args(parser):
    parser.add_argument("--beta", type=float, default=1.0,
                        help="pairwise teacher sharpness")
    parser.add_argument("--noise-point", type=float, default=0.0,
                        help="pointwise teacher score noise scale")
    parser.add_argument("--noise-pair", type=float, default=0.0,
                        help="pairwise teacher logit noise scale")
    parser.add_argument("--teacher-seed", type=int, default=0,
                        help="seed for teacher noise streams")


def _load_data(data_dir, need_relevance=False):
    corpus = load_corpus(data_dir)
    qrels_path = os.path.join(data_dir, QRELS_FILENAME)
    judgments = load_qrels(qrels_path, corpus) if os.path.exists(qrels_path) else None
    relevance = None
    rel_path = os.path.join(data_dir, RELEVANCE_FILENAME)
    if os.path.exists(rel_path):
        relevance = TrueRelevance.load(rel_path)
    elif need_relevance:
        raise ValidationError(f"missing {RELEVANCE_FILENAME} in {data_dir}")
    return corpus, judgments, relevance


def _load_dev_ids(data_dir):
    path = os.path.join(data_dir, DEV_QUERIES_FILENAME)
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _make_teacher(args, relevance):
    return SyntheticTeacher(
        relevance,
        beta=args.beta,
        noise_point=args.noise_point,
        noise_pair=args.noise_pair,
        seed=args.teacher_seed,
    )


def _cmd_gen_data(args):
    spec = SyntheticSpec(
        n_docs=args.docs,
        n_queries=args.queries + args.dev_queries,
        vocab_size=args.vocab_size,
        n_topics=args.topics,
        relevance_scale=args.relevance_scale,
        noise_scale=args.noise,
        positive_fraction=args.positive_fraction,
        seed=args.seed,
    )
    corpus, judgments, relevance = generate_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    save_corpus(corpus, args.out)
    save_qrels(judgments, os.path.join(args.out, QRELS_FILENAME))
    relevance.save(os.path.join(args.out, RELEVANCE_FILENAME))
    dev_ids = corpus.query_ids[args.queries:]
    with open(os.path.join(args.out, DEV_QUERIES_FILENAME), "w", encoding="utf-8") as fh:
        for query_id in dev_ids:
            fh.write(query_id + "\n")
    print(f"wrote {len(corpus.doc_ids)} docs, {len(corpus.query_ids)} queries "
          f"({len(dev_ids)} dev) to {args.out}")
    return 0


def _build_config(args):
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = DistillConfig.from_text(fh.read())
    else:
        config = DistillConfig()
    overrides = {
        "seed": args.seed,
        "k": args.k,
        "delta": args.delta,
        "pair_budget": args.pairs,
        "tau": args.tau,
        "lambda_kd": args.lambda_kd,
        "lambda_pair": args.lambda_pair,
        "iterations": args.iterations,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "similarity": args.similarity,
        "workers": args.workers,
        "dim": args.dim,
        "learning_rate": args.lr,
        "momentum": args.momentum,
        "candidates_per_query": args.candidates,
        "eval_k": args.eval_k,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    if args.zero_shot:
        config.zero_shot = True
    if args.shared_encoders:
        config.shared_encoders = True
    if args.no_cl:
        config.use_cl = False
    if args.no_kd:
        config.use_kd = False
    if args.no_pair:
        config.use_pair = False
    return config.validate()


def _cmd_train(args):
    config = _build_config(args)
    corpus, judgments, relevance = _load_data(args.data, need_relevance=True)
    dev_ids = _load_dev_ids(args.data)
    train_ids = [q for q in corpus.query_ids if q not in set(dev_ids)]
    if not train_ids:
        raise ValidationError("no training queries left after the dev split")

    teacher = _make_teacher(args, relevance)
    cache = None
    cache_path = None
    cache_dir = os.environ.get(CACHE_DIR_ENV, "")
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        cache_path = os.path.join(cache_dir, _CACHE_FILENAME)
        cache = load_teacher_cache(cache_path) if os.path.exists(cache_path) else {}
    point_teacher = CachedPointwiseTeacher(teacher, cache)
    pair_teacher = CachedPairwiseTeacher(teacher, cache)

    print("# resolved configuration")
    sys.stdout.write(config.to_text())
    sys.stdout.flush()

    train_judgments = None if config.zero_shot else judgments
    try:
        records = run_iterative(
            corpus,
            train_ids,
            dev_ids,
            point_teacher,
            pair_teacher,
            config,
            args.workdir,
            judgments=train_judgments,
            dev_judgments=judgments,
        )
    finally:
        if cache_path is not None:
            save_teacher_cache(cache, cache_path)
    for record in records:
        means = " ".join(
            f"{name}={value:.4f}" for name, value in sorted(record.dev_means.items())
        )
        print(f"iteration {record.iteration} fingerprint {record.fingerprint} {means}")
    return 0


def _cmd_retrieve(args):
    corpus, _, _ = _load_data(args.data)
    model = EncoderModel.load(args.ckpt)
    index = build_index(model, corpus)
    query_ids = sorted(corpus.queries)
    if args.queries:
        with open(args.queries, "r", encoding="utf-8") as fh:
            query_ids = [line.strip() for line in fh if line.strip()]
    runs = []
    for query_id in query_ids:
        if query_id not in corpus.queries:
            raise ValidationError(f"unknown query {query_id!r}")
        runs.append(retrieve(index, model, corpus.queries[query_id], args.k))
    save_run(runs, args.out)
    print(f"wrote {len(runs)} runs to {args.out}")
    return 0


def _cmd_rerank(args):
    corpus, _, relevance = _load_data(args.data, need_relevance=True)
    teacher = _make_teacher(args, relevance)
    runs = load_run(args.run)
    reranked = []
    for run in runs.values():
        if run.query_id not in corpus.queries:
            raise ValidationError(f"run references unknown query {run.query_id!r}")
        new_run, _ = rerank_pointwise(run, corpus.queries[run.query_id], corpus, teacher)
        reranked.append(new_run)
    save_run(reranked, args.out)
    print(f"reranked {len(reranked)} runs into {args.out}")
    return 0


def _cmd_sample_pairs(args):
    runs = load_run(args.run)
    with open(args.out, "w", encoding="utf-8") as fh:
        total = 0
        for query_id in sorted(runs):
            sample = sample_pairs(runs[query_id], args.delta, args.pairs, args.seed)
            total += len(sample)
            record = {
                "query_id": query_id,
                "pairs": [
                    {"i": p.doc_i, "j": p.doc_j, "rank_i": p.rank_i, "rank_j": p.rank_j}
                    for p in sample.pairs
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"sampled {total} pairs into {args.out}")
    return 0


def _cmd_evaluate(args):
    corpus, judgments, _ = _load_data(args.data)
    if judgments is None:
        raise ValidationError(f"no {QRELS_FILENAME} found in {args.data}")
    runs = load_run(args.run)
    report = evaluate_runs(runs, judgments, ks=tuple(args.k))
    if args.json:
        print(report.to_json())
    else:
        print(report.format_table())
    return 0


def _cmd_disagreement(args):
    scores = TeacherScores.load(args.scores)
    report = pairwise_disagreement(
        scores[qid].pairs for qid in scores.query_ids()
    )
    print(
        f"disagreement {report.rate:.4f} "
        f"({report.n_disagree}/{report.n_used} pairs, {report.n_excluded} ties excluded)"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="distillrank",
        description="Dense retrieval training by distilling reranker preferences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a corpus with oracle labels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--docs", type=int, default=1000)
    p.add_argument("--queries", type=int, default=100,
                   help="number of training queries")
    p.add_argument("--dev-queries", type=int, default=0,
                   help="additional held-out queries listed in dev_queries.txt")
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--topics", type=int, default=16)
    p.add_argument("--relevance-scale", type=float, default=20.0)
    p.add_argument("--noise", type=float, default=0.0,
                   help="oracle relevance noise scale")
    p.add_argument("--positive-fraction", type=float, default=0.1,
                   help="fraction of docs judged relevant per query")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run the iterative distillation loop")
    p.add_argument("--data", required=True, help="corpus directory from gen-data")
    p.add_argument("--workdir", required=True, help="artifact output directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="retrieval depth per query")
    p.add_argument("--delta", type=int, help="max rank distance for sampled pairs")
    p.add_argument("--pairs", type=int, help="pair budget per query")
    p.add_argument("--tau", type=float, help="pointwise teacher temperature")
    p.add_argument("--lambda-kd", type=float, dest="lambda_kd")
    p.add_argument("--lambda-pair", type=float, dest="lambda_pair")
    p.add_argument("--iterations", type=int)
    p.add_argument("--steps", type=int, help="optimizer steps per iteration")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--similarity", choices=("dot", "cosine", "maxsim"))
    p.add_argument("--workers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--candidates", type=int,
                   help="contrastive candidates per query (incl. positive)")
    p.add_argument("--eval-k", type=int, dest="eval_k")
    p.add_argument("--zero-shot", action="store_true",
                   help="train without touching relevance judgments")
    p.add_argument("--shared-encoders", action="store_true")
    p.add_argument("--no-cl", action="store_true", help="drop the contrastive term")
    p.add_argument("--no-kd", action="store_true", help="drop the pointwise KL term")
    p.add_argument("--no-pair", action="store_true", help="drop the pairwise KL term")
    _add_teacher_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("retrieve", help="write a top-k run for a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--queries", help="file with one query id per line")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("rerank", help="reorder a run by pointwise teacher score")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    _add_teacher_args(p)
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("sample-pairs", help="draw rank-constrained pairs from a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delta", type=int, default=10)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sample_pairs)

    p = sub.add_parser("evaluate", help="score a run against the qrels")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--k", type=int, nargs="+", default=[10])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("disagreement", help="teacher disagreement over a score dump")
    p.add_argument("--scores", required=True, help="teacher scores JSONL")
    p.set_defaults(func=_cmd_disagreement)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DistillRankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
