"""Release gate for the distillation pipeline.

Each test covers one delivered guarantee end to end and prints a single
``[PASS]``/``[FAIL]`` line with the measured quantities, so running
``pytest tests/test_acceptance.py -v -s`` doubles as a report.  The slow
checks (training arms, determinism replays) share module-scoped fixtures.
"""

import hashlib
import math
import time

import numpy as np
import pytest

from distillrank import (
    MODES,
    BatchItem,
    DistillConfig,
    EncoderModel,
    Judgments,
    LLMPairwiseTeacher,
    LLMPointwiseTeacher,
    LossSettings,
    PairSample,
    RelevanceMockClient,
    RunList,
    SampledPair,
    SyntheticSpec,
    SyntheticTeacher,
    binary_kl,
    build_index,
    candidate_pairs,
    generate_synthetic,
    kl_divergence,
    load_qrels,
    load_run,
    loss_infonce,
    loss_pairwise_kd,
    loss_pointwise_kd,
    loss_total,
    mrr_at_k,
    ndcg_at_k,
    pairwise_disagreement,
    pairwise_student_prob,
    prepare_iteration,
    recall_at_k,
    run_iterative,
    sample_pairs,
    save_qrels,
    save_run,
    softmax,
    success_at_k,
)
from distillrank.cli import main as cli_main


def _verdict(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# -- shared synthetic task for the training-level checks ------------------


@pytest.fixture(scope="module")
def desk_task():
    spec = SyntheticSpec(
        n_docs=5000,
        n_queries=600,
        vocab_size=2000,
        n_topics=16,
        seed=42,
        positive_fraction=0.003,
        query_length=(12, 20),
        doc_length=(40, 80),
        query_concentration=0.04,
    )
    return generate_synthetic(spec)


def _desk_config(**overrides):
    base = dict(
        dim=32,
        similarity="dot",
        seed=7,
        k=100,
        delta=10,
        pair_budget=50,
        tau=0.05,
        lambda_kd=1.0,
        lambda_pair=3.0,
        batch_size=32,
        candidates_per_query=64,
        learning_rate=0.25,
        steps=80,
        iterations=2,
    )
    base.update(overrides)
    return DistillConfig(**base)


@pytest.fixture(scope="module")
def mock_teachers(desk_task):
    corpus, _, relevance = desk_task
    point_client = RelevanceMockClient(corpus, relevance, beta=50.0, midpoint=8.0)
    pair_client = RelevanceMockClient(corpus, relevance, beta=4.0, midpoint=8.0)
    return LLMPointwiseTeacher(point_client), LLMPairwiseTeacher(pair_client)


# -- gradient correctness --------------------------------------------------


@pytest.fixture(scope="module")
def grad_corpus():
    spec = SyntheticSpec(
        n_docs=40,
        n_queries=24,
        vocab_size=60,
        n_topics=4,
        seed=314,
        doc_length=(8, 14),
        query_length=(4, 7),
        positive_fraction=0.05,
    )
    corpus, _, _ = generate_synthetic(spec)
    return corpus


def _random_pair_sample(qid, kd_docs, rng):
    cands = candidate_pairs(len(kd_docs), 4)
    take = rng.choice(len(cands), size=min(5, len(cands)), replace=False)
    pairs = []
    for t in take:
        i, j = cands[int(t)]
        if rng.integers(2):
            i, j = j, i
        pairs.append(SampledPair(i, j, kd_docs[i - 1].doc_id, kd_docs[j - 1].doc_id))
    sample = PairSample(qid, 4, tuple(pairs))
    return sample.with_probs([float(p) for p in rng.uniform(0.05, 0.95, len(pairs))])


def _random_instance(corpus, rng):
    qid = corpus.query_ids[int(rng.integers(len(corpus.query_ids)))]
    picks = rng.choice(len(corpus.doc_ids), size=8, replace=False)
    docs = [corpus.documents[corpus.doc_ids[int(i)]] for i in picks]
    kd_docs = docs[:6]
    return BatchItem(
        query=corpus.queries[qid],
        kd_docs=kd_docs,
        kd_teacher_scores=rng.normal(size=6) * 1.5,
        pairs=_random_pair_sample(qid, kd_docs, rng),
        positive=docs[0],
        negatives=docs[1:5],
    )


def _maxsim_margins_ok(model, item, margin=5e-4):
    """Reject instances where a tied token argmax would corrupt the FD.

    Only distinct doc token ids can produce a kink: duplicated tokens share
    one table row, so a coordinate perturbation moves every copy together
    and the max stays smooth.
    """
    q_repr = model.encode_query(item.query)
    table = model.table("doc")
    for doc in item.kd_docs + [item.positive] + item.negatives:
        ids = np.unique(doc.token_ids)
        if ids.size < 2:
            continue
        sims = q_repr @ table[ids].T
        top2 = np.sort(sims, axis=1)[:, -2:]
        if np.min(top2[:, 1] - top2[:, 0]) < margin:
            return False
    return True


def _smooth_instances(corpus, model, rng, n_items):
    while True:
        items = [_random_instance(corpus, rng) for _ in range(n_items)]
        if model.mode != "maxsim" or all(
            _maxsim_margins_ok(model, item) for item in items
        ):
            return items


def _loss_value_and_gradient(name, model, items, settings, documents):
    if name == "combined":
        breakdown = loss_total(model, items, settings, documents)
        return breakdown.total, breakdown.combined_gradient(settings)
    item = items[0]
    if name == "infonce":
        return loss_infonce(model, item.query, item.positive, item.negatives)
    if name == "pointwise_kd":
        return loss_pointwise_kd(
            model, item.query, item.kd_docs, item.kd_teacher_scores, settings.tau
        )
    return loss_pairwise_kd(model, item.query, item.pairs, documents)


def _sample_coords(model, grad, rng, total=110):
    names = sorted(model.tables)
    touched = [
        (name, int(i)) for name in names for i in np.flatnonzero(grad.tables[name])
    ]
    coords = []
    if touched:
        take = min(60, len(touched), total)
        for i in rng.choice(len(touched), size=take, replace=False):
            coords.append(touched[int(i)])
    while len(coords) < total:
        name = names[int(rng.integers(len(names)))]
        coords.append((name, int(rng.integers(model.tables[name].size))))
    return coords


class TestGradientCorrectness:
    def test_analytic_gradients_match_central_differences(self, grad_corpus):
        t0 = time.perf_counter()
        h = 1e-5
        rng = np.random.default_rng(20260823)
        settings = LossSettings(tau=0.8, lambda_kd=0.7, lambda_pair=2.0)
        worst = 0.0
        worst_tiny = 0.0
        n_checked = 0
        for mode in MODES:
            for name in ("infonce", "pointwise_kd", "pairwise_kd", "combined"):
                for _ in range(20):
                    model = EncoderModel(
                        grad_corpus.vocab_size, 4, mode, seed=int(rng.integers(1 << 31))
                    )
                    n_items = 2 if name == "combined" else 1
                    items = _smooth_instances(grad_corpus, model, rng, n_items)
                    documents = {}
                    for item in items:
                        for doc in item.kd_docs + [item.positive] + item.negatives:
                            documents[doc.doc_id] = doc
                    _, grad = _loss_value_and_gradient(
                        name, model, items, settings, documents
                    )
                    for table_name, idx in _sample_coords(model, grad, rng):
                        table = model.tables[table_name]
                        orig = table.flat[idx]
                        table.flat[idx] = orig + h
                        up, _ = _loss_value_and_gradient(
                            name, model, items, settings, documents
                        )
                        table.flat[idx] = orig - h
                        down, _ = _loss_value_and_gradient(
                            name, model, items, settings, documents
                        )
                        table.flat[idx] = orig
                        fd = (up - down) / (2.0 * h)
                        an = float(grad.tables[table_name].flat[idx])
                        n_checked += 1
                        scale = max(abs(an), abs(fd))
                        if scale < 1e-7:
                            # Both sides at the finite-difference noise
                            # floor: compare absolutely instead.
                            worst_tiny = max(worst_tiny, abs(an - fd))
                        else:
                            worst = max(worst, abs(an - fd) / scale)
        elapsed = time.perf_counter() - t0
        _verdict(
            "gradient checks",
            worst < 1e-4
            and worst_tiny < 1e-7
            and elapsed < 60.0
            and n_checked >= 100 * 20 * 12,
            f"max rel err {worst:.2e} (near-zero coords abs {worst_tiny:.2e}) "
            f"over {n_checked} coordinates (4 losses x 3 modes x 20 instances) "
            f"in {elapsed:.1f}s",
        )


# -- divergence invariants -------------------------------------------------


class TestDivergenceInvariants:
    def test_kl_nonnegative_zero_at_equality_and_shift_invariant(self):
        rng = np.random.default_rng(77)
        min_kl = math.inf
        min_bkl = math.inf
        worst_equal = 0.0
        for _ in range(10_000):
            n = int(rng.integers(2, 17))
            p = softmax(rng.normal(size=n) * 2.0)
            q = softmax(rng.normal(size=n) * 2.0)
            min_kl = min(min_kl, kl_divergence(p, q))
            worst_equal = max(worst_equal, kl_divergence(p, p.copy()))
            a, b = rng.uniform(1e-4, 1.0 - 1e-4, size=2)
            min_bkl = min(min_bkl, binary_kl(float(a), float(b)))
            worst_equal = max(worst_equal, binary_kl(float(a), float(a)))
        # Constant shifts on a dyadic grid are exact in binary64, so the
        # student preference must reproduce bit for bit.
        grid = 2.0**-10
        score_ints = rng.integers(-8000, 8001, size=(2000, 2))
        shift_ints = rng.integers(-100_000, 100_001, size=2000)
        n_shift_mismatch = 0
        for (ai, bi), ci in zip(score_ints, shift_ints):
            s_i, s_j, c = ai * grid, bi * grid, ci * grid
            if pairwise_student_prob(s_i, s_j) != pairwise_student_prob(
                s_i + c, s_j + c
            ):
                n_shift_mismatch += 1
        ok = (
            min_kl >= 0.0
            and min_bkl >= 0.0
            and worst_equal < 1e-12
            and n_shift_mismatch == 0
        )
        _verdict(
            "divergence invariants",
            ok,
            f"min KL {min_kl:.2e}, min binary KL {min_bkl:.2e}, worst self-KL "
            f"{worst_equal:.2e} over 10000 pairs; {n_shift_mismatch} shift "
            "mismatches over 2000 exact dyadic translations",
        )


# -- pair sampler ----------------------------------------------------------


def _descending_run(qid, k):
    return RunList.from_scores(qid, [(f"d{i:04d}", float(k - i)) for i in range(k)])


class TestPairSampler:
    def test_budget_window_and_exhaustive_enumeration(self):
        headline = sample_pairs(_descending_run("q", 100), delta=10, budget=50, seed=7)
        violations = []
        if len(headline.pairs) != 50:
            violations.append(f"headline draw gave {len(headline.pairs)} pairs")
        rng = np.random.default_rng(424242)
        for _ in range(1000):
            k = int(rng.integers(2, 201))
            delta = int(rng.integers(1, 51))
            budget = int(rng.integers(1, 101))
            cands = candidate_pairs(k, delta)
            ii, jj = np.triu_indices(k, 1)
            keep = (jj - ii) < delta
            exhaustive = {
                (int(a) + 1, int(b) + 1) for a, b in zip(ii[keep], jj[keep])
            }
            if set(cands) != exhaustive:
                violations.append(f"candidate set mismatch at k={k} delta={delta}")
                continue
            run = _descending_run("q", k)
            docs = run.doc_ids()
            sample = sample_pairs(run, delta, budget, int(rng.integers(1 << 30)))
            if len(sample.pairs) != min(budget, len(cands)):
                violations.append(
                    f"count {len(sample.pairs)} != min({budget}, {len(cands)})"
                )
            seen = set()
            for p in sample.pairs:
                if p.rank_i == p.rank_j or abs(p.rank_i - p.rank_j) >= delta:
                    violations.append(f"bad ranks ({p.rank_i}, {p.rank_j})")
                if p.doc_i != docs[p.rank_i - 1] or p.doc_j != docs[p.rank_j - 1]:
                    violations.append(f"rank/doc mismatch ({p.rank_i}, {p.rank_j})")
                key = frozenset((p.rank_i, p.rank_j))
                if key in seen:
                    violations.append(f"duplicate pair {sorted(key)}")
                seen.add(key)
        _verdict(
            "pair sampler",
            not violations,
            "1000 random configurations plus the k=100 delta=10 budget=50 draw; "
            + (f"violations: {violations[:3]}" if violations else "no violations"),
        )


# -- metric agreement ------------------------------------------------------


def _naive_mrr(ranked, relevant, k):
    if not relevant:
        return None
    for pos, doc in enumerate(ranked[:k], start=1):
        if doc in relevant:
            return 1.0 / pos
    return 0.0


def _naive_recall(ranked, relevant, k):
    if not relevant:
        return None
    return sum(1 for d in ranked[:k] if d in relevant) / len(relevant)


def _naive_success(ranked, relevant, k):
    if not relevant:
        return None
    return 1.0 if any(d in relevant for d in ranked[:k]) else 0.0


def _naive_ndcg(ranked, judged, k):
    gains = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
    idcg = sum((2.0**g - 1.0) / math.log2(r + 1) for r, g in enumerate(gains, 1))
    if idcg == 0.0:
        return None
    dcg = sum(
        (2.0 ** judged.get(d, 0) - 1.0) / math.log2(r + 1)
        for r, d in enumerate(ranked[:k], 1)
    )
    return dcg / idcg


class TestMetricAgreement:
    def test_metrics_match_references_and_runs_round_trip(self, tmp_path):
        t0 = time.perf_counter()
        rng = np.random.default_rng(1234)
        universe = [f"d{i:03d}" for i in range(30)]
        worst = 0.0
        n_none = 0
        mismatches = 0
        for i in range(1000):
            qid = f"q{i}"
            m = int(rng.integers(1, 26))
            scored = [
                (universe[int(p)], float(rng.normal()))
                for p in rng.permutation(30)[:m]
            ]
            run = RunList.from_scores(qid, scored)
            ranked = run.doc_ids()
            judged = {
                universe[int(d)]: int(rng.integers(0, 4))
                for d in rng.permutation(30)[: int(rng.integers(0, 12))]
            }
            judgments = Judgments({(qid, d): g for d, g in judged.items()})
            relevant = {d for d, g in judged.items() if g > 0}
            k = int(rng.integers(1, 16))
            got_want = [
                (mrr_at_k(run, judgments, k), _naive_mrr(ranked, relevant, k)),
                (recall_at_k(run, judgments, k), _naive_recall(ranked, relevant, k)),
                (success_at_k(run, judgments, k), _naive_success(ranked, relevant, k)),
                (ndcg_at_k(run, judgments, k), _naive_ndcg(ranked, judged, k)),
            ]
            for got, want in got_want:
                if got is None or want is None:
                    n_none += 1
                    if got is not want:
                        mismatches += 1
                else:
                    worst = max(worst, abs(got - want))
        runs = {}
        for i in range(50):
            qid = f"t{i:02d}"
            scored = [
                (f"d{int(j):03d}", float(rng.normal() * 10.0 ** int(rng.integers(-3, 4))))
                for j in rng.permutation(200)[: int(rng.integers(1, 40))]
            ]
            runs[qid] = RunList.from_scores(qid, scored)
        path_a = tmp_path / "a.run"
        path_b = tmp_path / "b.run"
        save_run(runs, str(path_a))
        loaded = load_run(str(path_a))
        save_run(loaded, str(path_b))
        bytes_equal = path_a.read_bytes() == path_b.read_bytes()
        reloaded = load_run(str(path_b))
        entries_equal = set(loaded) == set(reloaded) and all(
            (e.rank, e.doc_id, e.score) == (f.rank, f.doc_id, f.score)
            and e.doc_id == runs[qid].entries[n].doc_id
            for qid in loaded
            for n, (e, f) in enumerate(zip(loaded[qid].entries, reloaded[qid].entries))
        )
        elapsed = time.perf_counter() - t0
        ok = (
            worst <= 1e-9
            and mismatches == 0
            and bytes_equal
            and entries_equal
            and elapsed < 60.0
        )
        _verdict(
            "metric agreement",
            ok,
            f"max abs diff {worst:.2e} over 1000 instances ({n_none} undefined "
            f"cases agreed), run files byte-stable={bytes_equal}, {elapsed:.1f}s",
        )


# -- distillation efficacy and ablation ordering ---------------------------


@pytest.fixture(scope="module")
def ablation_arms(desk_task, mock_teachers, tmp_path_factory):
    corpus, judgments, _ = desk_task
    point, pair = mock_teachers
    train_ids = corpus.query_ids[:500]
    dev_ids = corpus.query_ids[500:600]
    t0 = time.perf_counter()
    arms = {}
    for name, use_kd, use_pair in (
        ("kd_pair", True, True),
        ("kd_only", True, False),
        ("cl_only", False, False),
    ):
        workdir = tmp_path_factory.mktemp(f"arm_{name}")
        config = _desk_config(use_kd=use_kd, use_pair=use_pair)
        records = run_iterative(
            corpus,
            train_ids,
            dev_ids,
            point,
            pair,
            config,
            str(workdir),
            judgments=judgments,
            dev_judgments=judgments,
        )
        arms[name] = records
    return arms, time.perf_counter() - t0


class TestDistillationEfficacy:
    def test_pair_term_beats_kd_alone_beats_contrastive_only(self, ablation_arms):
        arms, elapsed = ablation_arms
        full = arms["kd_pair"][-1].dev_means["mrr@10"]
        kd = arms["kd_only"][-1].dev_means["mrr@10"]
        cl = arms["cl_only"][-1].dev_means["mrr@10"]
        ok = full >= 0.85 and full - kd >= 0.01 and kd > cl and elapsed < 600.0
        _verdict(
            "distillation efficacy",
            ok,
            f"dev MRR@10 kd+pair {full:.4f} >= 0.85, gap over kd-only "
            f"{full - kd:+.4f} >= 0.01, kd-only {kd:.4f} > cl-only {cl:.4f}, "
            f"three arms in {elapsed:.0f}s",
        )


class TestIterativeTraining:
    def test_second_iteration_holds_gains_and_refreshes_index(
        self, ablation_arms, desk_task
    ):
        corpus, _, _ = desk_task
        arms, _ = ablation_arms
        records = arms["kd_pair"]
        curve = [r.dev_means["mrr@10"] for r in records]
        fingerprints = []
        for record in records:
            model = EncoderModel.load(record.checkpoint)
            fingerprints.append(build_index(model, corpus).fingerprint)
        ok = (
            len(curve) == 3
            and curve[2] >= curve[1] - 0.01
            and len(set(fingerprints)) == 3
        )
        _verdict(
            "iterative training",
            ok,
            f"dev MRR@10 by iteration {[round(c, 4) for c in curve]}, "
            f"{len(set(fingerprints))} distinct index fingerprints",
        )


class TestZeroShot:
    def test_zero_shot_reads_no_labels_and_improves(
        self, desk_task, mock_teachers, tmp_path
    ):
        corpus, judgments, _ = desk_task
        point, pair = mock_teachers
        qrels_path = tmp_path / "qrels.txt"
        save_qrels(judgments, str(qrels_path))
        train_judgments = load_qrels(str(qrels_path))
        dev_judgments = load_qrels(str(qrels_path))
        config = _desk_config(zero_shot=True, use_cl=False)
        records = run_iterative(
            corpus,
            corpus.query_ids[:500],
            corpus.query_ids[500:600],
            point,
            pair,
            config,
            str(tmp_path / "zero_shot"),
            judgments=train_judgments,
            dev_judgments=dev_judgments,
        )
        gain = records[-1].dev_means["mrr@10"] - records[0].dev_means["mrr@10"]
        ok = train_judgments.access_count == 0 and gain >= 0.3
        _verdict(
            "zero-shot mode",
            ok,
            f"training judgment reads {train_judgments.access_count}, dev MRR@10 "
            f"gain {gain:+.4f} (init {records[0].dev_means['mrr@10']:.4f} -> "
            f"final {records[-1].dev_means['mrr@10']:.4f})",
        )


# -- teacher disagreement accounting ---------------------------------------


class TestDisagreementAnalysis:
    def test_noisy_pointwise_rate_matches_brute_recount(self, desk_task):
        corpus, _, relevance = desk_task
        model = EncoderModel(corpus.vocab_size, 32, "dot", seed=7)
        noisy_point = SyntheticTeacher(relevance, noise_point=0.2, seed=123)
        clean_pair = SyntheticTeacher(relevance)
        scores, _ = prepare_iteration(
            model, corpus, corpus.query_ids[:100], noisy_point, clean_pair,
            _desk_config(), 99,
        )
        report = pairwise_disagreement(
            scores[qid].pairs for qid in scores.query_ids()
        )
        n_used = 0
        n_disagree = 0
        n_score_ties = 0
        for qid in scores.query_ids():
            entry = scores[qid]
            for p in entry.pairs.pairs:
                if p.p == 0.5:
                    continue
                s_i = entry.pointwise[p.doc_i]
                s_j = entry.pointwise[p.doc_j]
                if s_i == s_j:
                    n_score_ties += 1
                    continue
                n_used += 1
                if (p.p > 0.5) != (s_i > s_j):
                    n_disagree += 1
        recount = n_disagree / n_used
        ok = (
            0.25 <= report.rate <= 0.40
            and abs(report.rate - recount) <= 0.02
            and n_score_ties == 0
        )
        _verdict(
            "disagreement analysis",
            ok,
            f"reported rate {report.rate:.4f} ({report.n_disagree}/{report.n_used}), "
            f"recount {recount:.4f}, {n_score_ties} score ties",
        )


# -- byte-level determinism ------------------------------------------------


class TestDeterminism:
    def test_identical_seeds_produce_identical_bytes(self, tmp_path, monkeypatch):
        data_dir = tmp_path / "data"
        assert (
            cli_main(
                [
                    "gen-data", "--out", str(data_dir), "--docs", "400",
                    "--queries", "60", "--dev-queries", "12", "--vocab-size",
                    "400", "--topics", "6", "--positive-fraction", "0.02",
                    "--seed", "31",
                ]
            )
            == 0
        )

        def run(tag, extra=()):
            workdir = tmp_path / f"run_{tag}"
            cache = tmp_path / f"cache_{tag}"
            cache.mkdir()
            monkeypatch.setenv("DISTILLRANK_CACHE_DIR", str(cache))
            args = [
                "train", "--data", str(data_dir), "--workdir", str(workdir),
                "--dim", "8", "--k", "20", "--delta", "5", "--pairs", "10",
                "--steps", "8", "--iterations", "2", "--lr", "0.1",
                "--batch-size", "8", "--candidates", "8", "--seed", "3",
            ]
            assert cli_main([*args, *extra]) == 0
            return workdir, cache

        def digests(root):
            return {
                p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(root.iterdir())
                if p.is_file()
            }

        work_a, cache_a = run("a")
        work_b, cache_b = run("b")
        work_c, cache_c = run("c", ("--workers", "4"))
        da, db, dc = digests(work_a), digests(work_b), digests(work_c)
        ca, cb, cc = digests(cache_a), digests(cache_b), digests(cache_c)

        def drop_config(d):
            return {k: v for k, v in d.items() if k != "config.txt"}

        expected = {
            "config.txt", "iter0.ckpt", "iter1.ckpt", "iter2.ckpt",
            "iter1.log.jsonl", "iter2.log.jsonl", "iter1.scores.jsonl",
            "iter2.scores.jsonl", "summary.json",
        }
        ok = (
            set(da) == expected
            and da == db
            and ca == cb
            and len(ca) > 0
            and drop_config(da) == drop_config(dc)
            and ca == cc
        )
        _verdict(
            "byte determinism",
            ok,
            f"{len(da)} artifacts + {len(ca)} cache files identical across "
            "reruns; workers=4 differs only in config.txt",
        )
