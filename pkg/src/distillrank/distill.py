"""Distillation losses and the rank-distance-constrained pair sampler.

Loss terms (all per query, then averaged over the batch):

  contrastive   -log softmax of s(q, d+) over {d+} u negatives
  pointwise KL  KL(softmax(teacher/tau) || softmax(student))
  pairwise KL   sum over sampled pairs of binary KL(p_teacher || p_student)
                with p_student = exp(s_i) / (exp(s_i) + exp(s_j))

Student-side softmaxes never apply a temperature; tau only sharpens the
pointwise teacher distribution.  Degenerate teacher probabilities (0 or 1)
use the one-sided convention 0*ln(0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import Gradient, RowUpdates
from .errors import ValidationError


@dataclass(frozen=True)
class SampledPair:
    """One ordered pair drawn from the pointwise-reranked top-k."""

    rank_i: int
    rank_j: int
    doc_i: str
    doc_j: str
    p: float | None = None


@dataclass
class PairSample:
    query_id: str
    delta: int
    pairs: tuple

    def __len__(self):
        return len(self.pairs)

    def validate(self):
        for pair in self.pairs:
            if pair.rank_i == pair.rank_j or pair.doc_i == pair.doc_j:
                raise ValidationError(
                    f"query {self.query_id!r}: degenerate pair {pair}"
                )
            if abs(pair.rank_i - pair.rank_j) >= self.delta:
                raise ValidationError(
                    f"query {self.query_id!r}: pair {pair} violates rank-distance"
                    f" bound {self.delta}"
                )
            if pair.p is not None and not (0.0 <= pair.p <= 1.0):
                raise ValidationError(
                    f"query {self.query_id!r}: teacher probability {pair.p} outside [0, 1]"
                )

    def with_probs(self, probs):
        if len(probs) != len(self.pairs):
            raise ValidationError("probability list length does not match pairs")
        pairs = tuple(replace(pair, p=float(p)) for pair, p in zip(self.pairs, probs))
        sample = PairSample(self.query_id, self.delta, pairs)
        sample.validate()
        return sample


def candidate_pairs(k, delta):
    """All unordered rank pairs {i < j} with j - i < delta, in (i, j) order."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if delta < 1:
        raise ValidationError("delta must be >= 1")
    return [
        (i, j)
        for i in range(1, k)
        for j in range(i + 1, min(i + delta - 1, k) + 1)
    ]


def sample_pairs(reranked, delta, budget, seed):
    """Draw up to ``budget`` rank pairs from the reranked list.

    Uniform without replacement over the candidate set; each selected pair
    gets a random orientation.  Fewer than two ranked docs yields an empty
    sample.
    """
    if delta < 1:
        raise ValidationError("delta must be >= 1")
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    k = len(reranked)
    if k < 2:
        return PairSample(reranked.query_id, delta, ())
    candidates = candidate_pairs(k, delta)
    rng = np.random.default_rng(seed)
    if len(candidates) > budget:
        chosen = rng.choice(len(candidates), size=budget, replace=False)
    else:
        chosen = np.arange(len(candidates))
    flips = rng.integers(0, 2, size=len(chosen))
    docs = reranked.doc_ids()
    pairs = []
    for idx, flip in zip(chosen, flips):
        i, j = candidates[int(idx)]
        if flip:
            i, j = j, i
        pairs.append(SampledPair(i, j, docs[i - 1], docs[j - 1]))
    sample = PairSample(reranked.query_id, delta, tuple(pairs))
    sample.validate()
    return sample


# -- scalar helpers -------------------------------------------------------


def log_softmax(scores):
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max()
    return shifted - np.log(np.exp(shifted).sum())


def softmax(scores):
    return np.exp(log_softmax(scores))


def kl_divergence(p, q):
    """KL(p || q) for distributions on a shared support; never negative."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return np.inf
    value = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    return max(value, 0.0)


def binary_kl(p, q):
    """KL between Bernoulli(p) and Bernoulli(q), one-sided at p in {0, 1}."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValidationError("Bernoulli parameters must lie in [0, 1]")
    value = 0.0
    if p > 0.0:
        if q == 0.0:
            return np.inf
        value += p * (np.log(p) - np.log(q))
    if p < 1.0:
        if q == 1.0:
            return np.inf
        value += (1.0 - p) * (np.log(1.0 - p) - np.log(1.0 - q))
    return max(value, 0.0)


def pairwise_student_prob(s_i, s_j):
    """exp(s_i) / (exp(s_i) + exp(s_j)), computed from the score difference
    so that shifting both scores by a constant is an exact no-op."""
    return _sigmoid(s_i - s_j)


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


# -- per-query losses -----------------------------------------------------


def loss_infonce(model, query, d_plus, negatives, out=None):
    """Contrastive loss of the positive against the sampled negatives."""
    if d_plus is None:
        raise ValidationError("contrastive loss requires a positive document")
    neg_ids = [d.doc_id for d in negatives]
    if d_plus.doc_id in neg_ids:
        raise ValidationError(f"positive {d_plus.doc_id!r} also appears as negative")
    candidates = [d_plus] + list(negatives)
    if out is None:
        out = model.zero_gradient()
    q_repr = model.encode_query(query)
    scores = np.array(
        [model.similarity(q_repr, model.encode_doc(d)) for d in candidates]
    )
    log_probs = log_softmax(scores)
    loss = -float(log_probs[0])
    probs = np.exp(log_probs)
    upstream = probs.copy()
    upstream[0] -= 1.0
    for doc, g in zip(candidates, upstream):
        model.backward(query, doc, float(g), out)
    return loss, out


def loss_pointwise_kd(model, query, docs, teacher_scores, tau, out=None):
    """KL from the tempered teacher distribution to the student softmax."""
    if tau <= 0:
        raise ValidationError("temperature tau must be > 0")
    if len(docs) < 2:
        raise ValidationError("pointwise distillation needs at least 2 documents")
    teacher_scores = np.asarray(teacher_scores, dtype=np.float64)
    if teacher_scores.shape[0] != len(docs):
        raise ValidationError("teacher score count does not match documents")
    if out is None:
        out = model.zero_gradient()
    p_teacher = softmax(teacher_scores / tau)
    q_repr = model.encode_query(query)
    scores = np.array([model.similarity(q_repr, model.encode_doc(d)) for d in docs])
    log_student = log_softmax(scores)
    mask = p_teacher > 0
    loss = float(
        np.sum(p_teacher[mask] * (np.log(p_teacher[mask]) - log_student[mask]))
    )
    loss = max(loss, 0.0)
    upstream = np.exp(log_student) - p_teacher
    for doc, g in zip(docs, upstream):
        model.backward(query, doc, float(g), out)
    return loss, out


def loss_pairwise_kd(model, query, pair_sample, documents, reduction="mean", out=None):
    """Binary KL between teacher preferences and the student's pair softmax.

    ``documents`` maps doc_id to Document for every doc the sample may
    reference.  ``reduction`` divides the pair sum (and gradients) by the
    number of pairs when set to "mean".
    """
    if reduction not in ("sum", "mean"):
        raise ValidationError(f"unknown reduction {reduction!r}")
    if out is None:
        out = model.zero_gradient()
    if len(pair_sample) == 0:
        return 0.0, out
    q_repr = model.encode_query(query)
    scale = 1.0 / len(pair_sample) if reduction == "mean" else 1.0
    total = 0.0
    for pair in pair_sample.pairs:
        if pair.p is None:
            raise ValidationError(
                f"pair ({pair.doc_i}, {pair.doc_j}) is missing its teacher probability"
            )
        for doc_id in (pair.doc_i, pair.doc_j):
            if doc_id not in documents:
                raise ValidationError(
                    f"pair references doc {doc_id!r} absent from the scoring set"
                )
        d_i, d_j = documents[pair.doc_i], documents[pair.doc_j]
        s_i = model.similarity(q_repr, model.encode_doc(d_i))
        s_j = model.similarity(q_repr, model.encode_doc(d_j))
        p_student = pairwise_student_prob(s_i, s_j)
        total += binary_kl(pair.p, p_student)
        g = scale * (p_student - pair.p)
        model.backward(query, d_i, g, out)
        model.backward(query, d_j, -g, out)
    return max(scale * total, 0.0), out


# -- batched combination --------------------------------------------------


@dataclass
class LossSettings:
    """Term weights and switches for the combined objective."""

    tau: float = 1.0
    lambda_kd: float = 1.0
    lambda_pair: float = 3.0
    use_cl: bool = True
    use_kd: bool = True
    use_pair: bool = True
    zero_shot: bool = False
    pair_reduction: str = "mean"

    def validate(self):
        if self.tau <= 0:
            raise ValidationError("tau must be > 0")
        if self.zero_shot and self.use_cl:
            raise ValidationError("zero-shot mode discards the contrastive term")

    def kd_weight(self):
        # The zero-shot objective applies the pointwise KL term unweighted.
        return 1.0 if self.zero_shot else self.lambda_kd

    def term_weights(self):
        return (
            1.0 if self.use_cl else 0.0,
            self.kd_weight() if self.use_kd else 0.0,
            self.lambda_pair if self.use_pair else 0.0,
        )


@dataclass
class BatchItem:
    """Per-query inputs assembled by the trainer for one optimizer step."""

    query: object
    kd_docs: list = field(default_factory=list)
    kd_teacher_scores: object = None
    pairs: object = None
    positive: object = None
    negatives: list = field(default_factory=list)


@dataclass
class LossBreakdown:
    l_cl: float
    l_kd: float
    l_pair: float
    total: float
    grad_cl: Gradient
    grad_kd: Gradient
    grad_pair: Gradient
    n_queries: int
    n_cl_queries: int

    def combined_gradient(self, settings):
        w_cl, w_kd, w_pair = settings.term_weights()
        combined = Gradient(
            {name: arr.shape for name, arr in self.grad_cl.tables.items()}
        )
        combined.scaled_add(self.grad_cl, w_cl)
        combined.scaled_add(self.grad_kd, w_kd)
        combined.scaled_add(self.grad_pair, w_pair)
        return combined

    def to_log_record(self, step):
        return {
            "step": step,
            "l_cl": self.l_cl,
            "l_kd": self.l_kd,
            "l_pair": self.l_pair,
            "total": self.total,
        }


def _query_losses(model, item, settings, documents):
    """Loss values and sparse gradient contributions for one query."""
    sinks = {
        "cl": RowUpdates(),
        "kd": RowUpdates(),
        "pair": RowUpdates(),
    }
    l_cl = None
    if settings.use_cl and item.positive is not None:
        l_cl, _ = loss_infonce(
            model, item.query, item.positive, item.negatives, out=sinks["cl"]
        )
    l_kd = 0.0
    if settings.use_kd and len(item.kd_docs) >= 2:
        l_kd, _ = loss_pointwise_kd(
            model,
            item.query,
            item.kd_docs,
            item.kd_teacher_scores,
            settings.tau,
            out=sinks["kd"],
        )
    l_pair = 0.0
    if settings.use_pair and item.pairs is not None and len(item.pairs) > 0:
        l_pair, _ = loss_pairwise_kd(
            model,
            item.query,
            item.pairs,
            documents,
            reduction=settings.pair_reduction,
            out=sinks["pair"],
        )
    return l_cl, l_kd, l_pair, sinks


def loss_total(model, items, settings, documents, map_fn=None):
    """Combined objective over a batch of queries.

    Each KL term is averaged over all queries in the batch; the contrastive
    term averages only over queries that have a labeled positive.  Gradients
    are merged into dense accumulators in batch order, so any parallel
    ``map_fn`` reproduces the sequential result bit for bit.
    """
    settings.validate()
    if not items:
        raise ValidationError("empty batch")
    if map_fn is None:
        map_fn = map
    results = list(
        map_fn(lambda item: _query_losses(model, item, settings, documents), items)
    )

    grads = {name: model.zero_gradient() for name in ("cl", "kd", "pair")}
    sum_cl = sum_kd = sum_pair = 0.0
    n_cl = 0
    for l_cl, l_kd, l_pair, sinks in results:
        if l_cl is not None:
            sum_cl += l_cl
            n_cl += 1
        sum_kd += l_kd
        sum_pair += l_pair
        for name, sink in sinks.items():
            sink.merge_into(grads[name])

    n = len(items)
    l_cl = sum_cl / n_cl if n_cl else 0.0
    l_kd = sum_kd / n
    l_pair = sum_pair / n
    if n_cl:
        for arr in grads["cl"].tables.values():
            arr /= n_cl
    for name in ("kd", "pair"):
        for arr in grads[name].tables.values():
            arr /= n

    w_cl, w_kd, w_pair = settings.term_weights()
    total = w_cl * l_cl + w_kd * l_kd + w_pair * l_pair
    return LossBreakdown(
        l_cl=l_cl,
        l_kd=l_kd,
        l_pair=l_pair,
        total=total,
        grad_cl=grads["cl"],
        grad_kd=grads["kd"],
        grad_pair=grads["pair"],
        n_queries=n,
        n_cl_queries=n_cl,
    )
