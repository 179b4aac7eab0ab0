"""Teacher rerankers: pointwise scorers and pairwise preference judges.

Three families implement each facet:

  * synthetic teachers backed by an oracle relevance table, with keyed
    Gaussian noise so every (query, doc) draw is reproducible in isolation
  * sparse logistic models over bag-of-words interaction features, trained
    by full-batch gradient descent
  * adapters that turn option-token masses from a completion client into
    scores and preference probabilities

Pairwise teachers return P(d_i preferred over d_j | q); pointwise teachers
return unnormalized relevance scores.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .corpus import RunList
from .distill import PairSample, SampledPair
from .errors import (
    DegenerateResponseError,
    ParseError,
    TransportError,
    ValidationError,
)


class PointwiseTeacher:
    """Scores one document for one query; higher means more relevant."""

    def score(self, query, doc):
        raise NotImplementedError

    def score_docs(self, query, docs):
        return np.array([self.score(query, d) for d in docs], dtype=np.float64)

    def fingerprint(self):
        raise NotImplementedError


class PairwiseTeacher:
    """Emits P(d_i is preferred over d_j | q) in [0, 1]."""

    def prefer(self, query, doc_i, doc_j):
        raise NotImplementedError

    def fingerprint(self):
        raise NotImplementedError


def _keyed_normal(seed, parts):
    """One reproducible standard normal draw keyed by (seed, parts).

    Hashing the key and feeding the digest through a Box-Muller transform
    keeps draws independent of evaluation order.
    """
    msg = "\x1f".join(parts).encode("utf-8")
    digest = hashlib.blake2b(
        msg, digest_size=16, key=str(int(seed)).encode("ascii")
    ).digest()
    hi = int.from_bytes(digest[:8], "big")
    lo = int.from_bytes(digest[8:], "big")
    u1 = (hi + 1) / (2.0**64 + 1.0)
    u2 = lo / 2.0**64
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class SyntheticTeacher(PointwiseTeacher, PairwiseTeacher):
    """Oracle-backed teacher with independently controllable noise.

    Pointwise scores are true relevance plus N(0, noise_point^2); pairwise
    preferences are sigmoid(beta * (r_i - r_j) + noise_pair * eps).  Noise
    draws are keyed by the id tuple, so repeated queries see identical
    values no matter the call order.
    """

    def __init__(self, relevance, beta=1.0, noise_point=0.0, noise_pair=0.0, seed=0):
        if beta <= 0:
            raise ValidationError("beta must be > 0")
        if noise_point < 0 or noise_pair < 0:
            raise ValidationError("noise scales must be >= 0")
        self.relevance = relevance
        self.beta = float(beta)
        self.noise_point = float(noise_point)
        self.noise_pair = float(noise_pair)
        self.seed = int(seed)

    def score(self, query, doc):
        value = self.relevance.score(query.query_id, doc.doc_id)
        if self.noise_point > 0.0:
            value += self.noise_point * _keyed_normal(
                self.seed, ("point", query.query_id, doc.doc_id)
            )
        return value

    def score_docs(self, query, docs):
        row = self.relevance.row(query.query_id)
        values = np.array(
            [row[self.relevance.doc_index(d.doc_id)] for d in docs], dtype=np.float64
        )
        if self.noise_point > 0.0:
            values = values + np.array(
                [
                    self.noise_point
                    * _keyed_normal(self.seed, ("point", query.query_id, d.doc_id))
                    for d in docs
                ]
            )
        return values

    def prefer(self, query, doc_i, doc_j):
        r_i = self.relevance.score(query.query_id, doc_i.doc_id)
        r_j = self.relevance.score(query.query_id, doc_j.doc_id)
        logit = self.beta * (r_i - r_j)
        if self.noise_pair > 0.0:
            logit += self.noise_pair * _keyed_normal(
                self.seed, ("pair", query.query_id, doc_i.doc_id, doc_j.doc_id)
            )
        return _sigmoid(logit)

    def fingerprint(self):
        payload = json.dumps(
            {
                "kind": "synthetic",
                "relevance": self.relevance.digest(),
                "beta": repr(self.beta),
                "noise_point": repr(self.noise_point),
                "noise_pair": repr(self.noise_pair),
                "seed": self.seed,
            },
            sort_keys=True,
        )
        return hashlib.blake2b(payload.encode(), digest_size=16).hexdigest()


# -- sparse logistic teachers ---------------------------------------------


def _product_features(a_idx, a_val, b_idx, b_val):
    common, a_pos, b_pos = np.intersect1d(
        a_idx, b_idx, assume_unique=True, return_indices=True
    )
    return common, a_val[a_pos] * b_val[b_pos]


class _SparseLogistic:
    """Linear model over named sparse feature blocks plus a bias."""

    def __init__(self, blocks, vocab_size):
        if vocab_size < 1:
            raise ValidationError("vocab_size must be positive")
        self.blocks = tuple(blocks)
        self.vocab_size = int(vocab_size)
        self.weights = {b: np.zeros(vocab_size, dtype=np.float64) for b in self.blocks}
        self.bias = 0.0

    def raw(self, feats):
        total = self.bias
        for block, idx, val in feats:
            if idx.size:
                total += float(np.dot(self.weights[block][idx], val))
        return total

    def digest(self):
        h = hashlib.blake2b(digest_size=16)
        for block in self.blocks:
            h.update(block.encode())
            h.update(self.weights[block].tobytes())
        h.update(repr(self.bias).encode())
        return h.hexdigest()


def _bce_terms(raws, labels):
    # log(1 + exp(raw)) - y * raw, stable for large |raw|
    return np.logaddexp(0.0, raws) - labels * raws


def _train_logistic(core, feats, labels, steps, lr, heldout=None):
    """Full-batch gradient descent on binary cross-entropy.

    Returns per-step loss history, including the loss after the final
    update (``steps + 1`` entries).
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if lr <= 0:
        raise ValidationError("learning rate must be > 0")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValidationError("no training examples")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValidationError("labels must be 0 or 1")
    history = {"train": [], "heldout": []}
    n = labels.size
    for _ in range(steps + 1):
        raws = np.array([core.raw(f) for f in feats])
        history["train"].append(float(np.mean(_bce_terms(raws, labels))))
        if heldout is not None:
            h_feats, h_labels = heldout
            h_raws = np.array([core.raw(f) for f in h_feats])
            history["heldout"].append(float(np.mean(_bce_terms(h_raws, h_labels))))
        if len(history["train"]) == steps + 1:
            break
        probs = 1.0 / (1.0 + np.exp(-np.clip(raws, -500, 500)))
        resid = (probs - labels) / n
        grads = {b: np.zeros(core.vocab_size) for b in core.blocks}
        for f, r in zip(feats, resid):
            for block, idx, val in f:
                if idx.size:
                    np.add.at(grads[block], idx, r * val)
        for block in core.blocks:
            core.weights[block] -= lr * grads[block]
        core.bias -= lr * float(resid.sum())
    return history


_PAIR_BLOCKS = ("query", "doc_i", "doc_j", "query_doc_i", "query_doc_j")


class PairwiseClassifier(PairwiseTeacher):
    """Logistic preference model over query/doc count features.

    Feature blocks: raw counts of the query and both documents, plus the
    elementwise products query*doc_i and query*doc_j.
    """

    def __init__(self, vocab_size):
        self.core = _SparseLogistic(_PAIR_BLOCKS, vocab_size)

    def features(self, query, doc_i, doc_j):
        qi, qv = query.term_indices, query.term_counts
        pi_idx, pi_val = _product_features(qi, qv, doc_i.term_indices, doc_i.term_counts)
        pj_idx, pj_val = _product_features(qi, qv, doc_j.term_indices, doc_j.term_counts)
        return [
            ("query", qi, qv.astype(np.float64)),
            ("doc_i", doc_i.term_indices, doc_i.term_counts.astype(np.float64)),
            ("doc_j", doc_j.term_indices, doc_j.term_counts.astype(np.float64)),
            ("query_doc_i", pi_idx, pi_val.astype(np.float64)),
            ("query_doc_j", pj_idx, pj_val.astype(np.float64)),
        ]

    def raw_score(self, query, doc_i, doc_j):
        return self.core.raw(self.features(query, doc_i, doc_j))

    def prefer(self, query, doc_i, doc_j):
        return _sigmoid(self.raw_score(query, doc_i, doc_j))

    def fingerprint(self):
        return hashlib.blake2b(
            ("pairwise-classifier:" + self.core.digest()).encode(), digest_size=16
        ).hexdigest()


def train_pairwise_classifier(classifier, triplets, steps=200, lr=0.5, heldout=None):
    """Fit the preference classifier on (query, doc_i, doc_j, label) rows.

    ``label`` is 1 when doc_i should be preferred.  Returns the binary
    cross-entropy history dict with "train" and "heldout" series.
    """
    feats = [classifier.features(q, di, dj) for q, di, dj, _ in triplets]
    labels = [t[3] for t in triplets]
    held = None
    if heldout is not None:
        held = (
            [classifier.features(q, di, dj) for q, di, dj, _ in heldout],
            np.asarray([t[3] for t in heldout], dtype=np.float64),
        )
    return _train_logistic(classifier.core, feats, labels, steps, lr, held)


_POINT_BLOCKS = ("query", "doc", "query_doc")


class PointwiseScorer(PointwiseTeacher):
    """Logistic relevance model over query/doc count features."""

    def __init__(self, vocab_size):
        self.core = _SparseLogistic(_POINT_BLOCKS, vocab_size)

    def features(self, query, doc):
        qi, qv = query.term_indices, query.term_counts
        p_idx, p_val = _product_features(qi, qv, doc.term_indices, doc.term_counts)
        return [
            ("query", qi, qv.astype(np.float64)),
            ("doc", doc.term_indices, doc.term_counts.astype(np.float64)),
            ("query_doc", p_idx, p_val.astype(np.float64)),
        ]

    def score(self, query, doc):
        return self.core.raw(self.features(query, doc))

    def fingerprint(self):
        return hashlib.blake2b(
            ("pointwise-scorer:" + self.core.digest()).encode(), digest_size=16
        ).hexdigest()


def train_pointwise_scorer(scorer, examples, steps=200, lr=0.5, heldout=None):
    """Fit the relevance scorer on (query, doc, label) rows."""
    feats = [scorer.features(q, d) for q, d, _ in examples]
    labels = [e[2] for e in examples]
    held = None
    if heldout is not None:
        held = (
            [scorer.features(q, d) for q, d, _ in heldout],
            np.asarray([e[2] for e in heldout], dtype=np.float64),
        )
    return _train_logistic(scorer.core, feats, labels, steps, lr, held)


# -- prompt templates ------------------------------------------------------


POINTWISE_OPTIONS = ("Yes", "No")
PAIRWISE_OPTIONS = ("A", "B")

_POINTWISE_HEADER = "Is the document relevant to the query (Yes or No)?"
_PAIRWISE_HEADER = "Which document is more relevant to the query?\nAnswer only 'A' or 'B'."


def prompt_pointwise(query_text, document_text):
    return (
        f"{_POINTWISE_HEADER}\n"
        f"Query: {query_text}\n"
        f"Document: {document_text}"
    )


def prompt_pairwise(query_text, document_a_text, document_b_text):
    return (
        f"{_PAIRWISE_HEADER}\n"
        f"Query: {query_text}\n"
        f"Document A: {document_a_text}\n"
        f"Document B: {document_b_text}"
    )


def parse_pointwise_prompt(prompt):
    """Recover (query, document) from a pointwise prompt.

    Exact only when the filled texts contain no line starting with a
    template label, which tokenized corpus text never does.
    """
    head, sep, rest = prompt.partition("\nQuery: ")
    if head != _POINTWISE_HEADER or not sep:
        raise ValidationError("malformed pointwise prompt")
    query, sep, document = rest.partition("\nDocument: ")
    if not sep:
        raise ValidationError("malformed pointwise prompt")
    return query, document


def parse_pairwise_prompt(prompt):
    """Recover (query, document_a, document_b) from a pairwise prompt."""
    head, sep, rest = prompt.partition("\nQuery: ")
    if head != _PAIRWISE_HEADER or not sep:
        raise ValidationError("malformed pairwise prompt")
    query, sep, rest = rest.partition("\nDocument A: ")
    if not sep:
        raise ValidationError("malformed pairwise prompt")
    document_a, sep, document_b = rest.partition("\nDocument B: ")
    if not sep:
        raise ValidationError("malformed pairwise prompt")
    return query, document_a, document_b


# -- completion-client adapters -------------------------------------------


def _complete_with_retries(client, prompt, options, retries):
    if retries < 0:
        raise ValidationError("retries must be >= 0")
    last = None
    for _ in range(retries + 1):
        try:
            return client.complete(prompt, options)
        except TransportError as exc:
            last = exc
    raise TransportError(
        f"teacher call failed after {retries + 1} attempts: {last}"
    )


def _renormalized_mass(masses, first, second, temperature):
    """Probability of ``first`` after restricting mass to the two options."""
    if temperature <= 0:
        raise ValidationError("temperature must be > 0")
    a = float(masses.get(first, 0.0))
    b = float(masses.get(second, 0.0))
    if a < 0.0 or b < 0.0:
        raise DegenerateResponseError(
            f"negative option mass in response: {first}={a}, {second}={b}"
        )
    if temperature != 1.0:
        a = a ** (1.0 / temperature)
        b = b ** (1.0 / temperature)
    if a + b == 0.0:
        raise DegenerateResponseError(
            f"no probability mass on {first!r} or {second!r}"
        )
    return a / (a + b)


def llm_score_pointwise(client, query, doc, temperature=1.0, retries=3):
    """Renormalized 'Yes' probability for one query/document pair."""
    prompt = prompt_pointwise(query.text, doc.text)
    masses = _complete_with_retries(client, prompt, POINTWISE_OPTIONS, retries)
    return _renormalized_mass(masses, "Yes", "No", temperature)


def llm_prefer_pairwise(client, query, doc_i, doc_j, temperature=1.0, retries=3):
    """Renormalized 'A' probability with doc_i in the A slot."""
    prompt = prompt_pairwise(query.text, doc_i.text, doc_j.text)
    masses = _complete_with_retries(client, prompt, PAIRWISE_OPTIONS, retries)
    return _renormalized_mass(masses, "A", "B", temperature)


class LLMPointwiseTeacher(PointwiseTeacher):
    def __init__(self, client, temperature=1.0, retries=3):
        self.client = client
        self.temperature = float(temperature)
        self.retries = int(retries)

    def score(self, query, doc):
        return llm_score_pointwise(
            self.client, query, doc, self.temperature, self.retries
        )

    def fingerprint(self):
        payload = f"llm-point:{self.client.fingerprint()}:{self.temperature!r}"
        return hashlib.blake2b(payload.encode(), digest_size=16).hexdigest()


class LLMPairwiseTeacher(PairwiseTeacher):
    def __init__(self, client, temperature=1.0, retries=3):
        self.client = client
        self.temperature = float(temperature)
        self.retries = int(retries)

    def prefer(self, query, doc_i, doc_j):
        return llm_prefer_pairwise(
            self.client, query, doc_i, doc_j, self.temperature, self.retries
        )

    def fingerprint(self):
        payload = f"llm-pair:{self.client.fingerprint()}:{self.temperature!r}"
        return hashlib.blake2b(payload.encode(), digest_size=16).hexdigest()


class RelevanceMockClient:
    """Completion client that answers from an oracle relevance table.

    Prompt texts are parsed and resolved back to corpus ids, so the mock
    behaves like a perfectly calibrated reranker: pairwise mass follows
    sigmoid(beta * (r_a - r_b)) and pointwise 'Yes' mass follows
    sigmoid(beta * (r - midpoint)).
    """

    def __init__(self, corpus, relevance, beta=1.0, midpoint=None):
        self.relevance = relevance
        self.beta = float(beta)
        if midpoint is None:
            midpoint = float(np.mean(relevance.matrix))
        self.midpoint = float(midpoint)
        self._doc_by_text = {}
        for doc_id in sorted(corpus.documents):
            text = corpus.documents[doc_id].text
            self._doc_by_text.setdefault(text, doc_id)
        self._query_by_text = {}
        for query_id in sorted(corpus.queries):
            text = corpus.queries[query_id].text
            self._query_by_text.setdefault(text, query_id)

    def _resolve(self, table, text, kind):
        if text not in table:
            raise DegenerateResponseError(f"cannot resolve {kind} text {text!r}")
        return table[text]

    def complete(self, prompt, options):
        if tuple(options) == PAIRWISE_OPTIONS:
            q_text, a_text, b_text = parse_pairwise_prompt(prompt)
            qid = self._resolve(self._query_by_text, q_text, "query")
            r_a = self.relevance.score(qid, self._resolve(self._doc_by_text, a_text, "doc"))
            r_b = self.relevance.score(qid, self._resolve(self._doc_by_text, b_text, "doc"))
            p = _sigmoid(self.beta * (r_a - r_b))
            return {"A": p, "B": 1.0 - p}
        if tuple(options) == POINTWISE_OPTIONS:
            q_text, d_text = parse_pointwise_prompt(prompt)
            qid = self._resolve(self._query_by_text, q_text, "query")
            r = self.relevance.score(qid, self._resolve(self._doc_by_text, d_text, "doc"))
            p = _sigmoid(self.beta * (r - self.midpoint))
            return {"Yes": p, "No": 1.0 - p}
        raise DegenerateResponseError(f"unsupported option set {options!r}")

    def fingerprint(self):
        payload = json.dumps(
            {
                "kind": "relevance-mock",
                "relevance": self.relevance.digest(),
                "beta": repr(self.beta),
                "midpoint": repr(self.midpoint),
            },
            sort_keys=True,
        )
        return hashlib.blake2b(payload.encode(), digest_size=16).hexdigest()


class FileBackedLLMClient:
    """Record/replay wrapper around a completion client.

    Responses are appended to a JSONL file keyed by a hash of the prompt
    and option tuple.  With no inner client, unseen prompts raise
    TransportError, which makes replay gaps loud instead of silent.
    """

    def __init__(self, path, inner=None):
        self.path = str(path)
        self.inner = inner
        self._store = {}
        if os.path.exists(self.path):
            with open(self.path, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                        self._store[record["key"]] = {
                            k: float(v) for k, v in record["masses"].items()
                        }
                    except (json.JSONDecodeError, KeyError, TypeError) as exc:
                        raise ParseError(self.path, line_no, f"bad cache record: {exc}")

    @staticmethod
    def _key(prompt, options):
        payload = prompt + "\x1f" + "\x1f".join(options)
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=16).hexdigest()

    def complete(self, prompt, options):
        key = self._key(prompt, options)
        if key in self._store:
            return dict(self._store[key])
        if self.inner is None:
            raise TransportError("no recorded response for prompt")
        masses = {k: float(v) for k, v in self.inner.complete(prompt, options).items()}
        self._store[key] = masses
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "masses": masses}, sort_keys=True) + "\n")
        return dict(masses)

    def fingerprint(self):
        if self.inner is not None:
            inner_fp = self.inner.fingerprint()
        else:
            h = hashlib.blake2b(digest_size=16)
            for key in sorted(self._store):
                h.update(key.encode())
                h.update(json.dumps(self._store[key], sort_keys=True).encode())
            inner_fp = h.hexdigest()
        return hashlib.blake2b(
            f"file-backed:{inner_fp}".encode(), digest_size=16
        ).hexdigest()


# -- memoization -----------------------------------------------------------


class CachedPointwiseTeacher(PointwiseTeacher):
    """Memoizes scores by (teacher fingerprint, query_id, doc_id)."""

    def __init__(self, inner, cache=None):
        self.inner = inner
        self.cache = {} if cache is None else cache
        self._fp = inner.fingerprint()

    def score(self, query, doc):
        key = (self._fp, "point", query.query_id, doc.doc_id)
        if key not in self.cache:
            self.cache[key] = float(self.inner.score(query, doc))
        return self.cache[key]

    def fingerprint(self):
        return self._fp


class CachedPairwiseTeacher(PairwiseTeacher):
    """Memoizes preferences by (teacher fingerprint, query_id, id pair)."""

    def __init__(self, inner, cache=None):
        self.inner = inner
        self.cache = {} if cache is None else cache
        self._fp = inner.fingerprint()

    def prefer(self, query, doc_i, doc_j):
        key = (self._fp, "pair", query.query_id, doc_i.doc_id, doc_j.doc_id)
        if key not in self.cache:
            self.cache[key] = float(self.inner.prefer(query, doc_i, doc_j))
        return self.cache[key]

    def fingerprint(self):
        return self._fp


def save_teacher_cache(cache, path):
    """Write a memoization cache as sorted JSONL (byte-deterministic)."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(cache):
            fh.write(
                json.dumps({"key": list(key), "value": cache[key]}, sort_keys=True)
                + "\n"
            )


def load_teacher_cache(path):
    cache = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                cache[tuple(record["key"])] = float(record["value"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(path, line_no, f"bad cache record: {exc}")
    return cache


# -- reranking and score dumps --------------------------------------------


def rerank_pointwise(run, query, corpus, teacher):
    """Reorder a retrieved run by teacher score (doc_id breaks ties).

    Returns the reranked RunList with ranks rewritten 1..k and the
    teacher scores keyed by doc_id.
    """
    docs = []
    for doc_id in run.doc_ids():
        if doc_id not in corpus.documents:
            raise ValidationError(f"run references unknown doc {doc_id!r}")
        docs.append(corpus.documents[doc_id])
    scores = teacher.score_docs(query, docs)
    scored = {d.doc_id: float(s) for d, s in zip(docs, scores)}
    reranked = RunList.from_scores(run.query_id, list(scored.items()))
    return reranked, scored


@dataclass
class QueryTeacherScores:
    """Teacher outputs for one query: pointwise scores plus sampled pairs."""

    query_id: str
    pointwise: dict
    pairs: PairSample

    def to_record(self):
        return {
            "query_id": self.query_id,
            "pointwise": {k: float(v) for k, v in self.pointwise.items()},
            "pairwise": [
                {"i": p.doc_i, "j": p.doc_j, "p": float(p.p)}
                for p in self.pairs.pairs
            ],
        }


class TeacherScores:
    """Per-query teacher outputs with a JSONL dump format.

    One object per line: {"query_id": ..., "pointwise": {doc_id: score},
    "pairwise": [{"i": ..., "j": ..., "p": ...}]}.
    """

    def __init__(self):
        self.entries = {}

    def add(self, entry):
        if entry.query_id in self.entries:
            raise ValidationError(f"duplicate teacher scores for {entry.query_id!r}")
        self.entries[entry.query_id] = entry

    def __contains__(self, query_id):
        return query_id in self.entries

    def __getitem__(self, query_id):
        if query_id not in self.entries:
            raise ValidationError(f"no teacher scores for query {query_id!r}")
        return self.entries[query_id]

    def __len__(self):
        return len(self.entries)

    def query_ids(self):
        return list(self.entries)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for query_id in sorted(self.entries):
                fh.write(
                    json.dumps(self.entries[query_id].to_record(), sort_keys=True)
                    + "\n"
                )

    @classmethod
    def load(cls, path, delta=None):
        """Rebuild from a dump; pair ranks are recomputed from the scores.

        ``delta`` restores the sampler's rank-distance bound; when omitted
        it is inferred as the widest observed gap plus one.
        """
        scores = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    query_id = record["query_id"]
                    pointwise = {k: float(v) for k, v in record["pointwise"].items()}
                    raw_pairs = [
                        (p["i"], p["j"], float(p["p"])) for p in record["pairwise"]
                    ]
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ParseError(path, line_no, f"bad teacher score record: {exc}")
                order = sorted(pointwise, key=lambda d: (-pointwise[d], d))
                rank_of = {doc_id: r for r, doc_id in enumerate(order, start=1)}
                pairs = []
                for doc_i, doc_j, p in raw_pairs:
                    if doc_i not in rank_of or doc_j not in rank_of:
                        raise ParseError(
                            path, line_no, f"pair references unscored doc"
                        )
                    pairs.append(
                        SampledPair(rank_of[doc_i], rank_of[doc_j], doc_i, doc_j, p)
                    )
                if delta is None:
                    gaps = [abs(p.rank_i - p.rank_j) for p in pairs]
                    bound = (max(gaps) + 1) if gaps else 1
                else:
                    bound = delta
                sample = PairSample(query_id, bound, tuple(pairs))
                sample.validate()
                scores.add(QueryTeacherScores(query_id, pointwise, sample))
        return scores
