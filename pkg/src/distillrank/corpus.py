"""Data model and ingestion: documents, queries, judgments, run files.

File formats:
  - documents/queries: JSONL with fields ``id`` and ``text``
    (``docs.jsonl`` / ``queries.jsonl`` inside a data directory)
  - qrels: whitespace-separated ``query_id 0 doc_id grade``
  - runs: six-column TREC ``query_id Q0 doc_id rank score run_tag``
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

DOCS_FILENAME = "docs.jsonl"
QUERIES_FILENAME = "queries.jsonl"
QRELS_FILENAME = "qrels.txt"

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text):
    """Lowercase and split on runs of non-alphanumeric characters."""
    return tuple(t for t in _TOKEN_SPLIT.split(text.lower()) if t)


@dataclass(eq=False)
class Document:
    """One collection item with its tokenized feature views.

    ``token_ids`` follows text order (used for multi-vector similarity);
    ``term_indices``/``term_counts`` aggregate the same tokens into a sparse
    count vector over the corpus vocabulary.
    """

    doc_id: str
    text: str
    tokens: tuple
    token_ids: np.ndarray
    term_indices: np.ndarray
    term_counts: np.ndarray


@dataclass(eq=False)
class Query:
    query_id: str
    text: str
    tokens: tuple
    token_ids: np.ndarray
    term_indices: np.ndarray
    term_counts: np.ndarray


class Vocabulary:
    """Deterministic term -> index map built from sorted unique tokens."""

    def __init__(self, terms):
        self.terms = tuple(sorted(set(terms)))
        self.index = {t: i for i, t in enumerate(self.terms)}

    def __len__(self):
        return len(self.terms)

    def vectorize(self, tokens, owner):
        """Token-id sequence plus aggregated (indices, counts) arrays."""
        try:
            ids = np.array([self.index[t] for t in tokens], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"{owner}: token {exc.args[0]!r} not in vocabulary")
        uniq, counts = np.unique(ids, return_counts=True)
        return ids, uniq, counts.astype(np.float64)


class Corpus:
    """Immutable bundle of documents, queries, and their shared vocabulary."""

    def __init__(self, vocabulary, documents, queries):
        self.vocabulary = vocabulary
        self.documents = documents
        self.queries = queries
        self.doc_ids = list(documents)
        self.query_ids = list(queries)

    @property
    def vocab_size(self):
        return len(self.vocabulary)

    @classmethod
    def from_texts(cls, doc_items, query_items):
        """Build a corpus from (id, text) pairs, validating all invariants."""
        doc_tokens, query_tokens = {}, {}
        for kind, items, store in (("document", doc_items, doc_tokens),
                                   ("query", query_items, query_tokens)):
            for item_id, text in items:
                if item_id in store:
                    raise ValidationError(f"duplicate {kind} id {item_id!r}")
                tokens = tokenize(text)
                if not tokens:
                    raise ValidationError(f"{kind} {item_id!r} has no tokens")
                store[item_id] = (text, tokens)

        all_tokens = []
        for text, tokens in doc_tokens.values():
            all_tokens.extend(tokens)
        for text, tokens in query_tokens.values():
            all_tokens.extend(tokens)
        vocab = Vocabulary(all_tokens)

        documents = {}
        for doc_id, (text, tokens) in doc_tokens.items():
            ids, uniq, counts = vocab.vectorize(tokens, f"document {doc_id}")
            documents[doc_id] = Document(doc_id, text, tokens, ids, uniq, counts)
        queries = {}
        for query_id, (text, tokens) in query_tokens.items():
            ids, uniq, counts = vocab.vectorize(tokens, f"query {query_id}")
            queries[query_id] = Query(query_id, text, tokens, ids, uniq, counts)
        return cls(vocab, documents, queries)


def _read_jsonl_items(path):
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}")
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise ParseError(path, line_no, "object must have 'id' and 'text' fields")
            items.append((str(obj["id"]), str(obj["text"])))
    return items


def load_corpus(path):
    """Load ``docs.jsonl`` and ``queries.jsonl`` from a data directory."""
    from pathlib import Path

    root = Path(path)
    docs = _read_jsonl_items(root / DOCS_FILENAME)
    queries = _read_jsonl_items(root / QUERIES_FILENAME)
    return Corpus.from_texts(docs, queries)


def save_corpus(corpus, path):
    """Write ``docs.jsonl``/``queries.jsonl``; inverse of load_corpus."""
    from pathlib import Path

    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / DOCS_FILENAME, "w", encoding="utf-8") as fh:
        for doc in corpus.documents.values():
            fh.write(json.dumps({"id": doc.doc_id, "text": doc.text}) + "\n")
    with open(root / QUERIES_FILENAME, "w", encoding="utf-8") as fh:
        for query in corpus.queries.values():
            fh.write(json.dumps({"id": query.query_id, "text": query.text}) + "\n")


class Judgments:
    """Graded relevance labels with an access counter.

    Every read of label content bumps ``access_count``; the zero-shot
    training mode is verified to never touch labels by asserting the counter
    stays at zero.
    """

    def __init__(self, grades):
        self._by_query = {}
        for (query_id, doc_id), grade in grades.items():
            grade = int(grade)
            if grade < 0:
                raise ValidationError(
                    f"negative grade {grade} for ({query_id!r}, {doc_id!r})"
                )
            self._by_query.setdefault(query_id, {})[doc_id] = grade
        self.access_count = 0

    def query_ids(self):
        return list(self._by_query)

    def grade(self, query_id, doc_id):
        self.access_count += 1
        return self._by_query.get(query_id, {}).get(doc_id, 0)

    def judged_docs(self, query_id):
        self.access_count += 1
        return dict(self._by_query.get(query_id, {}))

    def relevant_docs(self, query_id):
        self.access_count += 1
        return {d: g for d, g in self._by_query.get(query_id, {}).items() if g > 0}

    def has_relevant(self, query_id):
        self.access_count += 1
        return any(g > 0 for g in self._by_query.get(query_id, {}).values())

    def items(self):
        self.access_count += 1
        return [
            ((q, d), g)
            for q, docs in self._by_query.items()
            for d, g in docs.items()
        ]

    def validate_against(self, corpus):
        for q, docs in self._by_query.items():
            if q not in corpus.queries:
                raise ValidationError(f"judged query {q!r} not in corpus")
            for d in docs:
                if d not in corpus.documents:
                    raise ValidationError(f"judged doc {d!r} not in corpus")


def load_qrels(path, corpus=None):
    grades = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError(path, line_no, f"expected 4 fields, got {len(parts)}")
            query_id, _, doc_id, grade = parts
            try:
                grade = int(grade)
            except ValueError:
                raise ParseError(path, line_no, f"grade {parts[3]!r} is not an integer")
            if grade < 0:
                raise ParseError(path, line_no, f"negative grade {grade}")
            grades[(query_id, doc_id)] = grade
    judgments = Judgments(grades)
    if corpus is not None:
        judgments.validate_against(corpus)
    return judgments


def save_qrels(judgments, path):
    with open(path, "w", encoding="utf-8") as fh:
        for (query_id, doc_id), grade in judgments.items():
            fh.write(f"{query_id} 0 {doc_id} {grade}\n")


@dataclass(frozen=True)
class RunEntry:
    doc_id: str
    rank: int
    score: float


class RunList:
    """Ranked document list for one query.

    Invariants: ranks contiguous from 1, scores non-increasing with rank,
    doc ids distinct.
    """

    def __init__(self, query_id, entries):
        entries = sorted(entries, key=lambda e: e.rank)
        ranks = [e.rank for e in entries]
        if ranks != list(range(1, len(entries) + 1)):
            raise ValidationError(f"query {query_id!r}: ranks {ranks} are not 1..n")
        seen = set()
        for e in entries:
            if e.doc_id in seen:
                raise ValidationError(f"query {query_id!r}: duplicate doc {e.doc_id!r}")
            seen.add(e.doc_id)
        for prev, cur in zip(entries, entries[1:]):
            if cur.score > prev.score:
                raise ValidationError(
                    f"query {query_id!r}: score increases from rank {prev.rank} to {cur.rank}"
                )
        self.query_id = query_id
        self.entries = tuple(entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return (
            isinstance(other, RunList)
            and self.query_id == other.query_id
            and self.entries == other.entries
        )

    def doc_ids(self):
        return [e.doc_id for e in self.entries]

    def rank_of(self, doc_id):
        for e in self.entries:
            if e.doc_id == doc_id:
                return e.rank
        raise ValidationError(f"doc {doc_id!r} not in run for query {self.query_id!r}")

    @classmethod
    def from_scores(cls, query_id, scored):
        """Build from (doc_id, score) pairs: sort by score desc, doc_id asc."""
        ordered = sorted(scored, key=lambda t: (-t[1], t[0]))
        return cls(
            query_id,
            [RunEntry(d, i + 1, float(s)) for i, (d, s) in enumerate(ordered)],
        )


def load_run(path):
    """Parse a TREC run file into an ordered {query_id: RunList} mapping."""
    per_query = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(path, line_no, f"expected 6 fields, got {len(parts)}")
            query_id, _, doc_id, rank, score, _ = parts
            try:
                rank = int(rank)
                score = float(score)
            except ValueError:
                raise ParseError(path, line_no, "rank/score fields are not numeric")
            per_query.setdefault(query_id, []).append(RunEntry(doc_id, rank, score))
    return {q: RunList(q, entries) for q, entries in per_query.items()}


def save_run(runs, path, tag="distillrank"):
    """Write RunLists in TREC format; scores printed with 6 decimals."""
    if isinstance(runs, dict):
        runs = runs.values()
    with open(path, "w", encoding="utf-8") as fh:
        for run in runs:
            for e in run.entries:
                fh.write(f"{run.query_id} Q0 {e.doc_id} {e.rank} {e.score:.6f} {tag}\n")


class TrueRelevance:
    """Oracle relevance table for synthetic corpora (stand-in for labels)."""

    MAGIC = b"DRREL1\n"

    def __init__(self, query_ids, doc_ids, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (len(query_ids), len(doc_ids)):
            raise ValidationError("relevance matrix shape does not match id lists")
        self.query_ids = list(query_ids)
        self.doc_ids = list(doc_ids)
        self.matrix = matrix
        self._q_index = {q: i for i, q in enumerate(self.query_ids)}
        self._d_index = {d: i for i, d in enumerate(self.doc_ids)}

    def score(self, query_id, doc_id):
        try:
            return float(self.matrix[self._q_index[query_id], self._d_index[doc_id]])
        except KeyError as exc:
            raise ValidationError(f"unknown id {exc.args[0]!r} in relevance lookup")

    def row(self, query_id):
        if query_id not in self._q_index:
            raise ValidationError(f"unknown query {query_id!r} in relevance lookup")
        return self.matrix[self._q_index[query_id]]

    def doc_index(self, doc_id):
        if doc_id not in self._d_index:
            raise ValidationError(f"unknown doc {doc_id!r} in relevance lookup")
        return self._d_index[doc_id]

    def digest(self):
        import hashlib

        h = hashlib.blake2b(digest_size=16)
        h.update("\x1f".join(self.query_ids).encode())
        h.update("\x1f".join(self.doc_ids).encode())
        h.update(np.ascontiguousarray(self.matrix).tobytes())
        return h.hexdigest()

    def save(self, path):
        header = json.dumps(
            {"query_ids": self.query_ids, "doc_ids": self.doc_ids}, sort_keys=True
        )
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(header.encode("utf-8") + b"\n")
            fh.write(np.ascontiguousarray(self.matrix).tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(len(cls.MAGIC))
            if magic != cls.MAGIC:
                raise ParseError(path, 0, "not a relevance file")
            header = json.loads(fh.readline().decode("utf-8"))
            matrix = np.frombuffer(fh.read(), dtype=np.float64).reshape(
                len(header["query_ids"]), len(header["doc_ids"])
            )
        return cls(header["query_ids"], header["doc_ids"], matrix.copy())


@dataclass
class SyntheticSpec:
    """Parameters of the seeded synthetic retrieval task.

    Documents and queries draw tokens from latent topic distributions; true
    relevance is the scaled overlap of the latent topic vectors plus optional
    Gaussian noise.  ``positive_fraction`` controls how many top-relevance
    docs per query receive a positive judgment (default: top decile).
    """

    n_docs: int
    n_queries: int
    vocab_size: int = 2000
    n_topics: int = 16
    doc_length: tuple = (20, 40)
    query_length: tuple = (3, 6)
    doc_concentration: float = 0.25
    query_concentration: float = 0.08
    background_mix: float = 0.05
    relevance_scale: float = 20.0
    noise_scale: float = 0.0
    positive_fraction: float = 0.1
    seed: int = 0

    def validate(self):
        if self.n_docs < 1 or self.n_queries < 1:
            raise ValidationError("need at least one document and one query")
        if self.vocab_size < self.n_topics:
            raise ValidationError("vocab_size must be >= n_topics")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")
        if not (0 < self.positive_fraction <= 1):
            raise ValidationError("positive_fraction must be in (0, 1]")


def generate_synthetic(spec):
    """Generate (Corpus, Judgments, TrueRelevance) from a seeded spec.

    Topic model: the vocabulary is split into per-topic blocks; a topic's
    term distribution is uniform over its block mixed with a uniform
    background.  Each doc/query gets a Dirichlet topic vector; relevance is
    ``relevance_scale * <z_query, z_doc>`` plus seeded noise.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    v, t = spec.vocab_size, spec.n_topics

    term_width = len(str(v - 1))
    terms = [f"t{i:0{term_width}d}" for i in range(v)]
    doc_width = len(str(spec.n_docs - 1))
    query_width = len(str(spec.n_queries - 1))

    # Per-topic term distributions over the shared vocabulary.
    blocks = np.array_split(np.arange(v), t)
    topic_dists = np.full((t, v), spec.background_mix / v)
    for k, block in enumerate(blocks):
        topic_dists[k, block] += (1.0 - spec.background_mix) / len(block)

    doc_topics = rng.dirichlet(np.full(t, spec.doc_concentration), size=spec.n_docs)
    query_topics = rng.dirichlet(np.full(t, spec.query_concentration), size=spec.n_queries)

    doc_items = []
    lo, hi = spec.doc_length
    for i in range(spec.n_docs):
        length = int(rng.integers(lo, hi + 1))
        token_idx = rng.choice(v, size=length, p=doc_topics[i] @ topic_dists)
        text = " ".join(terms[j] for j in token_idx)
        doc_items.append((f"d{i:0{doc_width}d}", text))

    query_items = []
    lo, hi = spec.query_length
    for i in range(spec.n_queries):
        length = int(rng.integers(lo, hi + 1))
        token_idx = rng.choice(v, size=length, p=query_topics[i] @ topic_dists)
        text = " ".join(terms[j] for j in token_idx)
        query_items.append((f"q{i:0{query_width}d}", text))

    corpus = Corpus.from_texts(doc_items, query_items)

    relevance = spec.relevance_scale * (query_topics @ doc_topics.T)
    if spec.noise_scale > 0:
        relevance = relevance + spec.noise_scale * rng.standard_normal(relevance.shape)
    doc_ids = [d for d, _ in doc_items]
    query_ids = [q for q, _ in query_items]
    true_rel = TrueRelevance(query_ids, doc_ids, relevance)

    # Positive judgments: the top positive_fraction of docs per query by
    # true relevance, ties broken by doc_id, at least one per query.
    n_pos = max(1, int(round(spec.positive_fraction * spec.n_docs)))
    doc_arr = np.array(doc_ids)
    grades = {}
    for qi, query_id in enumerate(query_ids):
        order = np.lexsort((doc_arr, -relevance[qi]))
        for di in order[:n_pos]:
            grades[(query_id, doc_arr[di])] = 1
    return corpus, Judgments(grades), true_rel
