"""Exact similarity search over the encoded corpus.

The index stores every document representation plus the fingerprint of the
model that produced it; retrieval refuses to serve a model whose parameters
have changed since the build (stale-index detection).
"""

from __future__ import annotations

import json

import numpy as np

from . import kernels
from .corpus import RunEntry, RunList
from .errors import ParseError, StaleIndexError, ValidationError

_IDX_MAGIC = b"DRIDX1\n"


class Index:
    def __init__(self, mode, dim, fingerprint, doc_ids, pooled=None, doc_tokens=None, offsets=None):
        self.mode = mode
        self.dim = dim
        self.fingerprint = fingerprint
        self.doc_ids = list(doc_ids)
        self._doc_id_arr = np.array(self.doc_ids)
        self.pooled = pooled
        self.doc_tokens = doc_tokens
        self.offsets = offsets

    def __len__(self):
        return len(self.doc_ids)


def build_index(model, corpus):
    """Encode every corpus document under the current model parameters."""
    if not corpus.documents:
        raise ValidationError("cannot index an empty corpus")
    fingerprint = model.fingerprint()
    doc_ids = corpus.doc_ids
    if model.mode == "maxsim":
        reps = [model.encode_doc(corpus.documents[d]) for d in doc_ids]
        offsets = np.zeros(len(reps) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([r.shape[0] for r in reps])
        doc_tokens = np.concatenate(reps, axis=0)
        return Index(model.mode, model.dim, fingerprint, doc_ids,
                     doc_tokens=np.ascontiguousarray(doc_tokens), offsets=offsets)
    pooled = np.stack([model.encode_doc(corpus.documents[d]) for d in doc_ids])
    return Index(model.mode, model.dim, fingerprint, doc_ids,
                 pooled=np.ascontiguousarray(pooled))


def score_all(index, model, query):
    """Similarity of one query against every indexed document."""
    if index.fingerprint != model.fingerprint():
        raise StaleIndexError(
            "index was built by a different model; rebuild after parameter updates"
        )
    q_repr = model.encode_query(query)
    if index.mode == "maxsim":
        return kernels.maxsim_corpus(q_repr, index.doc_tokens, index.offsets)
    return index.pooled @ q_repr


def _top_indices(scores, doc_id_arr, k):
    """Exact top-k by (score desc, doc_id asc); ties at the boundary included
    as candidates so the partial sort matches a full sort."""
    n = scores.shape[0]
    k = min(k, n)
    if k == n:
        cand = np.arange(n)
    else:
        part = np.argpartition(-scores, k - 1)[:k]
        threshold = scores[part].min()
        cand = np.flatnonzero(scores >= threshold)
    order = np.lexsort((doc_id_arr[cand], -scores[cand]))
    return cand[order][:k]


def retrieve(index, model, query, k):
    """Top-k RunList for one query; scores are raw similarities."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    scores = score_all(index, model, query)
    top = _top_indices(scores, index._doc_id_arr, k)
    entries = [
        RunEntry(index.doc_ids[i], rank + 1, float(scores[i]))
        for rank, i in enumerate(top)
    ]
    return RunList(query.query_id, entries)


def save_index(index, path):
    header = {
        "dim": index.dim,
        "doc_ids": index.doc_ids,
        "fingerprint": index.fingerprint,
        "mode": index.mode,
    }
    if index.mode == "maxsim":
        header["n_tokens"] = int(index.offsets[-1])
    with open(path, "wb") as fh:
        fh.write(_IDX_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        if index.mode == "maxsim":
            fh.write(np.ascontiguousarray(index.offsets).tobytes())
            fh.write(np.ascontiguousarray(index.doc_tokens).tobytes())
        else:
            fh.write(np.ascontiguousarray(index.pooled).tobytes())


def load_index(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_IDX_MAGIC))
        if magic != _IDX_MAGIC:
            raise ParseError(path, 0, "not an index file")
        header = json.loads(fh.readline().decode("utf-8"))
        n, dim = len(header["doc_ids"]), header["dim"]
        if header["mode"] == "maxsim":
            offsets = np.frombuffer(fh.read(8 * (n + 1)), dtype=np.int64).copy()
            tokens = np.frombuffer(fh.read(), dtype=np.float64).reshape(
                header["n_tokens"], dim
            ).copy()
            return Index(header["mode"], dim, header["fingerprint"],
                         header["doc_ids"], doc_tokens=tokens, offsets=offsets)
        pooled = np.frombuffer(fh.read(), dtype=np.float64).reshape(n, dim).copy()
        return Index(header["mode"], dim, header["fingerprint"],
                     header["doc_ids"], pooled=pooled)
