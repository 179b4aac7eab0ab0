"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable (or explicitly disabled via
``DISTILLRANK_PURE_PYTHON=1``).  The callable signatures must stay in lock
step with ``_kernels.pyx``; ``kernels.py`` validates inputs before
dispatching, so these functions may assume float64/int64 contiguous arrays.
"""

import numpy as np

# Rows per chunk when scoring a whole corpus in maxsim mode; bounds the size
# of the intermediate (tokens x query_tokens) dot matrix.
_MAXSIM_CHUNK_TOKENS = 262144


def pool_rows(table, indices, counts):
    """Return sum_t counts[t] * table[indices[t]] as a (dim,) vector."""
    if len(indices) == 0:
        return np.zeros(table.shape[1], dtype=np.float64)
    return counts @ table[indices]


def add_weighted_rows(table, indices, weights, vec):
    """In-place table[indices[n]] += weights[n] * vec, applied in order."""
    np.add.at(table, indices, weights[:, None] * vec[None, :])


def maxsim_pair(q_tokens, d_tokens):
    """MaxSim score of one (query, document) token-matrix pair.

    Returns (score, argmax) where argmax[i] is the document token index
    attaining the maximum for query token i (first occurrence on ties).
    """
    dots = q_tokens @ d_tokens.T
    argmax = np.argmax(dots, axis=1)
    score = float(dots[np.arange(dots.shape[0]), argmax].sum())
    return score, argmax.astype(np.int64)


def maxsim_corpus(q_tokens, doc_tokens, offsets, out):
    """Score every document against one query in maxsim mode.

    ``doc_tokens`` is the concatenation of all per-document token matrices
    and ``offsets[d]:offsets[d+1]`` delimits document d.  Scores are written
    into ``out`` (one entry per document).
    """
    n_docs = offsets.shape[0] - 1
    start_doc = 0
    while start_doc < n_docs:
        end_doc = start_doc
        span = 0
        while end_doc < n_docs and (span == 0 or span < _MAXSIM_CHUNK_TOKENS):
            span = offsets[end_doc + 1] - offsets[start_doc]
            end_doc += 1
        lo, hi = offsets[start_doc], offsets[end_doc]
        dots = doc_tokens[lo:hi] @ q_tokens.T
        starts = (offsets[start_doc:end_doc] - lo).astype(np.intp)
        per_doc_max = np.maximum.reduceat(dots, starts, axis=0)
        out[start_doc:end_doc] = per_doc_max.sum(axis=1)
        start_doc = end_doc
    return out
