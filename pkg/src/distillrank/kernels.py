"""Backend selection and validated entry points for the hot kernels.

At import time the compiled extension is preferred; if it is missing (not
built) or ``DISTILLRANK_PURE_PYTHON=1`` is set, the numpy fallback in
``_kernels_py`` is used instead.  Both backends implement identical
semantics; ``BACKEND`` records which one is active.
"""

import os

import numpy as np

if os.environ.get("DISTILLRANK_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"


def _as_f64_matrix(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _as_f64_vector(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _as_i64_vector(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def pool_rows(table, indices, counts):
    """Feature-weighted sum of table rows: sum_t counts[t] * table[indices[t]]."""
    return _impl.pool_rows(
        _as_f64_matrix(table), _as_i64_vector(indices), _as_f64_vector(counts)
    )


def add_weighted_rows(table, indices, weights, vec):
    """Scatter-add ``weights[n] * vec`` into ``table[indices[n]]`` in order."""
    if table.dtype != np.float64 or not table.flags.c_contiguous:
        raise ValueError("target table must be C-contiguous float64")
    _impl.add_weighted_rows(
        table, _as_i64_vector(indices), _as_f64_vector(weights), _as_f64_vector(vec)
    )


def maxsim_pair(q_tokens, d_tokens):
    """MaxSim score and per-query-token argmax for one (query, doc) pair."""
    score, argmax = _impl.maxsim_pair(_as_f64_matrix(q_tokens), _as_f64_matrix(d_tokens))
    return float(score), argmax


def maxsim_corpus(q_tokens, doc_tokens, offsets):
    """MaxSim scores of one query against every document in a packed corpus.

    ``offsets`` has one entry per document plus a trailing sentinel; document
    d owns rows ``offsets[d]:offsets[d+1]`` of ``doc_tokens``.
    """
    offsets = _as_i64_vector(offsets)
    out = np.empty(offsets.shape[0] - 1, dtype=np.float64)
    _impl.maxsim_corpus(_as_f64_matrix(q_tokens), _as_f64_matrix(doc_tokens), offsets, out)
    return out
