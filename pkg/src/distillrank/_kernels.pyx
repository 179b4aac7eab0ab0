# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: feature pooling, gradient row scatter, MaxSim.

Mirror of ``_kernels_py.py``; see that module for the semantics.  The
dispatcher in ``kernels.py`` guarantees float64/int64 C-contiguous inputs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def pool_rows(double[:, ::1] table, cnp.int64_t[::1] indices, double[::1] counts):
    cdef Py_ssize_t n = indices.shape[0]
    cdef Py_ssize_t dim = table.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = np.zeros(dim, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t t, k
    cdef double c
    cdef cnp.int64_t row
    for t in range(n):
        row = indices[t]
        c = counts[t]
        for k in range(dim):
            out[k] += c * table[row, k]
    return out_arr


def add_weighted_rows(double[:, ::1] table, cnp.int64_t[::1] indices,
                      double[::1] weights, double[::1] vec):
    cdef Py_ssize_t n = indices.shape[0]
    cdef Py_ssize_t dim = table.shape[1]
    cdef Py_ssize_t t, k
    cdef double w
    cdef cnp.int64_t row
    for t in range(n):
        row = indices[t]
        w = weights[t]
        for k in range(dim):
            table[row, k] += w * vec[k]


def maxsim_pair(double[:, ::1] q_tokens, double[:, ::1] d_tokens):
    cdef Py_ssize_t nq = q_tokens.shape[0]
    cdef Py_ssize_t nd = d_tokens.shape[0]
    cdef Py_ssize_t dim = q_tokens.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] argmax_arr = np.empty(nq, dtype=np.int64)
    cdef cnp.int64_t[::1] argmax = argmax_arr
    cdef double score = 0.0
    cdef double best, dot
    cdef Py_ssize_t i, j, k, best_j
    for i in range(nq):
        best = -1e308
        best_j = 0
        for j in range(nd):
            dot = 0.0
            for k in range(dim):
                dot += q_tokens[i, k] * d_tokens[j, k]
            if dot > best:
                best = dot
                best_j = j
        score += best
        argmax[i] = best_j
    return score, argmax_arr


def maxsim_corpus(double[:, ::1] q_tokens, double[:, ::1] doc_tokens,
                  cnp.int64_t[::1] offsets, double[::1] out):
    cdef Py_ssize_t n_docs = offsets.shape[0] - 1
    cdef Py_ssize_t nq = q_tokens.shape[0]
    cdef Py_ssize_t dim = q_tokens.shape[1]
    cdef Py_ssize_t d, i, j, k
    cdef cnp.int64_t lo, hi
    cdef double best, dot, score
    for d in range(n_docs):
        lo = offsets[d]
        hi = offsets[d + 1]
        score = 0.0
        for i in range(nq):
            best = -1e308
            for j in range(lo, hi):
                dot = 0.0
                for k in range(dim):
                    dot += q_tokens[i, k] * doc_tokens[j, k]
                if dot > best:
                    best = dot
            score += best
        out[d] = score
    return np.asarray(out)
