"""Trainable dual encoder backed by linear embedding tables.

Three similarity modes share one parameterization:

  dot     s = <pool(q), pool(d)>           pool(x) = sum_t count_t * row_t
  cosine  s = <pool(q)/|pool(q)|, pool(d)/|pool(d)|>
  maxsim  s = sum_i max_j <Q[token_i], D[token_j]>   (per-token, unpooled)

``backward`` produces exact analytic partials of s with respect to every
touched table row; the maxsim gradient is routed through the argmax doc
token per query token (ties resolved to the lowest token position).
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import kernels
from .errors import ParseError, ValidationError

MODES = ("dot", "cosine", "maxsim")

_CKPT_MAGIC = b"DRCKPT1\n"


class Gradient:
    """Dense per-table gradient accumulator matching a model's parameters."""

    def __init__(self, table_shapes):
        self.tables = {
            name: np.zeros(shape, dtype=np.float64)
            for name, shape in table_shapes.items()
        }
        self.count = 0

    def add(self, table, rows, weights, vec):
        kernels.add_weighted_rows(self.tables[table], rows, weights, vec)

    def reset(self):
        for arr in self.tables.values():
            arr[:] = 0.0
        self.count = 0

    def scaled_add(self, other, factor):
        for name, arr in self.tables.items():
            arr += factor * other.tables[name]
        self.count += other.count

    def check_finite(self):
        for name, arr in self.tables.items():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite gradient entries in table {name!r}")


class RowUpdates:
    """Sparse per-query gradient contribution.

    Workers accumulate into private RowUpdates and the trainer merges them
    into a dense Gradient in query order, which keeps parallel runs
    bit-identical to the sequential reference execution.
    """

    def __init__(self):
        self.tables = {}

    def add(self, table, rows, weights, vec):
        slots = self.tables.setdefault(table, {})
        contrib = weights[:, None] * vec[None, :]
        for n, row in enumerate(np.asarray(rows)):
            row = int(row)
            if row in slots:
                slots[row] = slots[row] + contrib[n]
            else:
                slots[row] = contrib[n].copy()

    def merge_into(self, gradient):
        for table, slots in self.tables.items():
            target = gradient.tables[table]
            for row, vec in slots.items():
                target[row] += vec
        gradient.count += 1


class EncoderModel:
    """Query/document embedding tables plus a similarity mode."""

    def __init__(self, vocab_size, dim, mode="dot", seed=0, shared=False):
        if mode not in MODES:
            raise ValidationError(f"unknown similarity mode {mode!r}")
        if dim < 1 or vocab_size < 1:
            raise ValidationError("dim and vocab_size must be positive")
        self.vocab_size = int(vocab_size)
        self.dim = int(dim)
        self.mode = mode
        self.seed = int(seed)
        self.shared = bool(shared)
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(dim)
        if shared:
            table = rng.uniform(-0.5, 0.5, size=(vocab_size, dim)) * scale
            self.tables = {"embed": table}
        else:
            self.tables = {
                "query": rng.uniform(-0.5, 0.5, size=(vocab_size, dim)) * scale,
                "doc": rng.uniform(-0.5, 0.5, size=(vocab_size, dim)) * scale,
            }

    def _table_name(self, side):
        return "embed" if self.shared else side

    def table(self, side):
        return self.tables[self._table_name(side)]

    def table_shapes(self):
        return {name: arr.shape for name, arr in self.tables.items()}

    def zero_gradient(self):
        return Gradient(self.table_shapes())

    # -- encoding ---------------------------------------------------------

    def _encode(self, item, side):
        if item.term_indices.size == 0:
            raise ValidationError(f"cannot encode {side} with empty feature vector")
        table = self.table(side)
        if self.mode == "maxsim":
            return table[item.token_ids]
        pooled = kernels.pool_rows(table, item.term_indices, item.term_counts)
        if self.mode == "cosine":
            norm = np.linalg.norm(pooled)
            if norm == 0.0:
                raise ValidationError(
                    f"zero-norm pooled vector for {side}; cannot normalize"
                )
            return pooled / norm
        return pooled

    def encode_query(self, query):
        return self._encode(query, "query")

    def encode_doc(self, doc):
        return self._encode(doc, "doc")

    def similarity(self, q_repr, d_repr):
        if q_repr.shape[-1] != d_repr.shape[-1]:
            raise ValidationError(
                f"dimension mismatch: {q_repr.shape[-1]} vs {d_repr.shape[-1]}"
            )
        if self.mode == "maxsim":
            score, _ = kernels.maxsim_pair(q_repr, d_repr)
            return score
        return float(np.dot(q_repr, d_repr))

    def score(self, query, doc):
        """Convenience: similarity of freshly encoded query and doc."""
        return self.similarity(self.encode_query(query), self.encode_doc(doc))

    # -- gradients --------------------------------------------------------

    def backward(self, query, doc, upstream, out=None):
        """Accumulate upstream * d(similarity)/d(params) into ``out``.

        ``out`` may be a dense Gradient or a sparse RowUpdates; a fresh
        Gradient is created when omitted.
        """
        if not np.isfinite(upstream):
            raise ValidationError(f"non-finite upstream gradient {upstream!r}")
        if out is None:
            out = self.zero_gradient()
        if upstream == 0.0:
            if isinstance(out, Gradient):
                out.count += 1
            return out
        qt, dt = self._table_name("query"), self._table_name("doc")
        if self.mode == "maxsim":
            q_repr = self.table("query")[query.token_ids]
            d_repr = self.table("doc")[doc.token_ids]
            _, argmax = kernels.maxsim_pair(q_repr, d_repr)
            # ds/dQ[token_i] = D[argmax_i]; ds/dD[token_j] = sum of matched q rows.
            for i, j in enumerate(argmax):
                out.add(
                    qt,
                    query.token_ids[i : i + 1],
                    np.array([upstream]),
                    d_repr[j],
                )
                out.add(
                    dt,
                    doc.token_ids[j : j + 1],
                    np.array([upstream]),
                    q_repr[i],
                )
        else:
            q_pooled = kernels.pool_rows(
                self.table("query"), query.term_indices, query.term_counts
            )
            d_pooled = kernels.pool_rows(
                self.table("doc"), doc.term_indices, doc.term_counts
            )
            if self.mode == "dot":
                dq, dd = d_pooled, q_pooled
            else:
                qn, dn = np.linalg.norm(q_pooled), np.linalg.norm(d_pooled)
                if qn == 0.0 or dn == 0.0:
                    raise ValidationError("zero-norm pooled vector in cosine backward")
                q_hat, d_hat = q_pooled / qn, d_pooled / dn
                s = float(np.dot(q_hat, d_hat))
                dq = (d_hat - s * q_hat) / qn
                dd = (q_hat - s * d_hat) / dn
            out.add(qt, query.term_indices, upstream * query.term_counts, dq)
            out.add(dt, doc.term_indices, upstream * doc.term_counts, dd)
        if isinstance(out, Gradient):
            out.count += 1
        return out

    # -- persistence ------------------------------------------------------

    def _serialized(self):
        header = json.dumps(
            {
                "dim": self.dim,
                "mode": self.mode,
                "seed": self.seed,
                "shared": self.shared,
                "tables": sorted(self.tables),
                "vocab_size": self.vocab_size,
            },
            sort_keys=True,
        ).encode("utf-8")
        chunks = [_CKPT_MAGIC, header, b"\n"]
        for name in sorted(self.tables):
            chunks.append(np.ascontiguousarray(self.tables[name]).tobytes())
        return chunks

    def fingerprint(self):
        h = hashlib.blake2b(digest_size=16)
        for chunk in self._serialized():
            h.update(chunk)
        return h.hexdigest()

    def save(self, path):
        with open(path, "wb") as fh:
            for chunk in self._serialized():
                fh.write(chunk)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(len(_CKPT_MAGIC))
            if magic != _CKPT_MAGIC:
                raise ParseError(path, 0, "not a checkpoint file")
            header = json.loads(fh.readline().decode("utf-8"))
            model = cls.__new__(cls)
            model.vocab_size = header["vocab_size"]
            model.dim = header["dim"]
            model.mode = header["mode"]
            model.seed = header["seed"]
            model.shared = header["shared"]
            model.tables = {}
            n = model.vocab_size * model.dim
            for name in header["tables"]:
                payload = fh.read(8 * n)
                if len(payload) != 8 * n:
                    raise ParseError(path, 0, f"truncated payload for table {name!r}")
                model.tables[name] = np.frombuffer(payload, dtype=np.float64).reshape(
                    model.vocab_size, model.dim
                ).copy()
        return model

    def clone(self):
        import copy

        other = copy.copy(self)
        other.tables = {name: arr.copy() for name, arr in self.tables.items()}
        return other
