"""Sentence encoders: bidirectional gated recurrent network and a
bag-of-words feed-forward baseline.

Both map a token sequence to a fixed-size encoding of dimension ``2H``.
The recurrent path runs batched over padded id matrices with step masks,
so held states stay exact for shorter sentences.
"""

from __future__ import annotations

import logging

import numpy as np

from pledgespec.diffcore import ParameterStore, Var
from pledgespec.diffcore import ops

log = logging.getLogger(__name__)

MAX_TOKENS = 128

_GATES = ("z", "r", "c")
_DIRECTIONS = ("fwd", "bwd")


class EmbeddingError(ValueError):
    """Malformed embedding file."""


class EmbeddingTable:
    """Token -> index mapping plus the vector matrix.

    The matrix has one extra final row for unknown tokens (the mean vector
    for file-loaded tables, a random row for randomly initialized ones).
    """

    def __init__(self, vocab: dict[str, int], vectors: np.ndarray):
        self.vocab = vocab
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.unk_index = self.vectors.shape[0] - 1
        if any(i >= self.vectors.shape[0] for i in vocab.values()):
            raise EmbeddingError("vocabulary index outside the vector matrix")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    def ids(self, tokens, max_len: int = MAX_TOKENS) -> np.ndarray:
        if len(tokens) > max_len:
            log.info("truncating sentence of %d tokens to %d", len(tokens), max_len)
            tokens = tokens[:max_len]
        return np.array([self.vocab.get(t, self.unk_index) for t in tokens], dtype=np.intp)

    def term_frequencies(self, tokens) -> np.ndarray:
        """Raw token counts over the vocabulary (unknowns pooled)."""
        tf = np.zeros(self.size, dtype=np.float64)
        for t in tokens:
            tf[self.vocab.get(t, self.unk_index)] += 1.0
        return tf


def load_embeddings(path) -> EmbeddingTable:
    """Read a text embedding file of lines ``token v1 ... vd``."""
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingError(f"line {line_no}: no vector components")
            elif len(values) != dim:
                raise EmbeddingError(
                    f"line {line_no}: expected {dim} components, got {len(values)}"
                )
            vec = np.array([float(v) for v in values])
            if token in vocab:
                log.warning("duplicate embedding token %r on line %d; last occurrence wins",
                            token, line_no)
                rows[vocab[token]] = vec
            else:
                vocab[token] = len(rows)
                rows.append(vec)
    if not rows:
        raise EmbeddingError(f"{path}: empty embedding file")
    matrix = np.vstack(rows)
    unknown = matrix.mean(axis=0, keepdims=True)
    return EmbeddingTable(vocab, np.vstack([matrix, unknown]))


def build_random_table(corpus_tokens, dim: int, seed: int) -> EmbeddingTable:
    """Random-normal table over the corpus vocabulary (plus unknown row)."""
    vocab_tokens = sorted(set(corpus_tokens))
    if not vocab_tokens:
        raise EmbeddingError("cannot build a table from an empty vocabulary")
    rng = np.random.default_rng(seed)
    vocab = {t: i for i, t in enumerate(vocab_tokens)}
    vectors = rng.normal(0.0, 0.1, size=(len(vocab_tokens) + 1, dim))
    return EmbeddingTable(vocab, vectors)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n))
    u, _, vt = np.linalg.svd(a)
    return u @ vt


def init_bigru_params(store: ParameterStore, rng: np.random.Generator,
                      embed_dim: int, hidden: int, prefix: str = "gru") -> None:
    """Register both directions' gate weights (recurrent mats orthogonal)."""
    scale = 1.0 / np.sqrt(embed_dim)
    for d in _DIRECTIONS:
        for g in _GATES:
            store.add(f"{prefix}.{d}.W{g}", rng.normal(0.0, scale, size=(embed_dim, hidden)))
            store.add(f"{prefix}.{d}.U{g}", _orthogonal(rng, hidden))
            store.add(f"{prefix}.{d}.b{g}", np.zeros(hidden))


def init_bow_params(store: ParameterStore, rng: np.random.Generator,
                    input_dim: int, out_dim: int, prefix: str = "bow") -> None:
    scale = 1.0 / np.sqrt(input_dim)
    store.add(f"{prefix}.W1", rng.normal(0.0, scale, size=(input_dim, out_dim)))
    store.add(f"{prefix}.b1", np.zeros(out_dim))


def _gru_direction(ids: np.ndarray, lengths: np.ndarray, embed: Var,
                   store: ParameterStore, prefix: str) -> Var:
    """Run one direction over a padded (B, T) id matrix; returns (B, H)."""
    batch, steps = ids.shape
    Wz, Uz, bz = store[f"{prefix}.Wz"], store[f"{prefix}.Uz"], store[f"{prefix}.bz"]
    Wr, Ur, br = store[f"{prefix}.Wr"], store[f"{prefix}.Ur"], store[f"{prefix}.br"]
    Wc, Uc, bc = store[f"{prefix}.Wc"], store[f"{prefix}.Uc"], store[f"{prefix}.bc"]
    hidden = Wz.value.shape[1]
    h = Var(np.zeros((batch, hidden)))
    for t in range(steps):
        x = ops.embedding(embed, ids[:, t])
        z = ops.sigmoid(ops.add(ops.add(ops.matmul(x, Wz), ops.matmul(h, Uz)), bz))
        r = ops.sigmoid(ops.add(ops.add(ops.matmul(x, Wr), ops.matmul(h, Ur)), br))
        cand = ops.tanh(ops.add(ops.add(ops.matmul(x, Wc),
                                        ops.matmul(ops.mul(r, h), Uc)), bc))
        h_new = ops.add(ops.mul(ops.sub(1.0, z), h), ops.mul(z, cand))
        alive = (lengths > t)
        if alive.all():
            h = h_new
        else:
            m = alive.astype(np.float64)[:, None]
            h = ops.add(ops.mul(m, h_new), ops.mul(1.0 - m, h))
    return h


def encode_bigru_batch(ids: np.ndarray, lengths: np.ndarray, embed: Var,
                       store: ParameterStore, prefix: str = "gru") -> Var:
    """Concatenated final forward/backward states, shape (B, 2H)."""
    if ids.ndim != 2 or ids.shape[0] != lengths.shape[0]:
        raise ValueError(f"ids {ids.shape} incompatible with lengths {lengths.shape}")
    rev = np.empty_like(ids)
    for i, n in enumerate(lengths):
        rev[i, :n] = ids[i, :n][::-1]
        rev[i, n:] = ids[i, n:]
    h_fwd = _gru_direction(ids, lengths, embed, store, f"{prefix}.fwd")
    h_bwd = _gru_direction(rev, lengths, embed, store, f"{prefix}.bwd")
    return ops.concat([h_fwd, h_bwd], axis=1)


def encode_bigru(tokens, table: EmbeddingTable, store: ParameterStore,
                 embed: Var | None = None, prefix: str = "gru") -> Var:
    """Encode one sentence; output dimension is exactly 2H."""
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token list")
    embed = embed if embed is not None else Var(table.vectors)
    ids = table.ids(tokens)[None, :]
    lengths = np.array([ids.shape[1]])
    return encode_bigru_batch(ids, lengths, embed, store, prefix)


def encode_bow_batch(tf_matrix: np.ndarray, store: ParameterStore,
                     prefix: str = "bow") -> Var:
    return ops.tanh(ops.add(ops.matmul(Var(tf_matrix), store[f"{prefix}.W1"]),
                            store[f"{prefix}.b1"]))


def encode_bow(tokens, table: EmbeddingTable, store: ParameterStore,
               prefix: str = "bow", mode: str = "tf", embed: Var | None = None) -> Var:
    """Order-invariant encoding from term frequencies (or mean embedding)."""
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token list")
    if mode == "tf":
        feats = table.term_frequencies(tokens)[None, :]
        return encode_bow_batch(feats, store, prefix)
    if mode == "mean_embedding":
        embed = embed if embed is not None else Var(table.vectors)
        ids = table.ids(tokens)
        x = ops.embedding(embed, ids)
        m = ops.mean_rows(x)
        return ops.tanh(ops.add(ops.matmul(m, store[f"{prefix}.W1"]), store[f"{prefix}.b1"]))
    raise ValueError(f"unknown bag-of-words mode {mode!r}")
