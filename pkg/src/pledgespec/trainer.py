"""Supervised training for all heads, plus the two-stage context pipeline.

Stage one trains an encoder+head on labeled sentences.  Stage two freezes
that model, collects its predicted distributions over each document, and
trains a second model whose head input is the sentence encoding
concatenated with the previous L predicted distributions.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from pledgespec import encoder as enc_mod
from pledgespec import heads as heads_mod
from pledgespec import metrics as metrics_mod
from pledgespec.corpus import Corpus, Sentence
from pledgespec.diffcore import (
    Adam,
    ParameterStore,
    Tape,
    Var,
    load_tensors,
    ops,
    save_tensors,
)
from pledgespec.encoder import EmbeddingTable
from pledgespec.heads import HeadConfig, HeadOutput, Prediction

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    """Bad training configuration or inputs."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; carries the offending epoch and batch."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch}: loss {loss}"
        )
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    head: HeadConfig = field(default_factory=HeadConfig)
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 5
    context_window: int = 0
    seed: int = 0
    hidden: int = 64
    embed_dim: int = 50
    encoder_kind: str = "bigru"
    bow_mode: str = "tf"
    train_embeddings: bool | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.context_window < 0:
            raise TrainingError(f"context window must be >= 0, got {self.context_window}")
        if self.batch_size < 1:
            raise TrainingError(f"batch size must be >= 1, got {self.batch_size}")
        if self.encoder_kind not in ("bigru", "bow"):
            raise TrainingError(f"unknown encoder kind {self.encoder_kind!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["head"] = HeadConfig(**d["head"])
        return TrainConfig(**d)


class TrainedModel:
    """Parameters, vocabulary, and config; enough to predict and to reload."""

    def __init__(self, store: ParameterStore, table: EmbeddingTable,
                 config: TrainConfig, metadata: dict,
                 base: "TrainedModel | None" = None):
        self.store = store
        self.table = table
        self.config = config
        self.metadata = metadata
        self.base = base
        if config.context_window > 0 and base is None:
            raise TrainingError("context model requires a base model")

    # ------------------------------------------------------------ encoding

    def _embed_var(self) -> Var:
        if "embed" in self.store:
            return self.store["embed"]
        return Var(self.table.vectors)

    def encode_batch(self, sentences: list[Sentence],
                     context: np.ndarray | None = None) -> Var:
        if self.config.encoder_kind == "bow":
            tf = np.vstack([self.table.term_frequencies(s.tokens) for s in sentences])
            h = enc_mod.encode_bow_batch(tf, self.store)
        else:
            ids_list = [self.table.ids(s.tokens) for s in sentences]
            lengths = np.array([max(len(i), 1) for i in ids_list])
            mat = np.full((len(sentences), lengths.max()), self.table.unk_index,
                          dtype=np.intp)
            for i, ids in enumerate(ids_list):
                mat[i, :len(ids)] = ids
            h = enc_mod.encode_bigru_batch(mat, lengths, self._embed_var(), self.store)
        if self.config.context_window > 0:
            if context is None:
                raise TrainingError("context model asked to encode without context")
            h = ops.concat([h, Var(context)], axis=1)
        return h

    # ---------------------------------------------------------- prediction

    def predict_batch(self, sentences: list[Sentence],
                      context: np.ndarray | None = None) -> list[Prediction]:
        out = heads_mod.head_forward(self.encode_batch(sentences, context),
                                     self.store, self.config.head)
        return heads_mod.decode(out, self.config.head)

    def predict(self, sentence: Sentence,
                context: np.ndarray | None = None) -> Prediction:
        if not sentence.tokens:
            raise TrainingError("cannot predict on an empty sentence")
        if self.config.context_window > 0 and context is None:
            raise TrainingError("context model needs a context vector; "
                                "use predict_corpus for document-aware prediction")
        ctx = context[None, :] if context is not None else None
        return self.predict_batch([sentence], ctx)[0]

    def predict_corpus(self, corpus: Corpus, chunk: int = 128) -> dict[str, Prediction]:
        """Predictions for every sentence, with document context when needed."""
        ctx_map = None
        if self.config.context_window > 0:
            ctx_map = build_context_features(self.base, corpus,
                                             self.config.context_window, chunk)
        out: dict[str, Prediction] = {}
        sents = list(corpus.sentences)
        for lo in range(0, len(sents), chunk):
            batch = sents[lo:lo + chunk]
            ctx = None
            if ctx_map is not None:
                ctx = np.vstack([ctx_map[s.id] for s in batch])
            for s, p in zip(batch, self.predict_batch(batch, ctx)):
                out[s.id] = p
        return out


@dataclass
class EvalResult:
    mmae: float
    rho: float | None
    per_class: dict[int, float]
    count: int


def evaluate_model(model: TrainedModel, corpus: Corpus) -> EvalResult:
    labeled = [s for s in corpus.sentences if s.label is not None]
    if not labeled:
        raise TrainingError("evaluation corpus has no labeled sentences")
    preds_map = model.predict_corpus(corpus)
    preds = np.array([preds_map[s.id].value for s in labeled])
    golds = np.array([s.label for s in labeled])
    try:
        rho = metrics_mod.spearman(preds, golds)
    except metrics_mod.MetricError:
        rho = None
    return EvalResult(
        mmae=metrics_mod.mmae(preds, golds),
        rho=rho,
        per_class=metrics_mod.per_class_mae(preds, golds),
        count=len(labeled),
    )


# ------------------------------------------------------------------ training

def _init_model(config: TrainConfig, table: EmbeddingTable,
                rng: np.random.Generator, trainable_embed: bool,
                extra_input: int = 0) -> ParameterStore:
    store = ParameterStore()
    if config.encoder_kind == "bow":
        in_dim = table.size if config.bow_mode == "tf" else table.dim
        enc_mod.init_bow_params(store, rng, in_dim, 2 * config.hidden)
    else:
        enc_mod.init_bigru_params(store, rng, table.dim, config.hidden)
    if trainable_embed and config.encoder_kind == "bigru":
        store.add("embed", table.vectors)
    head_dim = 2 * config.hidden + extra_input
    heads_mod.init_head_params(store, rng, head_dim, config.head)
    return store


def _batch_loss(model: TrainedModel, batch: list[Sentence],
                context: np.ndarray | None) -> Var:
    labels = np.array([s.label for s in batch], dtype=np.float64)
    out = heads_mod.head_forward(model.encode_batch(batch, context),
                                 model.store, model.config.head)
    return heads_mod.head_loss(out, labels, model.config.head)


def train(train_corpus: Corpus, val_corpus: Corpus, config: TrainConfig,
          table: EmbeddingTable | None = None,
          context_features: dict[str, np.ndarray] | None = None,
          base: TrainedModel | None = None,
          log_path=None) -> TrainedModel:
    """Mini-batch descent on the joint loss with best-validation early stop.

    ``context_features`` / ``base`` are supplied by :func:`train_with_context`;
    plain supervised training leaves them None.
    """
    labeled = [s for s in train_corpus.sentences if s.label is not None]
    if not labeled:
        raise TrainingError("training corpus has no labeled sentences")
    if not any(s.label is not None for s in val_corpus.sentences):
        raise TrainingError("validation corpus has no labeled sentences")
    if config.context_window > 0 and (context_features is None or base is None):
        raise TrainingError("context training requires base model features")

    rng = np.random.default_rng(config.seed)
    if table is None:
        toks = (t for s in labeled for t in s.tokens)
        table = enc_mod.build_random_table(toks, config.embed_dim, config.seed)
        trainable = True if config.train_embeddings is None else config.train_embeddings
    else:
        trainable = False if config.train_embeddings is None else config.train_embeddings

    extra = config.context_window * config.head.classes
    store = _init_model(config, table, rng, trainable, extra)
    model = TrainedModel(store, table, config,
                         metadata={"seed": config.seed, "curve": []}, base=base)
    opt = Adam(store, lr=config.lr)

    best_mmae = np.inf
    best_values = store.copy_values()
    best_epoch = 0
    stale = 0
    curve: list[dict] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(labeled))
        losses = []
        for bi, lo in enumerate(range(0, len(labeled), config.batch_size)):
            batch = [labeled[i] for i in order[lo:lo + config.batch_size]]
            ctx = None
            if context_features is not None and config.context_window > 0:
                ctx = np.vstack([context_features[s.id] for s in batch])
            with Tape() as tape:
                loss = _batch_loss(model, batch, ctx)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(epoch, bi, float(loss.value))
            store.zero_grad()
            tape.backward(loss)
            opt.step()
            losses.append(float(loss.value))
        res = evaluate_model(model, val_corpus)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)),
               "val_mmae": res.mmae,
               "val_rho": res.rho if res.rho is not None else float("nan")}
        curve.append(row)
        log.info("epoch %d: train loss %.4f, val mmae %.4f", epoch,
                 row["train_loss"], row["val_mmae"])
        if res.mmae < best_mmae:
            best_mmae = res.mmae
            best_values = store.copy_values()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break

    store.load_values(best_values)
    model.metadata.update({"curve": curve, "best_epoch": best_epoch,
                           "best_val_mmae": best_mmae,
                           "embed_trainable": trainable})
    if log_path is not None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss",
                                               "val_mmae", "val_rho"])
            w.writeheader()
            w.writerows(curve)
    return model


def build_context_features(base: TrainedModel, corpus: Corpus, window: int,
                           chunk: int = 128) -> dict[str, np.ndarray]:
    """Previous-``window`` predicted distributions per sentence (zero-filled).

    Output vectors have length window * K; the first sentences of each
    document get leading zeros for the missing positions.
    """
    if window < 0:
        raise TrainingError(f"context window must be >= 0, got {window}")
    if not base.config.head.distributional:
        raise TrainingError(
            f"context features need a distributional head, got {base.config.head.kind!r}"
        )
    k = base.config.head.classes
    feats: dict[str, np.ndarray] = {}
    if window == 0:
        return {s.id: np.zeros(0) for s in corpus.sentences}
    preds = base.predict_corpus(corpus, chunk)
    for doc_sents in corpus.documents.values():
        qs = [preds[s.id].q for s in doc_sents]
        for i, s in enumerate(doc_sents):
            parts = []
            for j in range(i - window, i):
                parts.append(qs[j] if j >= 0 else np.zeros(k))
            feats[s.id] = np.concatenate(parts)
    return feats


def train_with_context(train_corpus: Corpus, val_corpus: Corpus,
                       base: TrainedModel, config: TrainConfig,
                       log_path=None) -> TrainedModel:
    """Stage two: a fresh model over [h; context] with the base model frozen."""
    if config.context_window < 1:
        raise TrainingError("context training needs context_window >= 1")
    if config.head.classes != base.config.head.classes:
        raise TrainingError(
            f"class count mismatch: base {base.config.head.classes}, "
            f"config {config.head.classes}"
        )
    feats_train = build_context_features(base, train_corpus, config.context_window)
    feats_val = build_context_features(base, val_corpus, config.context_window)
    feats = {**feats_train, **feats_val}
    return train(train_corpus, val_corpus, config, context_features=feats,
                 base=base, log_path=log_path)


def tune_alpha(train_corpus: Corpus, val_corpus: Corpus, config: TrainConfig,
               grid=(0.1, 0.5, 1.0, 2.0)) -> tuple[float, dict[float, float]]:
    """Pick alpha by validation MMAE over the grid; returns (best, scores)."""
    scores: dict[float, float] = {}
    for alpha in grid:
        cfg = dataclasses.replace(config,
                                  head=dataclasses.replace(config.head, alpha=alpha))
        model = train(train_corpus, val_corpus, cfg)
        scores[alpha] = model.metadata["best_val_mmae"]
    best = min(scores, key=lambda a: (scores[a], a))
    return best, scores


# --------------------------------------------------------------- persistence

def _model_tensors(model: TrainedModel, prefix: str = "") -> dict[str, np.ndarray]:
    tensors = {f"{prefix}param.{k}": v.value for k, v in model.store.items()}
    if "embed" not in model.store:
        tensors[f"{prefix}frozen_embed"] = model.table.vectors
    return tensors


def _model_meta(model: TrainedModel) -> dict:
    return {
        "config": model.config.to_dict(),
        "vocab": sorted(model.table.vocab, key=model.table.vocab.get),
        "param_names": model.store.names(),
        "metadata": model.metadata,
    }


def save_model(model: TrainedModel, path) -> None:
    tensors = _model_tensors(model)
    meta = _model_meta(model)
    if model.base is not None:
        if model.base.base is not None:
            raise TrainingError("nested context models deeper than one level "
                                "are not supported")
        tensors.update(_model_tensors(model.base, prefix="base."))
        meta["base"] = _model_meta(model.base)
    save_tensors(path, tensors, meta)


def _rebuild(meta: dict, tensors: dict[str, np.ndarray], prefix: str = "",
             base: TrainedModel | None = None) -> TrainedModel:
    config = TrainConfig.from_dict(meta["config"])
    store = ParameterStore()
    for name in meta["param_names"]:
        store.add(name, tensors[f"{prefix}param.{name}"])
    if "embed" in store:
        vectors = store["embed"].value
    else:
        vectors = tensors[f"{prefix}frozen_embed"]
    vocab = {t: i for i, t in enumerate(meta["vocab"])}
    table = EmbeddingTable(vocab, vectors)
    return TrainedModel(store, table, config, dict(meta["metadata"]), base=base)


def load_model(path) -> TrainedModel:
    tensors, meta = load_tensors(path)
    base = None
    if "base" in meta:
        base = _rebuild(meta["base"], tensors, prefix="base.")
    return _rebuild(meta, tensors, base=base)
