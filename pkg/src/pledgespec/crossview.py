"""Cross-view semi-supervised training.

On unlabeled batches the model first predicts under its full view (the
teacher pass, detached), then again under a restricted student view with
word-level dropout and zeroed context.  A consensus loss pulls the student
toward the teacher; labeled batches keep the ordinary joint objective.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from pledgespec import heads as heads_mod
from pledgespec import metrics as metrics_mod
from pledgespec.corpus import Corpus, Sentence
from pledgespec.diffcore import Adam, ParameterStore, Tape, Var, ops
from pledgespec.encoder import EmbeddingTable
from pledgespec import encoder as enc_mod
from pledgespec.trainer import (
    TrainConfig,
    TrainedModel,
    TrainingDiverged,
    TrainingError,
    build_context_features,
    evaluate_model,
    train,
)

log = logging.getLogger(__name__)

CONSENSUS_KINDS = ("mse", "kld", "emd")


class SslError(ValueError):
    """Invalid semi-supervision configuration."""


@dataclass(frozen=True)
class SslConfig:
    consensus: str = "emd"
    beta: float = 1.0
    word_dropout: float = 0.25
    interleave: int = 1
    norm_order: int = 2
    separate_student: bool = False

    def __post_init__(self):
        if self.consensus not in CONSENSUS_KINDS:
            raise SslError(f"unknown consensus kind {self.consensus!r}")
        if self.beta < 0:
            raise SslError(f"beta must be non-negative, got {self.beta}")
        if not 0.0 <= self.word_dropout <= 1.0:
            raise SslError(f"word dropout must be in [0, 1], got {self.word_dropout}")
        if self.interleave < 1:
            raise SslError(f"interleave ratio must be >= 1, got {self.interleave}")
        if self.norm_order not in (1, 2):
            raise SslError(f"norm order must be 1 or 2, got {self.norm_order}")


def student_view(sentence: Sentence, context: np.ndarray | None,
                 dropout_rate: float, rng: np.random.Generator
                 ) -> tuple[tuple[str, ...], np.ndarray | None]:
    """Word-dropped token view with zeroed context; keeps >= 1 token."""
    if not 0.0 <= dropout_rate <= 1.0:
        raise SslError(f"dropout rate must be in [0, 1], got {dropout_rate}")
    tokens = sentence.tokens
    if dropout_rate == 0.0:
        kept = tokens
    else:
        mask = rng.random(len(tokens)) >= dropout_rate
        if not mask.any():
            mask[rng.integers(len(tokens))] = True
        kept = tuple(t for t, keep in zip(tokens, mask) if keep)
    zeroed = np.zeros_like(context) if context is not None else None
    return kept, zeroed


def emd(q1: np.ndarray, q2: np.ndarray, norm_order: int = 2) -> float:
    """(1/K)^(1/l) * || cmf(q1) - cmf(q2) ||_l."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    if q1.shape != q2.shape:
        raise SslError(f"distribution shapes differ: {q1.shape} vs {q2.shape}")
    if norm_order not in (1, 2):
        raise SslError(f"norm order must be 1 or 2, got {norm_order}")
    k = q1.shape[-1]
    d = np.cumsum(q1, axis=-1) - np.cumsum(q2, axis=-1)
    if norm_order == 1:
        norm = np.abs(d).sum(axis=-1)
    else:
        norm = np.sqrt((d * d).sum(axis=-1))
    return float(np.mean((1.0 / k) ** (1.0 / norm_order) * norm))


def kl_divergence(q_from: np.ndarray, q_to: np.ndarray) -> float:
    """KL(q_from || q_to) with the module-wide log floor."""
    a = np.maximum(np.asarray(q_from, dtype=np.float64), ops.LOG_FLOOR)
    b = np.maximum(np.asarray(q_to, dtype=np.float64), ops.LOG_FLOOR)
    if a.shape != b.shape:
        raise SslError(f"distribution shapes differ: {a.shape} vs {b.shape}")
    rows = (np.asarray(q_from) * (np.log(a) - np.log(b))).sum(axis=-1)
    return float(np.mean(rows))


def consensus_loss(q_teacher, fx_teacher, q_student, fx_student, kind: str) -> float:
    """Reference (untaped) consensus value for one pair of outputs."""
    if kind == "mse":
        return float(np.mean((np.asarray(fx_teacher) - np.asarray(fx_student)) ** 2))
    if kind == "kld":
        return kl_divergence(q_teacher, q_student)
    if kind == "emd":
        return emd(q_teacher, q_student)
    raise SslError(f"unknown consensus kind {kind!r}")


def _taped_consensus(student: heads_mod.HeadOutput, q_teacher: np.ndarray,
                     fx_teacher: np.ndarray, ssl: SslConfig) -> Var:
    """Consensus over one batch as a taped scalar; teacher side constant."""
    if ssl.consensus == "mse":
        return ops.squared_error(student.fx, fx_teacher)
    if ssl.consensus == "kld":
        # KL(t||s) = CE(t, s) - H(t); the entropy term is constant
        ce = ops.cross_entropy_logits(student.z, q_teacher)
        qt = np.maximum(q_teacher, ops.LOG_FLOOR)
        entropy = float(-(q_teacher * np.log(qt)).sum() / q_teacher.shape[0])
        return ops.sub(ce, entropy)
    k = q_teacher.shape[-1]
    d = ops.sub(ops.cumsum(student.q), np.cumsum(q_teacher, axis=-1))
    if ssl.norm_order == 1:
        norms = ops.sum_rows(ops.absolute(d))
    else:
        norms = ops.sqrt(ops.sum_rows(ops.mul(d, d)))
    return ops.mul((1.0 / k) ** (1.0 / ssl.norm_order), ops.mean(norms))


def ssl_train(labeled: Corpus, unlabeled: Corpus, val: Corpus,
              config: TrainConfig, ssl: SslConfig,
              table: EmbeddingTable | None = None,
              base: TrainedModel | None = None,
              log_path=None) -> TrainedModel:
    """Alternate labeled joint-loss batches with beta-weighted consensus
    batches on unlabeled data.

    With beta = 0 this is definitionally supervised training, so it takes
    that exact code path (same seed, same random draws, same curve).
    """
    if len(unlabeled.sentences) == 0:
        raise TrainingError("unlabeled corpus is empty")
    if not config.head.distributional:
        raise TrainingError("semi-supervision needs a distributional head, "
                            f"got {config.head.kind!r}")
    if ssl.beta == 0.0:
        return train(labeled, val, config, table=table, log_path=log_path)

    labeled_sents = [s for s in labeled.sentences if s.label is not None]
    if not labeled_sents:
        raise TrainingError("labeled corpus has no labeled sentences")
    unlabeled_sents = list(unlabeled.sentences)

    rng = np.random.default_rng(config.seed)
    if table is None:
        toks = [t for s in labeled_sents for t in s.tokens]
        toks += [t for s in unlabeled_sents for t in s.tokens]
        table = enc_mod.build_random_table(toks, config.embed_dim, config.seed)
        trainable = True if config.train_embeddings is None else config.train_embeddings
    else:
        trainable = False if config.train_embeddings is None else config.train_embeddings

    feats_l = feats_u = None
    if config.context_window > 0:
        if base is None:
            raise TrainingError("context-aware semi-supervision needs a base model")
        feats_l = build_context_features(base, labeled, config.context_window)
        feats_u = build_context_features(base, unlabeled, config.context_window)

    from pledgespec.trainer import _init_model, _batch_loss  # shared internals

    extra = config.context_window * config.head.classes
    store = _init_model(config, table, rng, trainable, extra)
    model = TrainedModel(store, table, config,
                         metadata={"seed": config.seed, "curve": []}, base=base)
    opt = Adam(store, lr=config.lr)

    teacher_values = store.copy_values() if ssl.separate_student else None

    def teacher_forward(batch, ctx):
        if ssl.separate_student:
            current = store.copy_values()
            store.load_values(teacher_values)
            out = heads_mod.head_forward(model.encode_batch(batch, ctx),
                                         store, config.head)
            q = out.q.value.copy()
            fx = out.fx.value.copy()
            store.load_values(current)
            return q, fx
        out = heads_mod.head_forward(model.encode_batch(batch, ctx),
                                     store, config.head)
        return out.q.value.copy(), out.fx.value.copy()

    best_mmae = np.inf
    best_values = store.copy_values()
    best_epoch = 0
    stale = 0
    curve: list[dict] = []
    u_order = rng.permutation(len(unlabeled_sents))
    u_pos = 0

    def next_unlabeled_batch():
        nonlocal u_order, u_pos
        if u_pos + config.batch_size > len(u_order):
            u_order = rng.permutation(len(unlabeled_sents))
            u_pos = 0
        idx = u_order[u_pos:u_pos + config.batch_size]
        u_pos += config.batch_size
        return [unlabeled_sents[i] for i in idx]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(labeled_sents))
        losses, lu_losses = [], []
        for bi, lo in enumerate(range(0, len(labeled_sents), config.batch_size)):
            batch = [labeled_sents[i] for i in order[lo:lo + config.batch_size]]
            ctx = None
            if feats_l is not None:
                ctx = np.vstack([feats_l[s.id] for s in batch])
            with Tape() as tape:
                loss = _batch_loss(model, batch, ctx)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(epoch, bi, float(loss.value))
            store.zero_grad()
            tape.backward(loss)
            opt.step()
            losses.append(float(loss.value))

            for _ in range(ssl.interleave):
                ub = next_unlabeled_batch()
                uctx = None
                if feats_u is not None:
                    uctx = np.vstack([feats_u[s.id] for s in ub])
                q_t, fx_t = teacher_forward(ub, uctx)
                views = [student_view(s, None, ssl.word_dropout, rng) for s in ub]
                student_batch = [s.with_tokens(v[0]) for s, v in zip(ub, views)]
                sctx = np.zeros_like(uctx) if uctx is not None else None
                with Tape() as tape:
                    out = heads_mod.head_forward(
                        model.encode_batch(student_batch, sctx), store, config.head)
                    lu = ops.mul(ssl.beta, _taped_consensus(out, q_t, fx_t, ssl))
                if not np.isfinite(lu.value):
                    raise TrainingDiverged(epoch, bi, float(lu.value))
                store.zero_grad()
                tape.backward(lu)
                opt.step()
                lu_losses.append(float(lu.value) / ssl.beta)

        res = evaluate_model(model, val)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)),
               "val_mmae": res.mmae,
               "val_rho": res.rho if res.rho is not None else float("nan"),
               "lu_mean": float(np.mean(lu_losses))}
        curve.append(row)
        log.info("ssl epoch %d: loss %.4f, L_U %.4f, val mmae %.4f", epoch,
                 row["train_loss"], row["lu_mean"], row["val_mmae"])
        if res.mmae < best_mmae:
            best_mmae = res.mmae
            best_values = store.copy_values()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
        if ssl.separate_student:
            teacher_values = store.copy_values()

    store.load_values(best_values)
    model.metadata.update({"curve": curve, "best_epoch": best_epoch,
                           "best_val_mmae": best_mmae,
                           "embed_trainable": trainable,
                           "ssl": {"consensus": ssl.consensus, "beta": ssl.beta,
                                   "word_dropout": ssl.word_dropout,
                                   "interleave": ssl.interleave,
                                   "norm_order": ssl.norm_order,
                                   "separate_student": ssl.separate_student}})
    if log_path is not None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_mmae",
                                               "val_rho", "lu_mean"])
            w.writeheader()
            w.writerows(curve)
    return model
