"""Ordinal output heads.

A head maps a sentence encoding to a categorical distribution q over the
K specificity classes (plus the scalar expectation used as the prediction),
or to a raw scalar for the regression baselines.  The binomial and poisson
heads parametrize q through a pmf whose log-masses pass through a
temperature softmax with a per-input learned temperature; the gauss head is
a plain softmax trained against a truncated-Gaussian target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pledgespec.corpus import NUM_CLASSES
from pledgespec.diffcore import ParameterStore, Var
from pledgespec.diffcore import ops

HEAD_KINDS = (
    "binomial",
    "poisson",
    "gauss",
    "categorical",
    "regression_l2",
    "regression_l1",
    "classification",
)

DISTRIBUTION_KINDS = ("binomial", "poisson", "gauss", "categorical")


class HeadError(ValueError):
    """Invalid head configuration or argument."""


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "gauss"
    classes: int = NUM_CLASSES
    alpha: float = 0.5
    sigma: float = 1.0
    log_mass: bool = True
    centered_bins: bool = False

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise HeadError(f"unknown head kind {self.kind!r}")
        if self.classes < 2:
            raise HeadError(f"need at least 2 classes, got {self.classes}")
        if self.alpha < 0:
            raise HeadError(f"alpha must be non-negative, got {self.alpha}")
        if self.sigma <= 0:
            raise HeadError(f"sigma must be positive, got {self.sigma}")

    @property
    def distributional(self) -> bool:
        return self.kind in DISTRIBUTION_KINDS


@dataclass
class Prediction:
    value: float
    q: np.ndarray | None = None


@dataclass
class HeadOutput:
    """Taped head forward results for one batch."""

    kind: str
    z: Var | None      # pre-softmax logits (phi / tau), distribution heads
    q: Var | None      # softmax(z)
    fx: Var | None     # (B, 1) expectation, or raw output for regression


# ---------------------------------------------------------------- numpy side

def binomial_masses(p: float, classes: int = NUM_CLASSES) -> np.ndarray:
    """pmf of Binomial(classes - 1, p) over k = 0..classes-1."""
    if not 0.0 <= p <= 1.0:
        raise HeadError(f"binomial probability must lie in [0, 1], got {p}")
    n = classes - 1
    k = np.arange(classes)
    coeff = np.array([math.comb(n, int(i)) for i in k], dtype=np.float64)
    with np.errstate(invalid="ignore"):
        masses = coeff * np.power(p, k) * np.power(1.0 - p, n - k)
    return np.nan_to_num(masses, nan=0.0)


def poisson_masses(lam: float, classes: int = NUM_CLASSES) -> np.ndarray:
    """lambda^k e^-lambda / k! over the truncated support k = 0..classes-1.

    Deliberately unnormalized; the downstream softmax absorbs the tail.
    """
    if not math.isfinite(lam) or lam <= 0:
        raise HeadError(f"poisson rate must be finite and positive, got {lam}")
    k = np.arange(classes)
    log_mass = k * math.log(lam) - lam - ops.log_factorials(classes)
    return np.exp(log_mass)


def temperature_softmax(phi: np.ndarray, tau_raw: float) -> np.ndarray:
    """softmax(phi / tau) with tau = softplus(tau_raw)."""
    tau = math.log1p(math.exp(-abs(tau_raw))) + max(tau_raw, 0.0)
    z = np.asarray(phi, dtype=np.float64) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def gaussian_target(y: int, sigma: float = 1.0, classes: int = NUM_CLASSES,
                    centered_bins: bool = False) -> np.ndarray:
    """Truncated-Gaussian training target over classes 1..K for gold y.

    Class k covers the bin (k-1, k] by default (so an integer mean sits on a
    boundary and the two adjacent bins tie); ``centered_bins`` shifts to
    (k-1/2, k+1/2].  Masses are renormalized over the truncated support.
    """
    if not 1 <= y <= classes:
        raise HeadError(f"gold class {y} outside 1..{classes}")
    if sigma <= 0:
        raise HeadError(f"sigma must be positive, got {sigma}")
    shift = 0.5 if centered_bins else 0.0
    edges = np.arange(classes + 1) + shift          # bin edges 0..K (or +1/2)
    cdf = np.array([_phi((e - y) / sigma) for e in edges])
    masses = np.diff(cdf)
    total = cdf[-1] - cdf[0]
    if total <= 0:
        raise HeadError(f"degenerate truncated support for y={y}, sigma={sigma}")
    return masses / total


def gaussian_target_matrix(labels: np.ndarray, config: HeadConfig) -> np.ndarray:
    return np.vstack([
        gaussian_target(int(y), config.sigma, config.classes, config.centered_bins)
        for y in labels
    ])


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.min() < 1 or labels.max() > classes:
        raise HeadError(f"labels outside 1..{classes}")
    t = np.zeros((labels.size, classes))
    t[np.arange(labels.size), labels - 1] = 1.0
    return t


def expectation(q: np.ndarray, classes: int | None = None) -> float:
    """Sum_k q_k * k over class values 1..K."""
    q = np.asarray(q, dtype=np.float64)
    k = classes if classes is not None else q.shape[-1]
    if q.shape[-1] != k:
        raise HeadError(f"distribution length {q.shape[-1]} != {k}")
    return float(q @ np.arange(1, k + 1))


def joint_loss(q: np.ndarray | None, fx: float, y: int, config: HeadConfig) -> float:
    """Reference (untaped) loss for one sentence: alpha * L_S + L_D."""
    if config.kind == "regression_l2":
        return (fx - y) ** 2
    if config.kind == "regression_l1":
        return abs(fx - y)
    qc = np.maximum(np.asarray(q, dtype=np.float64), ops.LOG_FLOOR)
    if config.kind == "gauss":
        target = gaussian_target(y, config.sigma, config.classes, config.centered_bins)
    else:
        target = one_hot(np.array([y]), config.classes)[0]
    ce = float(-(target * np.log(qc)).sum())
    if config.kind == "classification":
        return ce
    return config.alpha * (fx - y) ** 2 + ce


# ---------------------------------------------------------------- taped side

def init_head_params(store: ParameterStore, rng: np.random.Generator,
                     input_dim: int, config: HeadConfig, prefix: str = "head") -> None:
    scale = 1.0 / np.sqrt(input_dim)
    k = config.classes
    if config.kind in ("binomial", "poisson"):
        store.add(f"{prefix}.w", rng.normal(0.0, scale, size=(input_dim, 1)))
        store.add(f"{prefix}.b", np.zeros(1))
        store.add(f"{prefix}.wt", rng.normal(0.0, scale, size=(input_dim, 1)))
        store.add(f"{prefix}.bt", np.zeros(1))
    elif config.kind in ("gauss", "categorical", "classification"):
        store.add(f"{prefix}.W", rng.normal(0.0, scale, size=(input_dim, k)))
        store.add(f"{prefix}.b", np.zeros(k))
    else:
        store.add(f"{prefix}.w", rng.normal(0.0, scale, size=(input_dim, 1)))
        store.add(f"{prefix}.b", np.zeros(1))


def _pmf_log_masses(enc: Var, store: ParameterStore, config: HeadConfig,
                    prefix: str) -> Var:
    """(B, K) log pmf masses for the binomial / poisson parametrizations."""
    k = config.classes
    s = ops.add(ops.matmul(enc, store[f"{prefix}.w"]), store[f"{prefix}.b"])
    k_row = np.arange(k, dtype=np.float64)[None, :]
    if config.kind == "binomial":
        p = ops.sigmoid(s)
        log_p = ops.log(p)
        log_1mp = ops.log(ops.sub(1.0, p))
        coeff = ops.log_binomial_coefficients(k - 1)[None, :]
        phi = ops.add(ops.add(Var(coeff), ops.mul(Var(k_row), log_p)),
                      ops.mul(Var(k - 1 - k_row), log_1mp))
    else:
        lam = ops.softplus(s)
        log_lam = ops.log(lam)
        log_fact = ops.log_factorials(k)[None, :]
        phi = ops.sub(ops.sub(ops.mul(Var(k_row), log_lam), lam), Var(log_fact))
    return phi


def head_forward(enc: Var, store: ParameterStore, config: HeadConfig,
                 prefix: str = "head") -> HeadOutput:
    """Run the head over a batch of encodings (B, D)."""
    values = np.arange(1, config.classes + 1, dtype=np.float64)[:, None]
    if config.kind in ("binomial", "poisson"):
        phi = _pmf_log_masses(enc, store, config, prefix)
        if not config.log_mass:
            phi = ops.exp(phi)
        tau_raw = ops.add(ops.matmul(enc, store[f"{prefix}.wt"]), store[f"{prefix}.bt"])
        tau = ops.softplus(tau_raw)
        z = ops.div(phi, tau)
        q = ops.softmax(z)
        fx = ops.matmul(q, Var(values))
        return HeadOutput(config.kind, z, q, fx)
    if config.kind in ("gauss", "categorical", "classification"):
        z = ops.add(ops.matmul(enc, store[f"{prefix}.W"]), store[f"{prefix}.b"])
        q = ops.softmax(z)
        fx = None if config.kind == "classification" else ops.matmul(q, Var(values))
        return HeadOutput(config.kind, z, q, fx)
    fx = ops.add(ops.matmul(enc, store[f"{prefix}.w"]), store[f"{prefix}.b"])
    return HeadOutput(config.kind, None, None, fx)


def head_loss(out: HeadOutput, labels: np.ndarray, config: HeadConfig) -> Var:
    """Mean joint loss over the batch, as a taped scalar."""
    labels = np.asarray(labels, dtype=np.float64)
    y_col = labels[:, None]
    if config.kind == "regression_l2":
        return ops.squared_error(out.fx, y_col)
    if config.kind == "regression_l1":
        return ops.mean(ops.absolute(ops.sub(out.fx, y_col)))
    if config.kind == "gauss":
        targets = gaussian_target_matrix(labels.astype(int), config)
    else:
        targets = one_hot(labels.astype(int), config.classes)
    l_d = ops.cross_entropy_logits(out.z, targets)
    if config.kind == "classification" or config.alpha == 0.0:
        return l_d
    l_s = ops.squared_error(out.fx, y_col)
    return ops.add(ops.mul(config.alpha, l_s), l_d)


def decode(out: HeadOutput, config: HeadConfig) -> list[Prediction]:
    """Turn a batch HeadOutput into per-sentence predictions."""
    preds: list[Prediction] = []
    if config.kind == "classification":
        q = out.q.value
        for row in q:
            preds.append(Prediction(float(np.argmax(row) + 1), row.copy()))
    elif config.distributional:
        q = out.q.value
        fx = out.fx.value[:, 0]
        for row, v in zip(q, fx):
            preds.append(Prediction(float(v), row.copy()))
    else:
        fx = np.clip(out.fx.value[:, 0], 1.0, float(config.classes))
        for v in fx:
            preds.append(Prediction(float(v), None))
    return preds
