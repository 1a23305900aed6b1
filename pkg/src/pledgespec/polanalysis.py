"""Downstream political analysis.

Turns per-sentence specificity into manifesto-level profiles (per-theme
counts and specificity weights), bootstraps left-right positions with the
RILE convention, compiles the profile data into a soft-logic program with
specificity, overall-position, global-signal, and relative-specificity
rules, and runs MAP inference to produce recalibrated positions.  Also
holds the PCA position baseline and the salience regressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pledgespec.corpus import NUM_CLASSES, NUM_THEMES, Corpus
from pledgespec import pslgrid

CATEGORIES = ("social-left", "social-right", "economic-left", "economic-right")


class PolError(ValueError):
    """Invalid analysis input."""


@dataclass
class ManifestoProfile:
    manifesto_id: str
    party: str
    year: int
    theme_counts: dict[int, int] = field(default_factory=dict)
    theme_weights: dict[int, float] = field(default_factory=dict)
    socpos: float = 0.5
    econpos: float = 0.5
    pos: float = 0.5

    def __post_init__(self):
        for t in set(self.theme_counts) | set(self.theme_weights):
            if not 1 <= t <= NUM_THEMES:
                raise PolError(f"theme {t} outside 1..{NUM_THEMES}")
        for t, w in self.theme_weights.items():
            if not 1.0 <= w <= float(NUM_CLASSES):
                raise PolError(f"theme {t} weight {w} outside [1, {NUM_CLASSES}]")


class IdeologyMap:
    """theme -> one of the four left/right categories; "none" entries (and
    themes absent from the map) carry no ideological signal."""

    def __init__(self, mapping: dict[int, str]):
        self.mapping = {}
        for t, cat in mapping.items():
            if not 1 <= t <= NUM_THEMES:
                raise PolError(f"theme {t} outside 1..{NUM_THEMES}")
            if cat == "none":
                continue
            if cat not in CATEGORIES:
                raise PolError(f"unknown category {cat!r} for theme {t}")
            self.mapping[t] = cat

    def themes(self, category: str) -> set[int]:
        return {t for t, c in self.mapping.items() if c == category}


def specificity_weight(scores) -> float:
    """Mean specificity over one theme's sentences (raw 1..7 scale)."""
    scores = list(scores)
    if not scores:
        raise PolError("specificity weight needs at least one sentence")
    return float(np.mean(scores))


def normalized_weight(weight: float) -> float:
    return weight / NUM_CLASSES


def spec_scale(weight: float, max_weight: float) -> float:
    if max_weight <= 0:
        raise PolError(f"max weight must be positive, got {max_weight}")
    return weight / max_weight


def coalition_strength(n) -> float:
    if n < 0:
        raise PolError(f"coalition count must be >= 0, got {n}")
    return 1.0 / (1.0 + math.exp(-float(n)))


def _signed_position(right: float, left: float) -> float:
    if right + left == 0:
        return 0.5
    score = (right - left) / (right + left)
    return (score + 1.0) / 2.0


def rile_bootstrap(profile: ManifestoProfile, imap: IdeologyMap,
                   denominator: str = "rl") -> tuple[float, float, float]:
    """(socpos, econpos, pos) from theme mention counts in [0,1].

    ``denominator`` picks the normalizer for (R - L): "rl" divides by R + L,
    "total" by the manifesto's full sentence count.
    """
    if denominator not in ("rl", "total"):
        raise PolError(f"unknown denominator {denominator!r}")

    def count(themes: set[int]) -> float:
        return float(sum(profile.theme_counts.get(t, 0) for t in themes))

    total = float(sum(profile.theme_counts.values()))

    def position(r: float, lf: float) -> float:
        denom = r + lf if denominator == "rl" else total
        if denom == 0:
            return 0.5
        return ((r - lf) / denom + 1.0) / 2.0

    soc_r, soc_l = count(imap.themes("social-right")), count(imap.themes("social-left"))
    eco_r, eco_l = count(imap.themes("economic-right")), count(imap.themes("economic-left"))
    return (position(soc_r, soc_l), position(eco_r, eco_l),
            position(soc_r + eco_r, soc_l + eco_l))


def apply_bootstrap(profiles: list[ManifestoProfile], imap: IdeologyMap,
                    denominator: str = "rl") -> None:
    for p in profiles:
        p.socpos, p.econpos, p.pos = rile_bootstrap(p, imap, denominator)


def build_profiles(corpus: Corpus, scores: dict[str, float] | None = None
                   ) -> list[ManifestoProfile]:
    """One profile per document; sentence specificity from ``scores``
    (model predictions keyed by sentence id) or gold labels when None."""
    profiles = []
    for doc_id, sents in corpus.documents.items():
        by_theme: dict[int, list[float]] = {}
        for s in sents:
            if s.policy_theme is None:
                continue
            if scores is not None:
                if s.id not in scores:
                    raise PolError(f"no specificity score for sentence {s.id!r}")
                value = scores[s.id]
            else:
                if s.label is None:
                    continue
                value = float(s.label)
            by_theme.setdefault(s.policy_theme, []).append(value)
        profiles.append(ManifestoProfile(
            manifesto_id=doc_id,
            party=sents[0].party,
            year=sents[0].year,
            theme_counts={t: len(v) for t, v in by_theme.items()},
            theme_weights={t: min(max(specificity_weight(v), 1.0), float(NUM_CLASSES))
                           for t, v in by_theme.items()},
        ))
    return profiles


def build_spec_scale(profiles: list[ManifestoProfile]
                     ) -> dict[tuple[str, int], float]:
    """Per (manifesto, theme) ratio to the same-election maximum weight."""
    max_w: dict[tuple[int, int], float] = {}
    for p in profiles:
        for t, w in p.theme_weights.items():
            key = (p.year, t)
            max_w[key] = max(max_w.get(key, 0.0), w)
    out = {}
    for p in profiles:
        for t, w in p.theme_weights.items():
            out[(p.manifesto_id, t)] = spec_scale(w, max_w[(p.year, t)])
    return out


# --------------------------------------------------------------- PSL program

MODELS = ("I", "II", "III", "IV")


@dataclass(frozen=True)
class PslConfig:
    weight_spec: float = 1.0
    weight_overall: float = 1.0
    weight_global: float = 1.0
    weight_scale: float = 1.0
    weight_prior: float = 1.0
    exponent: int = 1
    two_sided_overall: bool = True

    def __post_init__(self):
        if self.exponent not in (1, 2):
            raise PolError(f"exponent must be 1 or 2, got {self.exponent}")


def previous_links(profiles: list[ManifestoProfile]) -> list[tuple[str, str]]:
    """(current, previous) manifesto pairs for consecutive same-party runs."""
    by_party: dict[str, list[ManifestoProfile]] = {}
    for p in profiles:
        by_party.setdefault(p.party, []).append(p)
    links = []
    for plist in by_party.values():
        plist = sorted(plist, key=lambda p: p.year)
        for prev, cur in zip(plist, plist[1:]):
            links.append((cur.manifesto_id, prev.manifesto_id))
    return links


def build_psl_program(profiles: list[ManifestoProfile], imap: IdeologyMap,
                      coalitions: dict[tuple[str, str], int] | None = None,
                      prev_links: list[tuple[str, str]] | None = None,
                      config: PslConfig = PslConfig(),
                      models: tuple[str, ...] = MODELS) -> str:
    """Emit the soft-logic program for the requested model subset.

    Left-category rules imply the negated position head; bootstrapped
    positions always enter as paired prior rules so every target stays
    anchored.
    """
    for m in models:
        if m not in MODELS:
            raise PolError(f"unknown model {m!r}")
    if not profiles:
        raise PolError("need at least one profile")
    coalitions = coalitions or {}
    if prev_links is None:
        prev_links = previous_links(profiles)
    scale = build_spec_scale(profiles)
    cat_pred = {"social-left": "SocLeft", "social-right": "SocRight",
                "economic-left": "EconLeft", "economic-right": "EconRight"}

    lines = ["# generated ideology program"]
    for name, arity, role in (
            ("Specw", 2, "observed"), ("SpecScale", 2, "observed"),
            ("SocLeft", 1, "observed"), ("SocRight", 1, "observed"),
            ("EconLeft", 1, "observed"), ("EconRight", 1, "observed"),
            ("PartyOf", 2, "observed"), ("SameElection", 2, "observed"),
            ("Coalition", 2, "observed"), ("PreviousManifesto", 2, "observed"),
            ("BootSoc", 1, "observed"), ("BootEcon", 1, "observed"),
            ("BootPos", 1, "observed"),
            ("socpos", 1, "target"), ("econpos", 1, "target"),
            ("pos", 1, "target")):
        lines.append(f"predicate {name} {arity} {role}")

    def theme_const(t: int) -> str:
        return f"t{t:02d}"

    for t in sorted(imap.mapping):
        lines.append(f"obs {cat_pred[imap.mapping[t]]}({theme_const(t)}) 1.0")
    for p in profiles:
        for t in sorted(p.theme_weights):
            w = normalized_weight(p.theme_weights[t])
            lines.append(f"obs Specw({p.manifesto_id}, {theme_const(t)}) {w:.6f}")
            r = scale[(p.manifesto_id, t)]
            lines.append(f"obs SpecScale({p.manifesto_id}, {theme_const(t)}) {r:.6f}")
        lines.append(f"obs PartyOf({p.manifesto_id}, {p.party}) 1.0")
        lines.append(f"obs BootSoc({p.manifesto_id}) {p.socpos:.6f}")
        lines.append(f"obs BootEcon({p.manifesto_id}) {p.econpos:.6f}")
        lines.append(f"obs BootPos({p.manifesto_id}) {p.pos:.6f}")
        lines.append(f"target socpos({p.manifesto_id}) {p.socpos:.6f}")
        lines.append(f"target econpos({p.manifesto_id}) {p.econpos:.6f}")
        lines.append(f"target pos({p.manifesto_id}) {p.pos:.6f}")
    for a in profiles:
        for b in profiles:
            if a.manifesto_id != b.manifesto_id and a.year == b.year:
                lines.append(f"obs SameElection({a.manifesto_id}, {b.manifesto_id}) 1.0")
    for (pa, pb), n in sorted(coalitions.items()):
        v = coalition_strength(n)
        lines.append(f"obs Coalition({pa}, {pb}) {v:.6f}")
        lines.append(f"obs Coalition({pb}, {pa}) {v:.6f}")
    for cur, prev in prev_links:
        lines.append(f"obs PreviousManifesto({cur}, {prev}) 1.0")

    e = config.exponent
    wp = config.weight_prior
    for pred, target in (("BootSoc", "socpos"), ("BootEcon", "econpos"),
                         ("BootPos", "pos")):
        lines.append(f"rule {wp} {e} : {pred}(M) -> {target}(M)")
        lines.append(f"rule {wp} {e} : {target}(M) -> {pred}(M)")
    if "I" in models:
        w = config.weight_spec
        lines.append(f"rule {w} {e} : Specw(M, T) & SocRight(T) -> socpos(M)")
        lines.append(f"rule {w} {e} : Specw(M, T) & SocLeft(T) -> !socpos(M)")
        lines.append(f"rule {w} {e} : Specw(M, T) & EconRight(T) -> econpos(M)")
        lines.append(f"rule {w} {e} : Specw(M, T) & EconLeft(T) -> !econpos(M)")
    if "II" in models:
        w = config.weight_overall
        lines.append(f"rule {w} {e} : socpos(M) -> pos(M)")
        lines.append(f"rule {w} {e} : econpos(M) -> pos(M)")
        if config.two_sided_overall:
            lines.append(f"rule {w} {e} : !socpos(M) -> !pos(M)")
            lines.append(f"rule {w} {e} : !econpos(M) -> !pos(M)")
    if "III" in models:
        w = config.weight_global
        lines.append(f"rule {w} {e} : Coalition(A, B) & PartyOf(X, A) & "
                     f"PartyOf(Y, B) & SameElection(X, Y) & pos(X) -> pos(Y)")
        lines.append(f"rule {w} {e} : PreviousManifesto(X, T) & pos(T) -> pos(X)")
    if "IV" in models:
        w = config.weight_scale
        lines.append(f"rule {w} {e} : SpecScale(M, T) & SocRight(T) -> socpos(M)")
        lines.append(f"rule {w} {e} : SpecScale(M, T) & SocLeft(T) -> !socpos(M)")
        lines.append(f"rule {w} {e} : SpecScale(M, T) & EconRight(T) -> econpos(M)")
        lines.append(f"rule {w} {e} : SpecScale(M, T) & EconLeft(T) -> !econpos(M)")
    return "\n".join(lines) + "\n"


VARIANTS = {
    "bootstrapped": (),
    "I+II": ("I", "II"),
    "I+II+III": ("I", "II", "III"),
    "I+II+III+IV": ("I", "II", "III", "IV"),
}


def run_ideology(profiles: list[ManifestoProfile], imap: IdeologyMap,
                 coalitions: dict[tuple[str, str], int] | None = None,
                 config: PslConfig = PslConfig(),
                 variants: dict[str, tuple[str, ...]] = VARIANTS,
                 ) -> dict[str, dict[str, float]]:
    """Positions per model variant; bootstrap-only rows come straight from
    the profiles."""
    apply_bootstrap(profiles, imap)
    out: dict[str, dict[str, float]] = {}
    for name, models in variants.items():
        if not models:
            out[name] = {p.manifesto_id: p.pos for p in profiles}
            continue
        text = build_psl_program(profiles, imap, coalitions, None, config, models)
        program = pslgrid.parse_program(text)
        instance = pslgrid.ground(program)
        result = pslgrid.map_infer(instance)
        positions = {}
        for p in profiles:
            key = f"pos({p.manifesto_id})"
            positions[p.manifesto_id] = result.assignment.get(key, p.pos)
        out[name] = positions
    return out


# ------------------------------------------------------------ PCA / salience

def pca_position(counts: np.ndarray, rile: np.ndarray | None = None,
                 tol: float = 1e-9, max_iters: int = 10000) -> np.ndarray:
    """Projection on the leading principal component, rescaled to [0,1].

    The component is found by power iteration; the sign is flipped, when
    ``rile`` scores are given, so the projection correlates non-negatively
    with them.
    """
    x = np.asarray(counts, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise PolError(f"need a 2-D matrix with >= 2 rows, got shape {x.shape}")
    xc = x - x.mean(axis=0, keepdims=True)
    if not np.any(xc):
        raise PolError("count matrix has zero variance")
    cov = xc.T @ xc / (x.shape[0] - 1)
    rng = np.random.default_rng(0)
    v = rng.normal(size=x.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(max_iters):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            raise PolError("power iteration collapsed; matrix has zero variance")
        w /= norm
        if w @ v < 0:
            w = -w
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    proj = xc @ v
    if rile is not None:
        r = np.asarray(rile, dtype=np.float64)
        if r.shape[0] != proj.shape[0]:
            raise PolError("rile scores length mismatch")
        if np.corrcoef(proj, r)[0, 1] < 0:
            proj = -proj
    lo, hi = proj.min(), proj.max()
    if hi == lo:
        raise PolError("projection is constant; cannot rescale")
    return (proj - lo) / (hi - lo)


def power_iteration_eigenvalue(counts: np.ndarray, tol: float = 1e-9) -> float:
    """Leading covariance eigenvalue (exposed for the 2x2 oracle check)."""
    x = np.asarray(counts, dtype=np.float64)
    xc = x - x.mean(axis=0, keepdims=True)
    cov = xc.T @ xc / (x.shape[0] - 1)
    rng = np.random.default_rng(0)
    v = rng.normal(size=x.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(10000):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        w /= norm
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return float(v @ cov @ v)


@dataclass
class RegressionFit:
    coef: np.ndarray      # intercept first
    rss: float
    log_likelihood: float


def salience_regression(x: np.ndarray, y: np.ndarray,
                        ridge: float = 0.0) -> RegressionFit:
    """Least squares with intercept (minimum-norm via pseudo-inverse) and
    the plug-in Gaussian log-likelihood."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise PolError(f"feature matrix {x.shape} incompatible with y {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise PolError("need at least 2 observations")
    if np.ptp(y) == 0:
        import logging
        logging.getLogger(__name__).warning(
            "salience target has zero variance; fit will be degenerate")
    x1 = np.hstack([np.ones((n, 1)), x])
    if ridge > 0.0:
        penalty = ridge * np.eye(x1.shape[1])
        penalty[0, 0] = 0.0     # intercept unpenalized
        coef = np.linalg.solve(x1.T @ x1 + penalty, x1.T @ y)
    else:
        coef = np.linalg.pinv(x1) @ y
    resid = y - x1 @ coef
    rss = float(resid @ resid)
    sigma2 = max(rss / n, 1e-9)
    ll = -(n / 2.0) * (math.log(2.0 * math.pi * sigma2) + 1.0)
    return RegressionFit(coef, rss, ll)
