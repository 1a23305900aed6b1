"""Bundled analysis fixtures.

Two synthetic Australian-style fixture families ship with the package:

* ideology: 5 parties over 8 elections, with gold positions computed from
  the realized relative specificity (SpecScale balance of right vs left
  themes) so the specificity-aware model variants have a recoverable
  signal while raw mention counts are only weakly informative.
* salience: the same parties over 24 elections; per-area salience scores
  are linear in a handful of specificity weights plus Gaussian noise, so
  weight features fit strictly better than count features.

``write_fixtures`` regenerates every CSV; a test pins the bundled files to
the generator output.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pledgespec.corpus import NUM_THEMES
from pledgespec.polanalysis import IdeologyMap, ManifestoProfile, PolError

PARTIES = ("labor", "liberal", "national", "greens", "democrats")
PARTY_BASE = {"labor": 0.25, "liberal": 0.75, "national": 0.82,
              "greens": 0.12, "democrats": 0.45}
IDEOLOGY_YEARS = tuple(range(1984, 2008, 3))          # 8 elections
SALIENNCE_YEARS = tuple(range(1946, 2016, 3))         # 24 elections

IDEOLOGY_MAP = {
    **{t: "social-left" for t in (11, 12, 13, 14)},
    **{t: "social-right" for t in (21, 22, 23, 24)},
    **{t: "economic-left" for t in (31, 32, 33, 34)},
    **{t: "economic-right" for t in (41, 42, 43, 44)},
}
NEUTRAL_THEMES = (1, 2, 3)

SALIENCE_AREAS = ("health", "education", "environment", "tax", "economy")
AREA_THEMES = {
    "health": (1, 2, 3, 4, 5, 6),
    "education": (7, 8, 9, 10, 11, 12),
    "environment": (13, 14, 15, 16, 17, 18),
    "tax": (19, 20, 21, 22, 23, 24),
    "economy": (25, 26, 27, 28, 29, 30),
}

COALITIONS = {("liberal", "national"): 7, ("labor", "greens"): 1}

IDEOLOGY_SEED = 20130907
SALIENCE_SEED = 19490210


def _manifesto_id(party: str, year: int) -> str:
    return f"{party}_{year}"


def generate_ideology_fixture(seed: int = IDEOLOGY_SEED) -> dict:
    """Profiles, gold positions, coalitions, and the theme map."""
    rng = np.random.default_rng(seed)
    imap = IdeologyMap(IDEOLOGY_MAP)
    right = sorted(imap.themes("social-right") | imap.themes("economic-right"))
    left = sorted(imap.themes("social-left") | imap.themes("economic-left"))

    profiles = []
    leanings = {}
    for year in IDEOLOGY_YEARS:
        for party in PARTIES:
            g = float(np.clip(PARTY_BASE[party] + rng.normal(0.0, 0.07),
                              0.02, 0.98))
            leanings[_manifesto_id(party, year)] = g
            counts, weights = {}, {}
            for t in right:
                w = 1.0 + 6.0 * float(np.clip(g + rng.normal(0.0, 0.05), 0, 1))
                weights[t] = round(w, 3)
                counts[t] = int(1 + rng.poisson(8) + rng.poisson(3.0 * g))
            for t in left:
                w = 1.0 + 6.0 * float(np.clip(1 - g + rng.normal(0.0, 0.05), 0, 1))
                weights[t] = round(w, 3)
                counts[t] = int(1 + rng.poisson(8) + rng.poisson(3.0 * (1 - g)))
            for t in NEUTRAL_THEMES:
                weights[t] = round(1.0 + 6.0 * float(rng.uniform()), 3)
                counts[t] = int(1 + rng.poisson(6))
            profiles.append(ManifestoProfile(
                _manifesto_id(party, year), party, year, counts, weights))

    # Gold is defined directly by the relative specificity balance: mean
    # same-election SpecScale over right themes minus left themes, min-max
    # rescaled. Counts never enter.
    from pledgespec.polanalysis import build_spec_scale
    scale = build_spec_scale(profiles)
    raw = {}
    for p in profiles:
        r = np.mean([scale[(p.manifesto_id, t)] for t in right])
        lf = np.mean([scale[(p.manifesto_id, t)] for t in left])
        raw[p.manifesto_id] = r - lf
    lo, hi = min(raw.values()), max(raw.values())
    gold = {m: round((v - lo) / (hi - lo), 6) for m, v in raw.items()}
    return {"profiles": profiles, "gold": gold, "coalitions": dict(COALITIONS),
            "ideology_map": dict(IDEOLOGY_MAP)}


def generate_salience_fixture(seed: int = SALIENCE_SEED) -> dict:
    """Profiles plus per-area salience linear in specificity weights."""
    rng = np.random.default_rng(seed)
    profiles = []
    for year in SALIENNCE_YEARS:
        for party in PARTIES:
            counts, weights = {}, {}
            for t in range(1, NUM_THEMES + 1):
                counts[t] = int(1 + rng.poisson(6))
                weights[t] = round(1.0 + 6.0 * float(rng.uniform()), 3)
            profiles.append(ManifestoProfile(
                _manifesto_id(party, year), party, year, counts, weights))

    coefs = {area: {t: float(rng.uniform(0.5, 1.5)) for t in AREA_THEMES[area]}
             for area in SALIENCE_AREAS}
    salience = {}
    for p in profiles:
        for area in SALIENCE_AREAS:
            signal = sum(c * p.theme_weights[t] / 7.0
                         for t, c in coefs[area].items())
            salience[(p.party, p.year, area)] = round(
                float(signal + rng.normal(0.0, 0.08)), 6)
    return {"profiles": profiles, "salience": salience}


# ------------------------------------------------------------------- CSV IO

def fixture_path(name: str) -> Path:
    path = importlib.resources.files("pledgespec") / "fixtures" / name
    with importlib.resources.as_file(path) as p:
        if not p.exists():
            raise PolError(f"no bundled fixture named {name!r}")
        return Path(p)


def write_profiles(profiles: list[ManifestoProfile], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["manifesto", "party", "year", "theme", "count", "weight"])
        for p in profiles:
            for t in sorted(p.theme_counts):
                w.writerow([p.manifesto_id, p.party, p.year, t,
                            p.theme_counts[t], p.theme_weights[t]])


def load_profiles(path: Path) -> list[ManifestoProfile]:
    rows: dict[str, dict] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            m = rows.setdefault(rec["manifesto"], {
                "party": rec["party"], "year": int(rec["year"]),
                "counts": {}, "weights": {}})
            t = int(rec["theme"])
            m["counts"][t] = int(rec["count"])
            m["weights"][t] = float(rec["weight"])
    return [ManifestoProfile(mid, m["party"], m["year"], m["counts"], m["weights"])
            for mid, m in rows.items()]


def write_gold(gold: dict[str, float], profiles: list[ManifestoProfile],
               path: Path) -> None:
    by_id = {p.manifesto_id: p for p in profiles}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["party", "year", "score"])
        for mid in sorted(gold):
            p = by_id[mid]
            w.writerow([p.party, p.year, gold[mid]])


def load_gold(path: Path) -> dict[str, float]:
    out = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out[_manifesto_id(rec["party"], int(rec["year"]))] = float(rec["score"])
    return out


def write_coalitions(coalitions: dict[tuple[str, str], int], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["party_a", "party_b", "count"])
        for (a, b), n in sorted(coalitions.items()):
            w.writerow([a, b, n])


def load_coalitions(path: Path) -> dict[tuple[str, str], int]:
    out = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out[(rec["party_a"], rec["party_b"])] = int(rec["count"])
    return out


def write_ideology_map(mapping: dict[int, str], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theme", "category"])
        for t in sorted(mapping):
            w.writerow([t, mapping[t]])


def load_ideology_map(path: Path) -> IdeologyMap:
    mapping = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            mapping[int(rec["theme"])] = rec["category"]
    return IdeologyMap(mapping)


def write_salience(salience: dict[tuple[str, int, str], float], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["party", "year", "area", "score"])
        for (party, year, area) in sorted(salience):
            w.writerow([party, year, area, salience[(party, year, area)]])


def load_salience(path: Path) -> dict[tuple[str, int, str], float]:
    out = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out[(rec["party"], int(rec["year"]), rec["area"])] = float(rec["score"])
    return out


def feature_matrices(profiles: list[ManifestoProfile]
                     ) -> tuple[list[str], np.ndarray, np.ndarray]:
    """(manifesto ids, counts matrix, weights matrix), both n x 57 with
    absent themes encoded as 0."""
    ids = [p.manifesto_id for p in profiles]
    counts = np.zeros((len(profiles), NUM_THEMES))
    weights = np.zeros((len(profiles), NUM_THEMES))
    for i, p in enumerate(profiles):
        for t, c in p.theme_counts.items():
            counts[i, t - 1] = c
        for t, w in p.theme_weights.items():
            weights[i, t - 1] = w
    return ids, counts, weights


DEMO_PROGRAM = """\
# two pressures on a single stance
predicate Evidence 1 observed
predicate Doubt 1 observed
predicate stance 1 target

obs Evidence(report) 0.9
obs Doubt(report) 0.4
target stance(report) 0.5

rule 1.0 2 : Evidence(X) -> stance(X)
rule 1.0 2 : Doubt(X) -> !stance(X)
"""


def write_fixtures(outdir: Path) -> list[Path]:
    """Regenerate every bundled fixture file under ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ideo = generate_ideology_fixture()
    sal = generate_salience_fixture()
    written = []

    def emit(name: str, writer, *args):
        path = outdir / name
        writer(*args, path)
        written.append(path)

    emit("profiles.csv", write_profiles, ideo["profiles"])
    emit("gold_positions.csv", write_gold, ideo["gold"], ideo["profiles"])
    emit("coalitions.csv", write_coalitions, ideo["coalitions"])
    emit("ideology_map.csv", write_ideology_map, ideo["ideology_map"])
    emit("salience_profiles.csv", write_profiles, sal["profiles"])
    emit("salience.csv", write_salience, sal["salience"])
    demo = outdir / "demo.psl"
    demo.write_text(DEMO_PROGRAM)
    written.append(demo)
    return written
