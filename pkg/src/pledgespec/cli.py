"""Command-line front end.

One subcommand per pipeline stage: corpus handling (ingest, synth),
training (train, ssl-train), scoring (eval, predict), inference and
analysis (psl-infer, ideology, salience), and the labeled-ratio report.
Artifacts land in --out together with a manifest.json recording the full
configuration, so a rerun with an equal manifest reproduces equal files.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from pledgespec import corpus as corpus_mod
from pledgespec import crossview, fixtures, metrics, pslgrid, reporting
from pledgespec import polanalysis as pol
from pledgespec import trainer as trainer_mod
from pledgespec.corpus import Corpus, CorpusError
from pledgespec.diffcore import ContainerError, ShapeError
from pledgespec.encoder import EmbeddingError, EmbeddingTable, load_embeddings
from pledgespec.heads import HeadConfig, HeadError
from pledgespec.trainer import (TrainConfig, TrainingDiverged, TrainingError,
                                evaluate_model, load_model, save_model, train,
                                train_with_context)

log = logging.getLogger("pledgespec")

HEAD_NAMES = {
    "binomial": "binomial", "poisson": "poisson", "gauss": "gauss",
    "categorical": "categorical", "reg": "regression_l2",
    "reg-l1": "regression_l1", "class": "classification",
}

_USER_ERRORS = (CorpusError, pol.PolError, pslgrid.PslError, HeadError,
                crossview.SslError, TrainingError, TrainingDiverged,
                EmbeddingError, metrics.MetricError, ContainerError,
                FileNotFoundError, NotADirectoryError, IsADirectoryError,
                PermissionError)


class _Parser(argparse.ArgumentParser):
    # usage problems are user errors: exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(message)


class SystemExit2(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, command: str) -> dict:
    skip = {"func", "out"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _train_config(args) -> TrainConfig:
    head = HeadConfig(kind=HEAD_NAMES[args.head], alpha=args.alpha,
                      sigma=args.sigma)
    return TrainConfig(
        head=head, epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, patience=args.patience, context_window=args.context,
        seed=args.seed, hidden=args.hidden, embed_dim=args.embed_dim,
        encoder_kind=args.encoder)


def _load_table(args) -> EmbeddingTable | None:
    if args.embeddings is None:
        return None
    return load_embeddings(args.embeddings)


def _split_corpus(corpus: Corpus, args) -> tuple[Corpus, Corpus]:
    return corpus_mod.split(corpus, 1.0 - args.val_fraction, args.seed,
                            by_document=args.split == "document")


def _write_eval(res, name: str, out: Path) -> None:
    rows = [["count", res.count], ["mmae", res.mmae],
            ["spearman", res.rho if res.rho is not None else ""]]
    rows += [[f"mae_class_{k}", v] for k, v in sorted(res.per_class.items())]
    reporting.write_csv(out / name, ["metric", "value"], rows)


# ------------------------------------------------------------- corpus stages

def cmd_ingest(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    out = _out_dir(args)
    hist = corpus_mod.class_histogram(corpus)["counts"]
    reporting.write_csv(out / "stats.csv", ["stat", "value"], [
        ["sentences", len(corpus)],
        ["documents", len(corpus.documents)],
        ["labeled", sum(hist.values())],
        ["parties", len({s.party for s in corpus.sentences})],
        ["themes", len({s.policy_theme for s in corpus.sentences
                        if s.policy_theme is not None})],
    ])
    reporting.write_csv(out / "histogram.csv", ["label", "count"],
                        [[k, hist[k]] for k in sorted(hist)])
    reporting.plot_histogram(hist, out / "histogram.svg")
    reporting.write_manifest(out, "ingest", _manifest(args, "ingest"))
    print(f"ingested {len(corpus)} sentences "
          f"({sum(hist.values())} labeled, {len(corpus.documents)} documents)")
    return 0


def cmd_synth(args) -> int:
    corpus = corpus_mod.synth_corpus(
        seed=args.seed, n=args.size, label_autocorr=args.autocorr,
        doc_length=args.doc_length, signal_rate=args.signal_rate,
        theme_count=args.themes)
    out = _out_dir(args)
    corpus_mod.write_corpus(corpus, out / "corpus.jsonl")
    hist = corpus_mod.class_histogram(corpus)["counts"]
    reporting.write_csv(out / "histogram.csv", ["label", "count"],
                        [[k, hist[k]] for k in sorted(hist)])
    reporting.plot_histogram(hist, out / "histogram.svg")
    reporting.write_manifest(out, "synth", _manifest(args, "synth"))
    print(f"wrote {len(corpus)} synthetic sentences to {out / 'corpus.jsonl'}")
    return 0


# ----------------------------------------------------------- training stages

def _finish_training(model, val, out: Path) -> None:
    save_model(model, out / "model.pstc")
    curve = model.metadata.get("curve", [])
    if curve:
        reporting.plot_training_curve(
            [r["epoch"] for r in curve],
            [r["train_loss"] for r in curve],
            [r["val_mmae"] for r in curve], out / "curve.svg")
    res = evaluate_model(model, val)
    _write_eval(res, "metrics.csv", out)
    print(f"val MMAE {res.mmae:.4f}"
          + (f", rho {res.rho:.4f}" if res.rho is not None else ""))


def cmd_train(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    tr, val = _split_corpus(corpus, args)
    out = _out_dir(args)
    config = _train_config(args)
    table = _load_table(args)
    if config.context_window > 0:
        base_cfg = dataclasses.replace(config, context_window=0)
        base = train(tr, val, base_cfg, table=table)
        model = train_with_context(tr, val, base, config,
                                   log_path=out / "curve.csv")
    else:
        model = train(tr, val, config, table=table,
                      log_path=out / "curve.csv")
    _finish_training(model, val, out)
    reporting.write_manifest(out, "train", _manifest(args, "train"))
    return 0


def cmd_ssl_train(args) -> int:
    labeled = corpus_mod.load_corpus(args.corpus)
    unlabeled = corpus_mod.strip_labels(corpus_mod.load_corpus(args.unlabeled))
    tr, val = _split_corpus(labeled, args)
    out = _out_dir(args)
    config = _train_config(args)
    ssl = crossview.SslConfig(consensus=args.ssl, beta=args.beta,
                              word_dropout=args.dropout,
                              interleave=args.interleave,
                              separate_student=args.separate_student)
    model = crossview.ssl_train(tr, unlabeled, val, config, ssl,
                                table=_load_table(args),
                                log_path=out / "curve.csv")
    _finish_training(model, val, out)
    reporting.write_manifest(out, "ssl-train", _manifest(args, "ssl-train"))
    return 0


# ------------------------------------------------------------ scoring stages

def cmd_eval(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    model = load_model(args.model)
    out = _out_dir(args)
    res = evaluate_model(model, corpus)
    _write_eval(res, "metrics.csv", out)

    golds = np.array([s.label for s in corpus.sentences if s.label is not None])
    rows = [["model", res.mmae, res.rho if res.rho is not None else ""]]
    majority = metrics.majority_baseline(corpus)
    rows.append(["majority", metrics.mmae(np.full(golds.shape, majority), golds), ""])
    lengths = metrics.length_baseline(corpus)
    lab_idx = [i for i, s in enumerate(corpus.sentences) if s.label is not None]
    # raw lengths rank sentences but are not class predictions: rho only
    rows.append(["length", "", metrics.spearman(lengths[lab_idx], golds)])
    reporting.write_csv(out / "baselines.csv", ["system", "mmae", "spearman"], rows)
    reporting.write_manifest(out, "eval", _manifest(args, "eval"))
    print(f"MMAE {res.mmae:.4f} over {res.count} labeled sentences "
          f"(majority baseline {rows[1][1]:.4f})")
    return 0


def cmd_predict(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    model = load_model(args.model)
    out = _out_dir(args)
    preds = model.predict_corpus(corpus)
    k = model.config.head.classes
    header = ["id", "doc_id", "party", "year", "theme", "label", "value"]
    header += [f"q{i}" for i in range(1, k + 1)]
    rows = []
    for s in corpus.sentences:
        p = preds[s.id]
        row = [s.id, s.doc_id, s.party, s.year,
               s.policy_theme if s.policy_theme is not None else "",
               s.label if s.label is not None else "", float(p.value)]
        row += [float(v) for v in p.q] if p.q is not None else [""] * k
        rows.append(row)
    reporting.write_csv(out / "predictions.csv", header, rows)
    reporting.write_manifest(out, "predict", _manifest(args, "predict"))
    print(f"wrote {len(rows)} predictions to {out / 'predictions.csv'}")
    return 0


# ----------------------------------------------------------- analysis stages

def cmd_psl_infer(args) -> int:
    program = pslgrid.load_program(args.program)
    instance = pslgrid.ground(program)
    result = pslgrid.map_infer(instance, tol=args.tol, max_iters=args.max_iters)
    out = _out_dir(args)
    rows = []
    for (pred, consts), initial in sorted(program.targets.items()):
        name = f"{pred}({','.join(consts)})"
        # targets pruned out of every ground rule keep their initial value
        rows.append([name, result.assignment.get(name, initial)])
    reporting.write_csv(out / "assignment.csv", ["variable", "value"], rows)
    reporting.write_csv(out / "summary.csv", ["stat", "value"], [
        ["energy", result.energy],
        ["converged", int(result.converged)],
        ["iterations", result.iterations],
        ["variables", len(instance.variables)],
        ["ground_rules", len(instance.rules)],
    ])
    reporting.write_manifest(out, "psl-infer", _manifest(args, "psl-infer"))
    print(f"energy {result.energy:.6f} over {len(instance.variables)} variables "
          f"({'converged' if result.converged else 'iteration cap'})")
    return 0


def _fixture_dir(args) -> Path:
    if args.fixtures is not None:
        return Path(args.fixtures)
    return fixtures.fixture_path("profiles.csv").parent


def cmd_ideology(args) -> int:
    fdir = _fixture_dir(args)
    profiles = fixtures.load_profiles(fdir / "profiles.csv")
    imap = fixtures.load_ideology_map(fdir / "ideology_map.csv")
    coalitions = fixtures.load_coalitions(fdir / "coalitions.csv")
    gold = fixtures.load_gold(fdir / "gold_positions.csv")
    config = pol.PslConfig(exponent=args.exponent,
                           weight_prior=args.prior_weight)
    out = _out_dir(args)

    variants = pol.run_ideology(profiles, imap, coalitions, config)
    by_id = {p.manifesto_id: p for p in profiles}
    rows = []
    for name in sorted(variants):
        for mid in sorted(variants[name]):
            p = by_id[mid]
            rows.append([name, mid, p.party, p.year, variants[name][mid]])
    reporting.write_csv(out / "positions.csv",
                        ["variant", "manifesto", "party", "year", "position"],
                        rows)

    ids = [p.manifesto_id for p in profiles]
    g = [gold[m] for m in ids]
    corr_rows = []
    for name in sorted(variants):
        rho = metrics.spearman([variants[name][m] for m in ids], g)
        corr_rows.append([name, rho])
    _, counts, _ = fixtures.feature_matrices(profiles)
    rile = np.array([variants["bootstrapped"][m] for m in ids])
    pca = pol.pca_position(counts, rile=rile)
    corr_rows.append(["pca", metrics.spearman(list(pca), g)])
    reporting.write_csv(out / "correlations.csv", ["variant", "spearman"],
                        corr_rows)
    reporting.plot_positions(variants, gold, out / "positions.svg")
    reporting.write_manifest(out, "ideology", _manifest(args, "ideology"))
    for name, rho in corr_rows:
        print(f"{name:14s} rho {rho:.4f}")
    return 0


def cmd_salience(args) -> int:
    fdir = _fixture_dir(args)
    profiles = fixtures.load_profiles(fdir / "salience_profiles.csv")
    salience = fixtures.load_salience(fdir / "salience.csv")
    areas = sorted({a for (_, _, a) in salience})
    out = _out_dir(args)
    _, counts, weights = fixtures.feature_matrices(profiles)
    rows, ll_s, ll_c = [], [], []
    for area in areas:
        y = np.array([salience[(p.party, p.year, area)] for p in profiles])
        fs = pol.salience_regression(weights, y, ridge=args.ridge)
        fc = pol.salience_regression(counts, y, ridge=args.ridge)
        rows.append([area, fs.log_likelihood, fc.log_likelihood,
                     fs.rss, fc.rss])
        ll_s.append(fs.log_likelihood)
        ll_c.append(fc.log_likelihood)
    reporting.write_csv(out / "salience_ll.csv",
                        ["area", "ll_spec", "ll_count", "rss_spec", "rss_count"],
                        rows)
    reporting.plot_salience(areas, ll_s, ll_c, out / "salience.svg")
    reporting.write_manifest(out, "salience", _manifest(args, "salience"))
    for area, ls, lc, *_ in rows:
        print(f"{area:12s} LL(S) {ls:9.3f}  LL(C) {lc:9.3f}")
    return 0


def cmd_report(args) -> int:
    ratios = [float(r) for r in args.ratios.split(",")]
    if not ratios or any(not 0 < r <= 100 for r in ratios):
        raise TrainingError(f"ratios must lie in (0, 100], got {args.ratios!r}")
    corpus = corpus_mod.synth_corpus(seed=args.seed, n=args.size,
                                     label_autocorr=0.3)
    tr_all, test = corpus_mod.split(corpus, 0.8, args.seed, by_document=True)
    out = _out_dir(args)
    # ratio curves are a supervised experiment; context staging is off
    config = dataclasses.replace(_train_config(args), context_window=0)

    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(tr_all.sentences))
    rows = []
    for ratio in ratios:
        n = max(int(round(len(order) * ratio / 100.0)), 20)
        subset = Corpus(tuple(tr_all.sentences[i] for i in sorted(order[:n])))
        tr, val = corpus_mod.split(subset, 1.0 - args.val_fraction, args.seed)
        model = train(tr, val, config)
        res = evaluate_model(model, test)
        rows.append([ratio, res.mmae,
                     res.rho if res.rho is not None else float("nan")])
        log.info("ratio %.0f%%: mmae %.4f", ratio, res.mmae)
    reporting.write_csv(out / "ratio_curves.csv",
                        ["ratio", "mmae", "spearman"], rows)
    reporting.plot_ratio_curves([r[0] for r in rows], [r[1] for r in rows],
                                [r[2] for r in rows], out / "ratio_curves.svg")
    reporting.write_manifest(out, "report", _manifest(args, "report"))
    for ratio, m, rho in rows:
        print(f"{ratio:5.1f}%  MMAE {m:.4f}  rho {rho:.4f}")
    return 0


# ------------------------------------------------------------------- parsing

def _add_common_training_flags(p: _Parser) -> None:
    p.add_argument("--head", choices=sorted(HEAD_NAMES), default="gauss")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--context", type=int, default=0, metavar="L")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed-dim", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--encoder", choices=("bigru", "bow"), default="bigru")
    p.add_argument("--embeddings", default=None,
                   help="pretrained vector file (token v1..vd per line)")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--split", choices=("sentence", "document"),
                   default="document")


def build_parser() -> _Parser:
    parser = _Parser(prog="pledgespec",
                     description="Pledge specificity prediction and analysis")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate a corpus and report stats")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--autocorr", type=float, default=0.0)
    p.add_argument("--doc-length", type=int, default=20)
    p.add_argument("--signal-rate", type=float, default=0.4)
    p.add_argument("--themes", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="supervised training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_common_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ssl-train", help="cross-view semi-supervised training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ssl", choices=crossview.CONSENSUS_KINDS, default="emd")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--dropout", type=float, default=0.25)
    p.add_argument("--interleave", type=int, default=1)
    p.add_argument("--separate-student", action="store_true")
    _add_common_training_flags(p)
    p.set_defaults(func=cmd_ssl_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-sentence predictions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("psl-infer", help="MAP inference over a program file")
    p.add_argument("--program", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=50000)
    p.set_defaults(func=cmd_psl_infer)

    p = sub.add_parser("ideology", help="position recovery on fixture data")
    p.add_argument("--fixtures", default=None,
                   help="directory of fixture CSVs (default: bundled)")
    p.add_argument("--out", required=True)
    p.add_argument("--exponent", type=int, choices=(1, 2), default=1)
    p.add_argument("--prior-weight", type=float, default=1.0)
    p.set_defaults(func=cmd_ideology)

    p = sub.add_parser("salience", help="salience regressions on fixture data")
    p.add_argument("--fixtures", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--ridge", type=float, default=0.0)
    p.set_defaults(func=cmd_salience)

    p = sub.add_parser("report", help="labeled-ratio performance curves")
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="10,30,50,70,90")
    p.add_argument("--size", type=int, default=1500)
    p.add_argument("--seed", type=int, default=0)
    _add_common_training_flags(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ShapeError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
