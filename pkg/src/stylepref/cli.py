"""Command-line pipeline driver.

Every stage is a subcommand; all randomized stages take --seed and every
subcommand accepts --config pointing at a key-value line file whose entries
fill in unset flags. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import analysis, corpus, embio, lineio, pairing, ranker, sampling, simulate
from .acoustics import AcousticsConfig, extract_proxies, load_proxies, load_wav, save_proxies
from .analysis import DIMENSION_GROUPS, load_judgments
from .collect import AnnotationService
from .errors import DomainError, StyleprefError
from .server import CollectServer


def _apply_config(args, argv) -> None:
    if not getattr(args, "config", None):
        return
    cfg = lineio.read_objects(args.config)
    merged: dict = {}
    for obj in cfg:
        merged.update(obj)
    given = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    for key, value in merged.items():
        flag = "--" + key.replace("_", "-")
        if flag in given:
            continue
        if hasattr(args, key):
            setattr(args, key, value)


def _judgment_items(pairs, judgments):
    """Triples (utt_a, utt_b, a_preferred) for judgments on the given pairs.

    Judgments on other pairs (e.g. the other split) are skipped.
    """
    by_id = {p.pair_id: p for p in pairs}
    items = []
    for j in judgments:
        p = by_id.get(j.pair_id)
        if p is not None:
            items.append((p.utt_a, p.utt_b, j.choice == "A"))
    if not items:
        raise DomainError("no judgments reference the given pairs")
    return items


def cmd_simulate(args) -> int:
    cfg = simulate.SimulationConfig(
        n_utterances=int(args.n_utterances),
        n_pairs=int(args.n_pairs),
        n_judgments=int(args.n_judgments),
        latent_spread=float(args.latent_spread),
        seed=int(args.seed),
    )
    paths = simulate.run_simulation(cfg, args.out)
    for key, path in sorted(paths.items()):
        print(f"{key}: {path}")
    return 0


def cmd_filter(args) -> int:
    records = corpus.load_manifest(args.manifest)
    cfg = corpus.FilterConfig(
        max_script_likeness=int(args.max_script_likeness),
        min_duration_s=float(args.min_duration_s),
        max_duration_s=float(args.max_duration_s),
        min_mos_exclusive=float(args.min_mos_exclusive),
        max_cer=float(args.max_cer),
    )
    kept = corpus.filter_pool(records, cfg)
    corpus.save_manifest(args.out, kept)
    print(f"retained {len(kept)} of {len(records)} utterances")
    for (source, split), count in sorted(corpus.corpus_stats(kept).items()):
        print(f"  {source} / {split}: {count}")
    return 0


def cmd_sample(args) -> int:
    records = corpus.load_manifest(args.manifest)
    emb = embio.read_embeddings(args.speaker_embeddings)
    rows = np.asarray([emb[r.speaker_embedding_ref] for r in records])
    proj = sampling.tsne_project(rows, perplexity=float(args.perplexity),
                                 iterations=int(args.iterations), seed=int(args.seed))
    labels = sampling.cluster_points(proj, eps=float(args.eps), min_pts=int(args.min_pts))
    kept = sampling.cap_clusters(records, labels, int(args.max_per_cluster), seed=int(args.seed))
    corpus.save_manifest(args.out, kept)
    if args.projection_csv:
        with open(args.projection_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "x", "y", "cluster"])
            for rec, pt, lab in zip(records, proj.points, labels.labels):
                writer.writerow([rec.id, f"{pt[0]:.6f}", f"{pt[1]:.6f}", int(lab)])
    n_clusters = len(set(labels.labels[labels.labels >= 0].tolist()))
    print(f"t-SNE KL {proj.final_kl:.4f}; {n_clusters} clusters; kept {len(kept)} of {len(records)}")
    return 0


def cmd_pair(args) -> int:
    records = corpus.load_manifest(args.manifest)
    text_emb = embio.read_embeddings(args.text_embeddings)
    spk_emb = embio.read_embeddings(args.speaker_embeddings)
    pool = [r for r in records if r.split == args.split]
    cfg = pairing.PairingConfig(
        quota=int(args.quota),
        seed=int(args.seed),
        min_text_sim=float(args.min_text_sim),
        max_speaker_sim=float(args.max_speaker_sim),
        weight_text=float(args.weight_text),
        weight_speaker=float(args.weight_speaker),
        shortlist_size=int(args.shortlist_size),
    )
    pairs, shortfall = pairing.build_pairs(pool, text_emb, spk_emb, cfg)
    pairing.save_pairs(args.out, pairs)
    cross = sum(1 for p in pairs if p.cross_source)
    print(f"built {len(pairs)} pairs ({cross} cross-source) for split {args.split}")
    if shortfall:
        print(f"warning: {shortfall} pairs short of quota", file=sys.stderr)
    return 0


def cmd_extract(args) -> int:
    records = corpus.load_manifest(args.manifest)
    cfg = AcousticsConfig()
    proxies = {}
    flagged = []
    for rec in records:
        try:
            proxies[rec.id] = extract_proxies(rec, load_wav(rec.audio_path), cfg)
        except DomainError as exc:
            flagged.append((rec.id, str(exc)))
    save_proxies(args.out, proxies)
    print(f"extracted proxies for {len(proxies)} utterances; {len(flagged)} flagged")
    for uid, reason in flagged:
        print(f"  flagged {uid}: {reason}", file=sys.stderr)
    return 0


def _pcr_table(results) -> str:
    lines = ["Proxy concordance with preference", "-" * 56]
    lines.append(f"{'Proxy':30s} {'PCR (%)':>8s} {'dir':>4s} {'p-value':>10s}")
    for r in results:
        arrow = "up" if r.direction == "higher" else "down"
        lines.append(f"{r.proxy_name:30s} {100*r.pcr:8.1f} {arrow:>4s} {r.p_value:10.2e}")
    lines.append(f"(bootstrap 95% CIs from B=1000 resamples; n per row varies)")
    return "\n".join(lines)


def _cv_table(reports: dict) -> str:
    lines = ["Multivariate pairwise prediction (5-fold CV)", "-" * 62]
    lines.append(f"{'Feature set':26s} {'#Feat':>5s} {'Acc (%)':>14s} {'AUC (%)':>14s}")
    for name, (n_feat, rep) in reports.items():
        lines.append(
            f"{name:26s} {n_feat:5d} "
            f"{100*rep.mean_acc:7.1f}+-{100*rep.std_acc:4.1f} "
            f"{100*rep.mean_auc:7.1f}+-{100*rep.std_auc:4.1f}"
        )
    return "\n".join(lines)


def cmd_analyze(args) -> int:
    records = corpus.load_manifest(args.manifest)
    pairs = []
    for path in args.pairs:
        pairs.extend(pairing.load_pairs(path))
    judgments = load_judgments(args.judgments)
    proxies = load_proxies(args.proxies)
    os.makedirs(args.out_dir, exist_ok=True)
    seed = int(args.seed)

    rates = analysis.empirical_win_rate(judgments, pairs)
    lineio.write_objects(
        os.path.join(args.out_dir, "win_rates.jsonl"),
        ({"id": u, "wins": w, "appearances": a, "rate": r} for u, (w, a, r) in sorted(rates.items())),
    )

    matrix = analysis.corpus_win_matrix(judgments, pairs, records)
    lineio.write_objects(
        os.path.join(args.out_dir, "win_matrix.jsonl"),
        ({"source": s1, "versus": s2, "win_rate": v} for (s1, s2), v in sorted(matrix.items())),
    )

    source_of = {r.id: r.source for r in records}
    edges = np.linspace(0.0, 1.0, 11)
    with open(os.path.join(args.out_dir, "win_hist.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        sources = sorted({r.source for r in records})
        writer.writerow(["bin_lower", "bin_upper", *sources])
        per_source = {
            s: np.histogram([r for u, (_, _, r) in rates.items() if source_of[u] == s], bins=edges)[0]
            for s in sources
        }
        for i in range(10):
            writer.writerow([f"{edges[i]:.1f}", f"{edges[i+1]:.1f}", *(int(per_source[s][i]) for s in sources)])

    pcr_results = []
    for i, name in enumerate(analysis.PROXY_NAMES):
        try:
            pcr_results.append(
                analysis.compute_pcr(name, proxies, judgments, pairs, b=int(args.bootstrap), seed=seed + i)
            )
        except DomainError as exc:
            print(f"PCR skipped for {name}: {exc}", file=sys.stderr)
    lineio.write_objects(
        os.path.join(args.out_dir, "pcr.jsonl"),
        (
            {
                "proxy": r.proxy_name,
                "pcr": r.pcr,
                "direction": r.direction,
                "n_used": r.n_used,
                "ci_lower": r.ci.lower,
                "ci_upper": r.ci.upper,
                "p_value": r.p_value,
            }
            for r in pcr_results
        ),
    )

    data = analysis.build_diff_dataset(pairs, proxies, judgments)
    cv_reports = {}
    for group, names in DIMENSION_GROUPS.items():
        cv_reports[group] = (len(names), analysis.cross_validate(data, k=5, feature_subset=names, seed=seed))
    combined = analysis.cross_validate(data, k=5, seed=seed)
    cv_reports["all_combined"] = (len(analysis.PROXY_NAMES), combined)
    lineio.write_objects(
        os.path.join(args.out_dir, "cv.jsonl"),
        (
            {
                "feature_set": name,
                "n_features": n_feat,
                "mean_acc": rep.mean_acc,
                "std_acc": rep.std_acc,
                "mean_auc": rep.mean_auc,
                "std_auc": rep.std_auc,
                "coefficients": rep.coefficients,
            }
            for name, (n_feat, rep) in cv_reports.items()
        ),
    )

    report = _pcr_table(pcr_results) + "\n\n" + _cv_table(cv_reports) + "\n"
    with open(os.path.join(args.out_dir, "report.txt"), "w") as fh:
        fh.write(report)
    print(report)
    return 0


def cmd_train(args) -> int:
    pairs = pairing.load_pairs(args.pairs)
    judgments = load_judgments(args.judgments)
    items = _judgment_items(pairs, judgments)
    store = ranker.FeatureStore(args.features)
    cfg = ranker.TrainConfig(
        learning_rate=float(args.learning_rate),
        batch_size=int(args.batch_size),
        epochs=int(args.epochs),
        l2=float(args.l2),
        seed=int(args.seed),
        patience=int(args.patience),
        aggregator=args.aggregator,
    )
    model, log_rows = ranker.train_ranker(items, store, cfg)
    ranker.save_model(model, args.out_model)
    if args.log_csv:
        with open(args.log_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_nll", "valid_nll"])
            for row in log_rows:
                writer.writerow([row["epoch"], f"{row['train_nll']:.6f}", f"{row['valid_nll']:.6f}"])
    print(f"trained {cfg.aggregator} model for {len(log_rows)} epochs; saved to {args.out_model}")
    return 0


def cmd_eval(args) -> int:
    model = ranker.load_model(args.model)
    pairs = pairing.load_pairs(args.pairs)
    judgments = load_judgments(args.judgments)
    items = _judgment_items(pairs, judgments)
    store = ranker.FeatureStore(args.features)
    nll, acc, auc = ranker.evaluate_ranker(model, items, store)
    print(f"{'NLL':>8s} {'Acc.(%)':>8s} {'AUC(%)':>8s}")
    print(f"{nll:8.4f} {100*acc:8.2f} {100*auc:8.2f}")
    return 0


def cmd_serve(args) -> int:
    pairs = pairing.load_pairs(args.pairs)
    records = corpus.load_manifest(args.manifest)
    audio = {r.id: r.audio_path for r in records}
    service = AnnotationService(
        pairs,
        audio,
        log_path=args.log,
        session_size=int(args.session_size),
        session_cap=int(args.session_cap),
        seed=int(args.seed),
    )
    server = CollectServer(service, host=args.host, port=int(args.port), static_dir=args.static_dir)
    host, port = server.address[:2]
    print(f"serving on http://{host}:{port} (log: {args.log})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stylepref", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--config", default=None, help="key-value line file with flag defaults")
        p.add_argument("--seed", default=0, type=int)
        return p

    p = add("simulate", cmd_simulate, help="generate a synthetic corpus with known latent style")
    p.add_argument("--out", required=True)
    p.add_argument("--n-utterances", default=200, type=int)
    p.add_argument("--n-pairs", default=1000, type=int)
    p.add_argument("--n-judgments", default=4000, type=int)
    p.add_argument("--latent-spread", default=1.5, type=float)

    p = add("filter", cmd_filter, help="apply the screening gates to a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-script-likeness", default=2, type=int)
    p.add_argument("--min-duration-s", default=2.0, type=float)
    p.add_argument("--max-duration-s", default=10.0, type=float)
    p.add_argument("--min-mos-exclusive", default=3.0, type=float)
    p.add_argument("--max-cer", default=0.15, type=float)

    p = add("sample", cmd_sample, help="t-SNE + clustering + cluster caps on speaker embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--speaker-embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--projection-csv", default=None)
    p.add_argument("--perplexity", default=30.0, type=float)
    p.add_argument("--iterations", default=500, type=int)
    p.add_argument("--eps", default=2.0, type=float)
    p.add_argument("--min-pts", default=8, type=int)
    p.add_argument("--max-per-cluster", default=50, type=int)

    p = add("pair", cmd_pair, help="build the A/B comparison set for one split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--text-embeddings", required=True)
    p.add_argument("--speaker-embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--quota", required=True, type=int)
    p.add_argument("--min-text-sim", default=0.2, type=float)
    p.add_argument("--max-speaker-sim", default=0.75, type=float)
    p.add_argument("--weight-text", default=0.5, type=float)
    p.add_argument("--weight-speaker", default=0.5, type=float)
    p.add_argument("--shortlist-size", default=50, type=int)

    p = add("extract", cmd_extract, help="compute acoustic proxies for every utterance")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("analyze", cmd_analyze, help="win rates, PCR table, multivariate CV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs", required=True, nargs="+")
    p.add_argument("--judgments", required=True)
    p.add_argument("--proxies", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bootstrap", default=1000, type=int)

    p = add("train", cmd_train, help="train the pairwise ranking model")
    p.add_argument("--pairs", required=True)
    p.add_argument("--judgments", required=True)
    p.add_argument("--features", required=True, help="directory of <id>.fse feature files")
    p.add_argument("--out-model", required=True)
    p.add_argument("--log-csv", default=None)
    p.add_argument("--learning-rate", default=0.05, type=float)
    p.add_argument("--batch-size", default=32, type=int)
    p.add_argument("--epochs", default=60, type=int)
    p.add_argument("--l2", default=1e-5, type=float)
    p.add_argument("--patience", default=8, type=int)
    p.add_argument("--aggregator", default="mean_pool", choices=ranker.AGGREGATORS)

    p = add("eval", cmd_eval, help="evaluate a trained model on held-out judgments")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--judgments", required=True)
    p.add_argument("--features", required=True)

    p = add("serve", cmd_serve, help="run the A/B annotation HTTP service")
    p.add_argument("--pairs", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", default=8765, type=int)
    p.add_argument("--session-size", default=25, type=int)
    p.add_argument("--session-cap", default=10, type=int)
    p.add_argument("--static-dir", default=None)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config(args, argv)
    try:
        return args.func(args)
    except StyleprefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
