"""Command line entry point.

One executable, eight subcommands:

  synth      generate a synthetic visual-genetic dataset
  sgt-embed  SGT-embed a FASTA file into a 256-dim feature CSV
  anchors    reduce per-sequence embeddings to per-taxon median anchors
  train      stage-1 metric pretraining of the projection head
  align      stage-2 cross-modal alignment against genetic anchors
  eval       cosine-KNN classification plus long-tailed metrics
  layout     2-D stress layout of class centroid cosine distances
  pipeline   chain everything for the four ablation variants and write
             a comparison report.json

All randomness flows from one --seed; stages derive their own streams
from it, so rerunning any command with the same inputs reproduces its
outputs byte for byte.  `XMODAL_THREADS` caps how many pipeline
variants run concurrently (the two training branches are independent).
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, evalkit, sgt, synthgen, trainer
from .embednet import load_checkpoint, save_checkpoint
from .seeds import derive_seed
from .trainer import TrainConfig

VARIANTS = ("naive", "naive+A", "wd+m", "wd+m+A")


def _load_synth_spec(ref, seed=None):
    """`ref` is the literal \"default\" or a JSON path."""
    if ref == "default":
        spec = synthgen.SynthSpec()
    else:
        spec = synthgen.SynthSpec.load(ref)
    if seed is not None:
        spec = synthgen.SynthSpec.from_dict({**spec.to_dict(), "seed": seed})
    return spec


def _seed_lineage(seed, names):
    lineage = {"seed": int(seed)}
    for name in names:
        lineage[name] = derive_seed(seed, name)
    return lineage


def _anchor_table_to_dict(table):
    return {int(lbl): table.matrix[i] for i, lbl in enumerate(table.labels)}


def cmd_synth(args):
    spec = _load_synth_spec(args.spec, args.seed)
    data = synthgen.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    synthgen.write_outputs(data, out)
    print(f"wrote {len(data.records)} sequences, "
          f"{data.train_table.n} train / {data.test_table.n} test samples,"
          f" {spec.n_classes} classes -> {out}")
    return 0


def cmd_sgt_embed(args):
    with open(args.fasta, encoding="utf-8") as fh:
        records = dataio.parse_fasta(fh)
    labels = dataio.load_labels_csv(args.labels)
    missing = [r.id for r in records if r.id not in labels]
    if missing:
        raise ValueError(f"no taxon label for sequences {missing[:5]}")
    ids, matrix = sgt.embed_sequences(records, args.kappa)
    table = dataio.FeatureTable(ids, [labels[i] for i in ids], matrix)
    dataio.write_feature_csv(table, args.out)
    print(f"embedded {table.n} sequences (kappa={args.kappa}) -> {args.out}")
    return 0


def cmd_anchors(args):
    table = dataio.load_feature_csv(getattr(args, "in"))
    anchors = sgt.anchors_from_table(table.ids, table.matrix, table.labels)
    out = dataio.FeatureTable(
        [f"anchor{a.taxon:02d}" for a in anchors],
        [a.taxon for a in anchors],
        np.stack([a.vector for a in anchors]),
    )
    dataio.write_feature_csv(out, args.out)
    print(f"{len(anchors)} anchors -> {args.out}")
    return 0


def cmd_train(args):
    config = TrainConfig.load(args.config)
    table = dataio.load_feature_csv(args.features)
    params, history = trainer.train_stage1(config, table.matrix, table.labels)
    save_checkpoint(params, args.out, "stage1",
                    _seed_lineage(config.seed, ["init", "stage1"]))
    if args.history:
        trainer.write_history(history, args.history)
    last = history.entries[-1]["mean_loss"] if history.entries else float("nan")
    print(f"stage1 done: {config.epochs_stage1} epochs, final loss {last:.6f}"
          f" -> {args.out}")
    return 0


def cmd_align(args):
    config = TrainConfig.load(args.config)
    params, _, lineage = load_checkpoint(args.ckpt)
    table = dataio.load_feature_csv(args.features)
    anchor_table = dataio.load_feature_csv(args.anchors)
    anchors = _anchor_table_to_dict(anchor_table)
    params, history = trainer.align_stage2(config, params, anchors,
                                           table.matrix, table.labels)
    lineage = dict(lineage)
    lineage.update(_seed_lineage(config.seed, ["stage2"]))
    save_checkpoint(params, args.out, "stage2", lineage)
    if args.history:
        trainer.write_history(history, args.history)
    last = history.entries[-1]["mean_loss"] if history.entries else float("nan")
    print(f"stage2 done: {config.epochs_stage2} epochs, final loss {last:.6f}"
          f" -> {args.out}")
    return 0


def _counts_for_metrics(args, gallery):
    n_classes = int(max(gallery.labels.max(), 0)) + 1
    if args.counts:
        counts = dataio.load_label_counts(args.counts)
        if len(counts) < n_classes:
            counts = np.concatenate([counts,
                                     np.zeros(n_classes - len(counts),
                                              dtype=np.int64)])
        return counts
    return np.bincount(gallery.labels, minlength=n_classes)


def cmd_eval(args):
    params, _, _ = load_checkpoint(args.ckpt)
    gallery_feats = dataio.load_feature_csv(args.gallery)
    query_feats = dataio.load_feature_csv(args.queries)
    gallery = evalkit.embed_features(params, gallery_feats)
    queries = evalkit.embed_features(params, query_feats)
    counts = _counts_for_metrics(args, gallery)
    if args.centroids:
        class_ids, cents = evalkit.class_centroids(gallery)
        gallery = evalkit.EmbeddingTable(
            [f"centroid{c:02d}" for c in class_ids], class_ids, cents)
    preds = evalkit.knn_predict(gallery, queries, args.k)
    n_classes = len(counts)
    if int(queries.labels.max()) >= n_classes:
        counts = np.concatenate([counts, np.zeros(
            int(queries.labels.max()) + 1 - n_classes, dtype=np.int64)])
    report = evalkit.compute_metrics(preds, queries.labels, counts, k=args.k)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    tail = "absent" if report.tail is None else f"{report.tail:.4f}"
    print(f"overall {report.overall:.4f}, macro {report.macro:.4f},"
          f" tail {tail} -> {args.out}")
    return 0


def cmd_layout(args):
    params, _, _ = load_checkpoint(args.ckpt)
    feats = dataio.load_feature_csv(args.features)
    table = evalkit.embed_features(params, feats)
    class_ids, dist = evalkit.centroid_distance_matrix(table)
    layout = evalkit.kamada_kawai_layout(dist, iters=args.iters, tol=args.tol,
                                         seed=args.seed)
    evalkit.write_layout_csv(class_ids, layout, args.out)
    print(f"{len(class_ids)} classes, stress {layout.stress:.3e} -> {args.out}")
    return 0


class PipelineConfig:
    """Optional JSON config for `pipeline`: {"train": {TrainConfig fields},
    "k": int, "tail_threshold": int, "head_threshold": int,
    "synth_spec": "default"|path|{SynthSpec fields}}.  Unknown keys rejected.
    """

    KEYS = {"train", "k", "tail_threshold", "head_threshold", "synth_spec"}

    def __init__(self, obj=None):
        obj = dict(obj or {})
        unknown = set(obj) - self.KEYS
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        self.train_overrides = dict(obj.get("train", {}))
        self.k = int(obj.get("k", 5))
        self.tail_threshold = int(obj.get("tail_threshold",
                                          evalkit.TAIL_THRESHOLD))
        self.head_threshold = int(obj.get("head_threshold",
                                          evalkit.HEAD_THRESHOLD))
        self.synth_spec = obj.get("synth_spec", "default")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


def _max_workers():
    raw = os.environ.get("XMODAL_THREADS", "")
    if raw.strip():
        try:
            cap = int(raw)
        except ValueError:
            raise ValueError(f"XMODAL_THREADS must be an integer, got {raw!r}")
        if cap < 1:
            raise ValueError("XMODAL_THREADS must be >= 1")
        return min(2, cap)
    return 2


def run_pipeline(spec, pipe_config=None, out_dir=None, seed=None):
    """Synth -> embed -> anchors -> two training branches -> four evals.

    The branches share one seed, so `naive` and `wd+m` see identical
    triplet draws and differ only in the balance devices; the aligned
    variants continue their branch's checkpoint through stage 2.
    Returns the report dict; with `out_dir` set, also writes the
    dataset, genetic features, anchors, checkpoints, per-variant
    histories, and report.json.
    """
    pipe = pipe_config or PipelineConfig()
    if seed is not None:
        spec = synthgen.SynthSpec.from_dict({**spec.to_dict(), "seed": seed})

    data = synthgen.generate(spec)
    ids, genetic = sgt.embed_sequences(data.records, spec.kappa)
    genetic_table = dataio.FeatureTable(
        ids, [data.seq_labels[i] for i in ids], genetic)
    anchors = sgt.anchors_from_table(genetic_table.ids, genetic_table.matrix,
                                     genetic_table.labels)
    anchor_dict = {a.taxon: a.vector for a in anchors}

    base = dict(d_in=spec.dim, embed_dim=256, kappa=spec.kappa, seed=spec.seed)
    base.update(pipe.train_overrides)
    train_counts = np.bincount(data.train_table.labels,
                               minlength=spec.n_classes)

    def evaluate(params):
        gallery = evalkit.embed_features(params, data.train_table)
        queries = evalkit.embed_features(params, data.test_table)
        preds = evalkit.knn_predict(gallery, queries, pipe.k)
        return evalkit.compute_metrics(
            preds, queries.labels, train_counts,
            tail_threshold=pipe.tail_threshold,
            head_threshold=pipe.head_threshold, k=pipe.k)

    def anchor_cos(params):
        gallery = evalkit.embed_features(params, data.train_table)
        mean, _ = evalkit.anchor_centroid_cosines(gallery, anchor_dict)
        return mean

    def run_branch(ltr_enabled):
        config = TrainConfig.from_dict({**base, "ltr_enabled": ltr_enabled,
                                        "align_enabled": True})
        params, hist1 = trainer.train_stage1(config, data.train_table.matrix,
                                             data.train_table.labels)
        base_metrics = evaluate(params)
        cos_before = anchor_cos(params)
        aligned, hist2 = trainer.align_stage2(config, params, anchor_dict,
                                              data.train_table.matrix,
                                              data.train_table.labels)
        aligned_metrics = evaluate(aligned)
        aligned_metrics.alignment = {"anchor_centroid_cos_before": cos_before,
                                     "anchor_centroid_cos_after":
                                         anchor_cos(aligned)}
        return config, params, hist1, base_metrics, aligned, hist2, aligned_metrics

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        naive_future = pool.submit(run_branch, False)
        ltr_future = pool.submit(run_branch, True)
        naive_branch = naive_future.result()
        ltr_branch = ltr_future.result()

    results = {}
    branches = {"naive": naive_branch, "wd+m": ltr_branch}
    for tag, branch in branches.items():
        _, _, _, base_metrics, _, _, aligned_metrics = branch
        results[tag] = base_metrics
        results[tag + "+A"] = aligned_metrics
    report = {tag: results[tag].to_dict() for tag in VARIANTS}

    if out_dir is not None:
        out = Path(out_dir)
        (out / "data").mkdir(parents=True, exist_ok=True)
        synthgen.write_outputs(data, out / "data")
        dataio.write_feature_csv(genetic_table, out / "genetic.csv")
        anchor_out = dataio.FeatureTable(
            [f"anchor{a.taxon:02d}" for a in anchors],
            [a.taxon for a in anchors],
            np.stack([a.vector for a in anchors]))
        dataio.write_feature_csv(anchor_out, out / "anchors.csv")
        for tag, fname in (("naive", "naive"), ("wd+m", "wdm")):
            config, params, hist1, _, aligned, hist2, _ = branches[tag]
            lineage = _seed_lineage(config.seed, ["init", "stage1", "stage2"])
            save_checkpoint(params, out / f"ckpt_{fname}.json", "stage1",
                            lineage)
            save_checkpoint(aligned, out / f"ckpt_{fname}_aligned.json",
                            "stage2", lineage)
            trainer.write_history([hist1, hist2],
                                  out / f"history_{fname}.json")
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def cmd_pipeline(args):
    pipe = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.k is not None:
        pipe.k = args.k
    spec_ref = args.spec if args.spec is not None else pipe.synth_spec
    if isinstance(spec_ref, dict):
        spec = synthgen.SynthSpec.from_dict(spec_ref)
        if args.seed is not None:
            spec = synthgen.SynthSpec.from_dict(
                {**spec.to_dict(), "seed": args.seed})
    else:
        spec = _load_synth_spec(spec_ref, args.seed)
    report = run_pipeline(spec, pipe, out_dir=args.out)
    for tag in VARIANTS:
        m = report[tag]
        tail = "absent" if m["tail"] is None else f"{m['tail']:.4f}"
        print(f"{tag:8s} overall {m['overall']:.4f}  macro {m['macro']:.4f}"
              f"  tail {tail}")
    print(f"report -> {Path(args.out) / 'report.json'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="xmodal",
        description="Visual-genetic cross-modal metric learning pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", default="default",
                   help="synth spec JSON path, or the literal 'default'")
    p.add_argument("--seed", type=int, default=None, help="override spec seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sgt-embed", help="embed FASTA sequences")
    p.add_argument("--fasta", required=True)
    p.add_argument("--labels", required=True,
                   help="sequence_id,taxon_id CSV")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output feature CSV")
    p.set_defaults(func=cmd_sgt_embed)

    p = sub.add_parser("anchors", help="median anchors from embeddings")
    p.add_argument("--in", required=True, dest="in",
                   help="per-sequence genetic feature CSV")
    p.add_argument("--out", required=True, help="output anchor CSV")
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("train", help="stage-1 metric pretraining")
    p.add_argument("--config", required=True, help="TrainConfig JSON")
    p.add_argument("--features", required=True, help="training feature CSV")
    p.add_argument("--out", required=True, help="output checkpoint JSON")
    p.add_argument("--history", default=None, help="optional history JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("align", help="stage-2 cross-modal alignment")
    p.add_argument("--config", required=True, help="TrainConfig JSON")
    p.add_argument("--ckpt", required=True, help="stage-1 checkpoint")
    p.add_argument("--anchors", required=True, help="anchor CSV")
    p.add_argument("--features", required=True, help="training feature CSV")
    p.add_argument("--out", required=True, help="output checkpoint JSON")
    p.add_argument("--history", default=None, help="optional history JSON")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="cosine-KNN metrics")
    p.add_argument("--ckpt", required=True, help="checkpoint JSON")
    p.add_argument("--gallery", required=True, help="gallery feature CSV")
    p.add_argument("--queries", required=True, help="query feature CSV")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--counts", default=None,
                   help="CSV for per-class train counts (id,taxon rows or"
                        " taxon_id,train_count); default: tally the gallery")
    p.add_argument("--centroids", action="store_true",
                   help="use class centroids as the gallery")
    p.add_argument("--out", required=True, help="output metrics JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("layout", help="2-D class layout")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output layout CSV")
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("pipeline", help="full four-variant comparison")
    p.add_argument("--spec", default=None,
                   help="synth spec JSON path or 'default'")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ArithmeticError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
