"""Command-line driver for the full pipeline.

Every subcommand is a thin shell over engine calls; configuration comes
from an optional JSON file with individual flags taking precedence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace

from . import corpus, evaluation
from .head import TrainConfig, load_head, save_head
from .seeding import derive_seed


def _dataclass_from(cls, data: dict, **overrides):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**merged)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_synth(args) -> int:
    spec = corpus.SynthSpec(
        dim=args.dim,
        class_count=args.classes,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        mean_radius=args.mean_radius,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    train, test = corpus.synth_gaussian_corpus(spec)
    import os

    os.makedirs(args.out, exist_ok=True)
    corpus.write_feature_file(train, os.path.join(args.out, "train.fvec"))
    corpus.write_feature_file(test, os.path.join(args.out, "test.fvec"))
    print(f"wrote {len(train)} train / {len(test)} test examples to {args.out}")
    return 0


def _train_config(args, cfg: dict) -> TrainConfig:
    return _dataclass_from(TrainConfig, cfg.get("train", {}), seed=args.seed)


def _joint_config(args, cfg: dict) -> TrainConfig:
    base = evaluation.joint_train_config()
    section = cfg.get("joint_train", {})
    merged = {f.name: getattr(base, f.name) for f in fields(TrainConfig)}
    merged.update(section)
    if args.seed is not None:
        merged["seed"] = args.seed
    return TrainConfig(**merged)


def cmd_train_base(args) -> int:
    cfg = _load_config(args.config)
    train_cfg = _joint_config(args, cfg)
    train = corpus.load_feature_file(args.train)
    head = evaluation.batch_retrain_oracle(train, train_cfg)
    save_head(head, args.out)
    print(f"trained base head: {head.n_classes} classes, dim {head.dim} -> {args.out}")
    if args.test:
        test = corpus.load_feature_file(args.test)
        from .head import predict_batch

        preds = predict_batch(head, test.features.astype("float64"))
        acc = evaluation.top1_accuracy(preds.tolist(), test.labels.astype(int).tolist())
        print(f"top1={acc}")
    return 0


def cmd_add_class(args) -> int:
    cfg = _load_config(args.config)
    train_cfg = _train_config(args, cfg)
    head = load_head(args.head)
    positives = corpus.load_feature_file(args.positives)
    pool_source = corpus.load_feature_file(args.negatives_from)
    pools = pool_source.per_class()
    from .head import add_class_end_to_end

    new_head = add_class_end_to_end(head, args.name, positives, pools, train_cfg)
    save_head(new_head, args.out)
    print(f"added class {args.name!r}: {head.n_classes} -> {new_head.n_classes} classes")
    return 0


def cmd_eval(args) -> int:
    if args.predictions:
        with open(args.predictions, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        from .detection import (
            BoundingBox,
            Detection,
            GroundTruth,
            average_precision,
            combined_precision,
            top1_accuracy,
        )

        if "predictions" in doc:
            acc = top1_accuracy(doc["predictions"], doc["labels"])
            print(f"top1={acc}")
        if "detections" in doc:
            dets = [
                Detection(BoundingBox(*d["box"]), d["score"], d["label"])
                for d in doc["detections"]
            ]
            gts = [GroundTruth(BoundingBox(*g["box"]), g["label"]) for g in doc["ground_truths"]]
            print(f"ap={average_precision(dets, gts)}")
            print(f"combined={combined_precision(dets, gts)}")
        return 0
    head = load_head(args.head)
    test = corpus.load_feature_file(args.test)
    from .head import predict_batch

    preds = predict_batch(head, test.features.astype("float64"))
    acc = evaluation.top1_accuracy(preds.tolist(), test.labels.astype(int).tolist())
    print(f"top1={acc}")
    return 0


def _sweep_config(args, cfg: dict) -> evaluation.SweepConfig:
    return _dataclass_from(
        evaluation.SweepConfig,
        cfg.get("sweep", {}),
        ratio_start=args.ratio_start,
        ratio_end=args.ratio_end,
        ratio_step=args.ratio_step,
        old_sample_count=args.m,
        seed=args.seed,
    )


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    sweep_cfg = _sweep_config(args, cfg)
    head = load_head(args.head)
    base_test = corpus.load_feature_file(args.base_test)
    added = [corpus.load_feature_file(p) for p in args.added_test]
    report = evaluation.ratio_sweep(head, base_test, added, sweep_cfg, class_name=args.name or "")
    import os

    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    csv_path, json_path = args.out + ".csv", args.out + ".json"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("ratio,top1\n")
        for r, a in zip(report.ratios, report.accuracies):
            fh.write(f"{r:.6g},{a!r}\n")
    from dataclasses import asdict

    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(asdict(report), sort_keys=True, indent=2) + "\n")
    print(f"sweep: {len(report.ratios)} ratios, median={report.summary.median} -> {csv_path}")
    return 0


def build_experiment_inputs(config: dict, seed: int | None):
    """Synthesize the corpus and carve it into base + added-class portions."""
    master = seed if seed is not None else config.get("seed", 0)
    synth_cfg = dict(config.get("synth", {}))
    base_n = synth_cfg.pop("base_classes", 8)
    added_n = synth_cfg.pop("added_classes", 6)
    spec = _dataclass_from(
        corpus.SynthSpec,
        synth_cfg,
        class_count=synth_cfg.get("class_count", base_n + added_n),
        seed=derive_seed(master, 10),
    )
    train, test = corpus.synth_gaussian_corpus(spec)
    base_train = corpus.filter_classes(train, range(base_n))
    base_test = corpus.filter_classes(test, range(base_n))
    new_classes = [
        (
            train.class_names[cid],
            corpus.filter_classes(train, [cid]),
            corpus.filter_classes(test, [cid]),
        )
        for cid in range(base_n, spec.class_count)
    ]
    train_cfg = _dataclass_from(
        TrainConfig, config.get("train", {}), seed=derive_seed(master, 11)
    )
    joint_defaults = evaluation.joint_train_config(seed=derive_seed(master, 11))
    joint_merged = {f.name: getattr(joint_defaults, f.name) for f in fields(TrainConfig)}
    joint_merged.update(config.get("joint_train", {}))
    base_cfg = TrainConfig(**joint_merged)
    sweep_cfg = _dataclass_from(
        evaluation.SweepConfig, config.get("sweep", {}), seed=derive_seed(master, 12)
    )
    digest = corpus.synth_corpus_digest(spec)
    return base_train, base_test, new_classes, train_cfg, base_cfg, sweep_cfg, digest, master


def cmd_experiment(args) -> int:
    config = _load_config(args.config)
    base_train, base_test, new_classes, train_cfg, base_cfg, sweep_cfg, digest, master = (
        build_experiment_inputs(config, args.seed)
    )
    report = evaluation.run_incremental_experiment(
        base_train, base_test, new_classes, train_cfg, sweep_cfg, digest, base_cfg=base_cfg
    )
    csv_path, json_path = evaluation.write_report_files(report, args.out, master)
    medians = [s.summary.median for s in report.sweeps]
    print(f"baseline={report.baseline_accuracy} medians={medians}")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_serve(args) -> int:
    from .embed import ExtractorConfig, FeatureExtractor
    from .service import TeachingEngine, serve

    cfg = _load_config(args.config)
    train_cfg = _train_config(args, cfg)
    head = load_head(args.head)
    pools = corpus.load_feature_file(args.pools).per_class()
    world = corpus.load_feature_file(args.world) if args.world else None
    report = None
    if args.report:
        with open(args.report, "r", encoding="utf-8") as fh:
            report = json.load(fh)
    extractor = None
    if cfg.get("extractor"):
        extractor = FeatureExtractor(_dataclass_from(ExtractorConfig, cfg["extractor"]))
    engine = TeachingEngine(
        head, pools, train_cfg, world=world, extractor=extractor, experiment_report=report
    )
    serve(engine, args.bind)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iosr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--train-per-class", type=int, default=200)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--mean-radius", type=float, default=5.0)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-base", help="batch-train the base head")
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("add-class", help="incrementally add one class")
    p.add_argument("--head", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--positives", required=True)
    p.add_argument("--negatives-from", required=True, help="feature file supplying per-class pools")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_add_class)

    p = sub.add_parser("eval", help="top-1 / AP / combined precision on files")
    p.add_argument("--head")
    p.add_argument("--test")
    p.add_argument("--predictions", help="JSON file with predictions/labels or detections")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="ratio sweep for one head")
    p.add_argument("--head", required=True)
    p.add_argument("--base-test", required=True)
    p.add_argument("--added-test", action="append", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--name")
    p.add_argument("--config")
    p.add_argument("--ratio-start", type=float)
    p.add_argument("--ratio-end", type=float)
    p.add_argument("--ratio-step", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("experiment", help="full incremental experiment on synthetic data")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("serve", help="start the teaching service")
    p.add_argument("--head", required=True)
    p.add_argument("--pools", required=True, help="feature file supplying per-class pools")
    p.add_argument("--world")
    p.add_argument("--report", help="experiment report JSON to serve under /metrics")
    p.add_argument("--bind", default="127.0.0.1:8077")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and not args.predictions and not (args.head and args.test):
        parser.error("eval needs either --predictions or both --head and --test")
    try:
        return args.func(args)
    except Exception as exc:
        print(
            "error: " + json.dumps({"kind": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
