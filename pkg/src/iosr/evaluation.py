"""Experimental protocol: dynamic test sets, ratio sweeps, incremental runs.

The dynamic test set mixes a fixed number of samples from the already-known
classes with a ratio-controlled number from the newest class; sweeping the
ratio and summarizing accuracies with a five-number summary reproduces the
protocol's boxplot statistics at desk scale. A jointly retrained softmax
head serves as the upper-bound reference for degradation measurement.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .corpus import LabeledFeatureSet, merge
from .detection import top1_accuracy
from .head import (
    ClassId,
    ClassifierHead,
    TrainConfig,
    add_class_end_to_end,
    predict_batch,
    softmax,
)
from .seeding import derive_seed

ANCHOR_SEED_KEY = 10_000
GRID_EPS = 1e-9


def joint_train_config(seed: int = 0) -> TrainConfig:
    """Standard profile for jointly trained softmax heads.

    Softer than the appended-column defaults: joint training has no frozen
    competitors to outscore, and the resulting moderate logit scale is the
    reference a later one-vs-all column must reach.
    """
    return TrainConfig(learning_rate=0.01, epochs=20, seed=seed)


@dataclass(frozen=True)
class SweepConfig:
    ratio_start: float = 0.05
    ratio_end: float = 0.5
    ratio_step: float = 0.02
    anchor_ratio: float = 0.1
    old_sample_count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.ratio_start <= self.ratio_end:
            raise ValueError("need 0 < ratio_start <= ratio_end")
        if self.ratio_step <= 0:
            raise ValueError("ratio_step must be positive")
        if self.anchor_ratio <= 0:
            raise ValueError("anchor_ratio must be positive")
        if self.old_sample_count <= 0:
            raise ValueError("old_sample_count must be positive")


@dataclass(frozen=True)
class FiveNumberSummary:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


@dataclass
class SweepReport:
    class_name: str
    ratios: list
    accuracies: list
    summary: FiveNumberSummary
    anchor_ratio: float
    anchor_accuracy: float


@dataclass
class ExperimentReport:
    baseline_accuracy: float
    sweeps: list
    oracle_medians: list
    metadata: dict


def quantiles(values) -> FiveNumberSummary:
    """Five-number summary with linear-interpolation quartiles at p*(n-1)."""
    vals = sorted(float(v) for v in values)
    if not vals:
        raise ValueError("empty value list")

    def at(p):
        pos = p * (len(vals) - 1)
        lo = int(pos)
        hi = min(lo + 1, len(vals) - 1)
        frac = pos - lo
        return vals[lo] + (vals[hi] - vals[lo]) * frac

    return FiveNumberSummary(vals[0], at(0.25), at(0.5), at(0.75), vals[-1])


def ratio_grid(cfg: SweepConfig) -> list[float]:
    """Arithmetic grid start, start+step, ... up to and including end."""
    n = int((cfg.ratio_end - cfg.ratio_start) / cfg.ratio_step + GRID_EPS) + 1
    return [round(cfg.ratio_start + i * cfg.ratio_step, 12) for i in range(n)]


def _draw(pool: LabeledFeatureSet, count: int, rng) -> np.ndarray:
    """Uniform index draw; falls back to replacement when count exceeds the pool."""
    return rng.choice(len(pool), size=count, replace=count > len(pool))


def draw_dynamic_test_set(
    base_test: LabeledFeatureSet, added_tests, ratio: float, m: int, seed: int
) -> LabeledFeatureSet:
    """M old samples plus round(ratio*M) newest-class samples, seeded."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    if not added_tests:
        raise ValueError("need at least one added class test set")
    newest = added_tests[-1]
    if len(newest) == 0:
        raise ValueError("newest class has an empty test pool")
    old_pool = merge([base_test, *added_tests[:-1]])
    rng = np.random.default_rng(seed)
    old_idx = _draw(old_pool, m, rng)
    n_new = max(int(round(ratio * m)), 1)
    new_idx = _draw(newest, n_new, rng)
    return merge([old_pool.subset(old_idx), newest.subset(new_idx)])


def dynamic_eval(
    head: ClassifierHead,
    base_test: LabeledFeatureSet,
    added_tests,
    ratio: float,
    m: int,
    seed: int,
) -> float:
    """Top-1 accuracy of the head on one dynamic test draw."""
    drawn = draw_dynamic_test_set(base_test, added_tests, ratio, m, seed)
    preds = predict_batch(head, drawn.features.astype(np.float64))
    return top1_accuracy(preds.tolist(), drawn.labels.astype(int).tolist())


def ratio_sweep(
    head: ClassifierHead,
    base_test: LabeledFeatureSet,
    added_tests,
    cfg: SweepConfig,
    class_name: str = "",
) -> SweepReport:
    """dynamic_eval at every grid ratio plus the anchor ratio, summarized."""
    ratios = ratio_grid(cfg)
    accuracies = [
        dynamic_eval(head, base_test, added_tests, r, cfg.old_sample_count, derive_seed(cfg.seed, i))
        for i, r in enumerate(ratios)
    ]
    anchor_accuracy = dynamic_eval(
        head,
        base_test,
        added_tests,
        cfg.anchor_ratio,
        cfg.old_sample_count,
        derive_seed(cfg.seed, ANCHOR_SEED_KEY),
    )
    return SweepReport(
        class_name=class_name,
        ratios=ratios,
        accuracies=accuracies,
        summary=quantiles(accuracies),
        anchor_ratio=cfg.anchor_ratio,
        anchor_accuracy=anchor_accuracy,
    )


def batch_retrain_oracle(
    all_train: LabeledFeatureSet, cfg: TrainConfig, extractor_digest: str = ""
) -> ClassifierHead:
    """Jointly train a full softmax head on everything; the reference trainer.

    Minibatch SGD on cross-entropy for cfg.epochs, weights initialized from
    Normal(0, init_sigma^2) under cfg.seed.
    """
    class_ids = all_train.class_ids
    if len(class_ids) < 2:
        raise ValueError("joint training needs at least 2 classes")
    if class_ids != list(range(len(class_ids))):
        raise ValueError("class ids must be dense 0..n-1 for joint training")
    n = len(class_ids)
    X = all_train.features.astype(np.float64)
    onehot = np.eye(n)[all_train.labels.astype(np.intp)]
    rng = np.random.default_rng(cfg.seed)
    W = rng.standard_normal((all_train.dim, n)) * cfg.init_sigma
    b = rng.standard_normal(n) * cfg.init_sigma
    for _ in range(cfg.epochs):
        order = rng.permutation(len(all_train))
        for start in range(0, len(order), cfg.minibatch):
            batch = order[start : start + cfg.minibatch]
            probs = softmax(X[batch] @ W + b)
            g = (probs - onehot[batch]) / len(batch)
            W -= cfg.learning_rate * (X[batch].T @ g)
            b -= cfg.learning_rate * g.sum(axis=0)
    registry = [ClassId(c, all_train.class_names[c], "base") for c in class_ids]
    return ClassifierHead(W, b, registry, extractor_digest)


def run_incremental_experiment(
    base_train: LabeledFeatureSet,
    base_test: LabeledFeatureSet,
    new_classes,
    head_cfg: TrainConfig,
    sweep_cfg: SweepConfig,
    extractor_digest: str = "",
    base_cfg: TrainConfig | None = None,
) -> ExperimentReport:
    """Teach classes one by one, sweep after each, and track the batch oracle.

    new_classes is an ordered list of (name, train_set, test_set). After each
    addition its test portion joins the old pool for subsequent sweeps. The
    oracle head is retrained jointly at every step and swept with the same
    seeds, so its median is directly comparable. head_cfg drives the
    incremental column additions; base_cfg (default: the joint profile)
    drives the base head and the oracle retrains.
    """
    names = [name for name, _, _ in new_classes]
    if len(set(names)) != len(names):
        raise ValueError("duplicate class names among new classes")
    if base_cfg is None:
        base_cfg = joint_train_config(seed=head_cfg.seed)
    head = batch_retrain_oracle(
        base_train, replace(base_cfg, seed=derive_seed(base_cfg.seed, 0)), extractor_digest
    )
    baseline_preds = predict_batch(head, base_test.features.astype(np.float64))
    baseline_accuracy = top1_accuracy(
        baseline_preds.tolist(), base_test.labels.astype(int).tolist()
    )

    pools = base_train.per_class()
    all_train = base_train
    added_tests: list[LabeledFeatureSet] = []
    sweeps: list[SweepReport] = []
    oracle_medians: list[float] = []
    pool_sizes: list[int] = []

    for step, (name, train_i, test_i) in enumerate(new_classes, start=1):
        step_train_cfg = replace(head_cfg, seed=derive_seed(head_cfg.seed, 100, step))
        head = add_class_end_to_end(head, name, train_i, pools, step_train_cfg)
        new_id = head.n_classes - 1

        step_sweep_cfg = replace(sweep_cfg, seed=derive_seed(sweep_cfg.seed, step))
        relabeled_test = LabeledFeatureSet(
            test_i.dim,
            {new_id: name},
            np.full(len(test_i), new_id, dtype=np.uint16),
            test_i.features,
        )
        added_tests = added_tests + [relabeled_test]
        pool_sizes.append(len(base_test) + sum(len(s) for s in added_tests[:-1]))
        sweeps.append(ratio_sweep(head, base_test, added_tests, step_sweep_cfg, name))

        relabeled_train = LabeledFeatureSet(
            train_i.dim,
            {new_id: name},
            np.full(len(train_i), new_id, dtype=np.uint16),
            train_i.features,
        )
        pools[new_id] = relabeled_train
        all_train = merge([all_train, relabeled_train])
        oracle_cfg = replace(base_cfg, seed=derive_seed(base_cfg.seed, 200, step))
        oracle_head = batch_retrain_oracle(all_train, oracle_cfg, extractor_digest)
        oracle_sweep = ratio_sweep(oracle_head, base_test, added_tests, step_sweep_cfg, name)
        oracle_medians.append(oracle_sweep.summary.median)

    metadata = {
        "train_config": asdict(head_cfg),
        "base_train_config": asdict(base_cfg),
        "sweep_config": asdict(sweep_cfg),
        "extractor_digest": extractor_digest,
        "class_names": names,
        "old_pool_sizes": pool_sizes,
        "base_classes": len(base_train.class_names),
    }
    return ExperimentReport(baseline_accuracy, sweeps, oracle_medians, metadata)


def report_to_csv(report: ExperimentReport) -> str:
    lines = ["step,class_name,ratio,top1"]
    for step, sweep in enumerate(report.sweeps, start=1):
        for ratio, acc in zip(sweep.ratios, sweep.accuracies):
            lines.append(f"{step},{sweep.class_name},{ratio:.6g},{acc!r}")
    return "\n".join(lines) + "\n"


def report_to_json(report: ExperimentReport) -> str:
    doc = {
        "baseline_accuracy": report.baseline_accuracy,
        "steps": [
            {
                "step": i + 1,
                "class_name": sweep.class_name,
                "points": [
                    {"ratio": r, "top1": a} for r, a in zip(sweep.ratios, sweep.accuracies)
                ],
                "summary": asdict(sweep.summary),
                "anchor_ratio": sweep.anchor_ratio,
                "anchor_accuracy": sweep.anchor_accuracy,
                "oracle_median": report.oracle_medians[i],
            }
            for i, sweep in enumerate(report.sweeps)
        ],
        "metadata": report.metadata,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_report_files(report: ExperimentReport, out_dir, seed: int):
    """Write CSV and JSON reports named after the experiment seed."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"experiment_seed{seed}.csv")
    json_path = os.path.join(out_dir, f"experiment_seed{seed}.json")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report_to_csv(report))
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report_to_json(report))
    return csv_path, json_path
