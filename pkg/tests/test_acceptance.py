"""Acceptance gate: one test per release criterion, at the stated tolerance.

Run with `pytest tests/test_acceptance.py`; a per-criterion PASS/FAIL line
is printed in the terminal summary (see conftest).
"""

import math
import time

import numpy as np
import pytest

from iosr import corpus
from iosr.cli import build_experiment_inputs, main
from iosr.detection import (
    BoundingBox,
    apply_box_transform,
    average_precision,
    bilinear_resample,
    encode_box_transform,
)
from iosr.evaluation import run_incremental_experiment
from iosr.head import (
    ConfusionDistribution,
    TrainConfig,
    append_class,
    logits,
    sample_negatives,
    train_new_column,
)
from iosr.session import Phase

from test_detection import ap_brute_force, check_gradients, random_batch, random_detection_case
from test_evaluation import quantile_oracle
from test_head import head_from, separable_data, single_class_set
from test_session import explore


@pytest.fixture(scope="module")
def default_experiment():
    inputs = build_experiment_inputs({}, 7)
    base_train, base_test, new_classes, train_cfg, base_cfg, sweep_cfg, digest, _ = inputs
    start = time.perf_counter()
    report = run_incremental_experiment(
        base_train, base_test, new_classes, train_cfg, sweep_cfg, digest, base_cfg=base_cfg
    )
    elapsed = time.perf_counter() - start
    return report, elapsed


def test_loss_gradient_check_100_batches_under_5s():
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    for _ in range(100):
        batch = random_batch(rng, int(rng.integers(1, 9)))
        check_gradients(batch, tol=1e-4)
    assert time.perf_counter() - start < 5.0


def test_frozen_columns_and_exact_old_logits():
    rng = np.random.default_rng(41)
    dim, n = 32, 10
    base = head_from(rng.standard_normal((dim, n)), rng.standard_normal(n))
    grown = append_class(base, "new", TrainConfig(seed=6))
    pos_f, neg_f = separable_data(seed=2, dim=dim, n=80)
    positives = single_class_set(dim, n, "new", pos_f)
    negatives = single_class_set(dim, 0, "c0", neg_f)
    trained = train_new_column(grown, positives, negatives, TrainConfig(seed=7))

    assert trained.weights[:, :n].tobytes() == base.weights.tobytes()
    assert trained.biases[:n].tobytes() == base.biases.tobytes()
    for _ in range(1000):
        x = rng.standard_normal(dim)
        old = logits(base, x)
        new = logits(trained, x)[:n]
        assert np.array_equal(old, new)


def test_confusion_weighted_sampler_total_variation():
    rng = np.random.default_rng(55)

    def pools_for(n_classes):
        return {
            c: single_class_set(4, c, f"c{c}", rng.random((rng.integers(5, 30), 4)))
            for c in range(n_classes)
        }

    def total_variation(dist, n_classes, seed):
        drawn = sample_negatives(pools_for(n_classes), dist, 10_000, seed)
        freq = np.bincount(drawn.labels, minlength=n_classes) / 10_000
        want = np.array([p for _, p in dist.probs])
        return 0.5 * np.abs(freq - want).sum()

    assert total_variation(ConfusionDistribution(((0, 0.6), (1, 0.4))), 2, seed=1) <= 0.02
    for trial in range(10):
        raw = rng.random(8) + 0.05
        probs = raw / raw.sum()
        probs = tuple((i, float(p)) for i, p in enumerate(probs))
        dist = ConfusionDistribution(probs)
        assert total_variation(dist, 8, seed=100 + trial) <= 0.02


def test_ratio_sweep_protocol_shape(default_experiment):
    report, _ = default_experiment
    for sweep in report.sweeps:
        assert len(sweep.ratios) == 23
        assert sweep.ratios[0] == 0.05
        assert sweep.ratios[-1] == 0.49
        assert all(b > a for a, b in zip(sweep.ratios, sweep.ratios[1:]))
        s = sweep.summary
        assert (s.minimum, s.q1, s.median, s.q3, s.maximum) == quantile_oracle(sweep.accuracies)


def test_incremental_vs_batch_degradation(default_experiment):
    report, elapsed = default_experiment
    assert elapsed < 60.0
    assert len(report.sweeps) == 6
    for sweep, oracle_median in zip(report.sweeps, report.oracle_medians):
        assert abs(sweep.summary.median - oracle_median) <= 0.05
    assert report.sweeps[-1].summary.median >= report.baseline_accuracy - 0.10


def test_average_precision_equals_brute_force():
    rng = np.random.default_rng(77)
    for _ in range(500):
        dets, gts = random_detection_case(rng, max_dets=10)
        assert average_precision(dets, gts) == ap_brute_force(dets, gts)


def test_box_transform_round_trip_and_bilinear_linearity():
    rng = np.random.default_rng(31)
    for _ in range(10_000):
        anchor = BoundingBox(*rng.uniform(0, 50, 2), *rng.uniform(0.5, 30, 2))
        gt = BoundingBox(*rng.uniform(0, 50, 2), *rng.uniform(0.5, 30, 2))
        out = apply_box_transform(anchor, encode_box_transform(anchor, gt))
        assert abs(out.x - gt.x) <= 1e-9 * max(1.0, abs(gt.x))
        assert abs(out.y - gt.y) <= 1e-9 * max(1.0, abs(gt.y))
        assert abs(out.w - gt.w) <= 1e-9 * gt.w
        assert abs(out.h - gt.h) <= 1e-9 * gt.h

    for _ in range(50):
        a, b, c = rng.standard_normal(3)
        h, w = 10, 14
        ys, xs = np.mgrid[0:h, 0:w]
        fmap = a * (xs + 0.5) + b * (ys + 0.5) + c
        box = BoundingBox(
            float(rng.uniform(0.6, 2.5)), float(rng.uniform(0.6, 2.0)),
            float(rng.uniform(1.5, 9.0)), float(rng.uniform(1.5, 6.0)),
        )
        out = bilinear_resample(fmap, box, 5, 4)
        cx = box.x + (np.arange(5) + 0.5) * box.w / 5
        cy = box.y + (np.arange(4) + 0.5) * box.h / 4
        want = a * cx[None, :] + b * cy[:, None] + c
        assert np.max(np.abs(out - want)) <= 1e-9


def test_experiment_reports_are_byte_identical(tmp_path):
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert main(["experiment", "--seed", "7", "--out", str(out1)]) == 0
    assert main(["experiment", "--seed", "7", "--out", str(out2)]) == 0
    csv1 = (out1 / "experiment_seed7.csv").read_bytes()
    csv2 = (out2 / "experiment_seed7.csv").read_bytes()
    json1 = (out1 / "experiment_seed7.json").read_bytes()
    json2 = (out2 / "experiment_seed7.json").read_bytes()
    assert csv1 == csv2
    assert json1 == json2


def test_session_fsm_small_scope_exhaustive():
    # explore() asserts, for every expanded (state, event) pair, that the
    # result satisfies the invariants or is a rejected-transition error
    seen, expanded = explore(8)
    assert expanded > 0
    assert {s.phase for s in seen} == set(Phase)
    for state in seen:
        state.check_invariants()
