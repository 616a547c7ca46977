#!/usr/bin/env python3
"""Spin up a self-contained teaching service on synthetic data.

Synthesizes a desk-scale corpus, batch-trains the base head, runs the
incremental experiment once so /metrics/experiment has data, and serves.
The web console in frontend/ can then be pointed at this service.
"""

import argparse
import json
import sys

from iosr.cli import build_experiment_inputs
from iosr.evaluation import (
    batch_retrain_oracle,
    joint_train_config,
    report_to_json,
    run_incremental_experiment,
)
from iosr.head import TrainConfig
from iosr.seeding import derive_seed
from iosr.service import TeachingEngine, serve


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bind", default="127.0.0.1:8077")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--world-samples", type=int, default=24)
    args = parser.parse_args()

    base_train, base_test, new_classes, train_cfg, base_cfg, sweep_cfg, digest, master = (
        build_experiment_inputs({}, args.seed)
    )
    report = run_incremental_experiment(
        base_train, base_test, new_classes, train_cfg, sweep_cfg, digest, base_cfg=base_cfg
    )
    head = batch_retrain_oracle(
        base_train, joint_train_config(seed=derive_seed(base_cfg.seed, 0)), digest
    )
    engine = TeachingEngine(
        head,
        base_train.per_class(),
        TrainConfig(seed=derive_seed(master, 42)),
        world=base_test.subset(range(args.world_samples)),
        experiment_report=json.loads(report_to_json(report)),
    )
    print(f"serving {head.n_classes} base classes on {args.bind}")
    serve(engine, args.bind)
    return 0


if __name__ == "__main__":
    sys.exit(main())
