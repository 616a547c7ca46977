#!/usr/bin/env python3
"""Run the default incremental-teaching experiment and print a summary table.

Equivalent to `iosr experiment --seed <seed> --out <out>`, plus a compact
per-step view of what the ratio sweep measured.
"""

import argparse
import sys

from iosr.cli import build_experiment_inputs, _load_config
from iosr.evaluation import run_incremental_experiment, write_report_files


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default="reports")
    args = parser.parse_args()

    config = _load_config(args.config)
    base_train, base_test, new_classes, train_cfg, base_cfg, sweep_cfg, digest, master = (
        build_experiment_inputs(config, args.seed)
    )
    report = run_incremental_experiment(
        base_train, base_test, new_classes, train_cfg, sweep_cfg, digest, base_cfg=base_cfg
    )
    csv_path, json_path = write_report_files(report, args.out, master)

    print(f"baseline top-1 accuracy: {report.baseline_accuracy:.4f}")
    print(f"{'step':>4} {'class':<10} {'median':>8} {'q1':>8} {'q3':>8} "
          f"{'anchor@' + str(report.sweeps[0].anchor_ratio if report.sweeps else 0.1):>10} {'oracle':>8}")
    for i, sweep in enumerate(report.sweeps, start=1):
        s = sweep.summary
        print(
            f"{i:>4} {sweep.class_name:<10} {s.median:>8.4f} {s.q1:>8.4f} {s.q3:>8.4f} "
            f"{sweep.anchor_accuracy:>10.4f} {report.oracle_medians[i - 1]:>8.4f}"
        )
    print(f"reports: {csv_path} {json_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
