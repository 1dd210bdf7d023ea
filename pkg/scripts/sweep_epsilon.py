#!/usr/bin/env python3
"""Success rate and perceptibility versus step size for one attack method.

    python3 scripts/sweep_epsilon.py --model runs/full_eval/model.ckpt \
        --method iter_l2_global --epsilons 0.02,0.05,0.1,0.2,0.5,1.0

Writes a CSV (epsilon, success_rate, mean_perceptibility) and prints the
table. Uses the dataset from --config, so the sweep runs on exactly the
clouds the checkpoint was evaluated on.
"""

import argparse
import csv
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import pcadv.network as net
from pcadv import config as cfg
from pcadv.attacks import AttackConfig, run_attack
from pcadv.datasets import build_dataset


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/desk.ini")
    parser.add_argument("--model", required=True, help="checkpoint to attack")
    parser.add_argument("--method", default="iter_l2_global")
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument(
        "--epsilons", default="0.02,0.05,0.1,0.2,0.5,1.0",
        help="comma-separated step sizes",
    )
    parser.add_argument("--out", default=None, help="CSV path (default: stdout only)")
    args = parser.parse_args(argv)

    config = cfg.load_config(args.config)
    dataset = build_dataset(cfg.dataset_spec(config))
    model = net.load_checkpoint(args.model)
    epsilons = [float(e) for e in args.epsilons.split(",") if e.strip()]

    eligible = [
        s.cloud for s in dataset.test
        if net.predict(model, s.cloud)[0] == s.cloud.label
    ]
    print(f"{len(eligible)} eligible clouds; method {args.method}")
    print(f"{'epsilon':>8} {'success':>8} {'perceptibility':>15} {'seconds':>8}")
    rows = []
    for epsilon in epsilons:
        attack = AttackConfig(args.method, epsilon=epsilon, iterations=args.iterations)
        t0 = time.perf_counter()
        fooled = 0
        perceptibility = 0.0
        for cloud in eligible:
            result = run_attack(model, cloud, cloud.label, attack)
            fooled += result.success
            perceptibility += result.perceptibility
        rate = fooled / len(eligible)
        mean_size = perceptibility / len(eligible)
        rows.append((epsilon, rate, mean_size))
        print(f"{epsilon:>8} {rate:>8.3f} {mean_size:>15.4f} {time.perf_counter() - t0:>8.1f}")

    if args.out:
        with open(args.out, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epsilon", "success_rate", "mean_perceptibility"])
            for epsilon, rate, mean_size in rows:
                writer.writerow([repr(epsilon), repr(rate), repr(mean_size)])
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
