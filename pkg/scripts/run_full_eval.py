#!/usr/bin/env python3
"""Full desk-scale evaluation: train three models, run the attack x defense
matrix, transfer rates, the targeted heatmap, and export example clouds.

    python3 scripts/run_full_eval.py --config configs/desk.ini --out-dir runs/full

Takes ~5 minutes on one core at the desk scale; --quick shrinks everything
for a smoke run (~20 seconds).
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import pcadv.network as net
from pcadv import config as cfg
from pcadv.attacks import AttackConfig, run_attack
from pcadv.datasets import build_dataset
from pcadv.experiments import (
    export_cloud_ply,
    export_heatmap_csv,
    export_matrix_csv,
    export_report_json,
    run_matrix,
    targeted_heatmap,
    transfer_eval,
)

# second low-learning-rate phase settles the oscillation SGD leaves at the end
PLAIN_PLAN = ((20, 0.02), (8, 0.004))
ADV_PLAN = ((25, 0.02), (8, 0.004))
QUICK_PLAN = ((8, 0.05),)


def train_model(dataset, base_config, init_seed, widths, plan, adversarial_epsilon=None):
    point_widths, head_widths, _ = widths
    model = net.init_model(
        len(dataset.class_names), point_widths, head_widths, seed=init_seed
    )
    log = []
    t0 = time.perf_counter()
    for epochs, lr in plan:
        phase = replace(
            base_config,
            epochs=epochs,
            learning_rate=lr,
            adversarial_epsilon=adversarial_epsilon,
        )
        model, phase_log = net.train(
            model, dataset.train_clouds, phase, val_clouds=dataset.test_clouds
        )
        log.extend(phase_log)
    mode = "adversarial" if adversarial_epsilon is not None else "plain"
    print(
        f"  {mode} model (init seed {init_seed}): {time.perf_counter() - t0:.0f}s, "
        f"test acc {log[-1].val_acc:.3f}"
    )
    return model, log


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/desk.ini")
    parser.add_argument("--out-dir", default="runs/full_eval")
    parser.add_argument("--quick", action="store_true", help="tiny smoke-run variant")
    args = parser.parse_args(argv)

    config = cfg.load_config(args.config)
    spec = cfg.dataset_spec(config)
    widths = cfg.model_widths(config)
    train_base = cfg.train_config(config)
    if args.quick:
        spec = replace(spec, samples_per_class=12, points_per_cloud=64)
        widths = ((16, 32), (16,), widths[2])
    plain_plan = QUICK_PLAN if args.quick else PLAIN_PLAN
    adv_plan = QUICK_PLAN if args.quick else ADV_PLAN

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    print(f"building dataset ({spec.samples_per_class} samples x {len(spec.classes)} classes)")
    dataset = build_dataset(spec)

    print("training")
    adv_train_epsilon = config["defenses"].getfloat("adv_train_epsilon")
    model, log = train_model(dataset, train_base, 0, widths, plain_plan)
    model_b, _ = train_model(dataset, train_base, 1, widths, plain_plan)
    adv_model, _ = train_model(
        dataset, train_base, 0, widths, adv_plan, adversarial_epsilon=adv_train_epsilon
    )
    net.save_checkpoint(model, out / "model.ckpt")
    net.save_checkpoint(model_b, out / "model_b.ckpt")
    net.save_checkpoint(adv_model, out / "adv_model.ckpt")
    net.write_training_log(log, out / "train_log.csv")

    print("attack x defense matrix")
    t0 = time.perf_counter()
    attacks = cfg.attack_list(config)
    defenses = cfg.defense_list(config)
    report = run_matrix(model, dataset.test, attacks, defenses, adv_model=adv_model)
    export_matrix_csv(report, out / "matrix.csv")
    export_report_json(report, out / "matrix.json")
    print(f"  {time.perf_counter() - t0:.0f}s, clean accuracy {report.clean_accuracy:.3f}")
    for a_idx, attack_name in enumerate(report.attack_names):
        cells = "  ".join(
            f"{d}={report.error_rates[a_idx, i]:.3f}"
            for i, d in enumerate(report.defense_names)
        )
        print(f"  {attack_name:<32} {cells}")

    print("transfer (model -> model_b)")
    for tag, attack_config in (
        ("fast_l2_global", AttackConfig("fast_l2_global")),
        ("iter_l2_global", AttackConfig("iter_l2_global", epsilon=0.05)),
    ):
        transfer = transfer_eval(
            model, model_b, attack_config, dataset.test,
            source_id="model", target_id="model_b", attack_name=tag,
        )
        export_report_json(transfer, out / f"transfer_{tag}.json")
        print(
            f"  {tag}: {transfer.transferred_count}/{transfer.source_success_count}"
            f" = {transfer.transfer_rate:.3f}"
        )

    print("targeted heatmap")
    t0 = time.perf_counter()
    heatmap = targeted_heatmap(model, dataset.test, class_names=spec.classes)
    export_heatmap_csv(heatmap, out / "heatmap.csv")
    export_report_json(heatmap, out / "heatmap.json")
    print(
        f"  {time.perf_counter() - t0:.0f}s, mean success "
        f"{heatmap.mean_success_rate:.3f}, mean confidence {heatmap.mean_confidence:.3f}"
    )

    # one example adversarial cloud per attack, from the first eligible sample
    eligible = next(
        s for s in dataset.test if net.predict(model, s.cloud)[0] == s.cloud.label
    )
    for name, attack_config in attacks:
        if attack_config is None:
            continue
        if attack_config.postprocess == "project_to_mesh":
            attack_config = replace(attack_config, mesh=eligible.mesh)
        result = run_attack(model, eligible.cloud, eligible.cloud.label, attack_config)
        export_cloud_ply(result, out / f"example_{name.replace('+', '_')}.ply")
    print(f"reports and example clouds in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
