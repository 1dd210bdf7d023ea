"""Command-line front end: dataset / train / attack / matrix / transfer / heatmap.

Every subcommand reads the same INI config (--config, all keys optional) and
takes a handful of flag overrides for the values people actually sweep. All
heavy lifting lives in the library modules; this file is plumbing only.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from pcadv import attacks, config as cfg, datasets, experiments, network
from pcadv.geometry import write_ply


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcadv",
        description="adversarial attacks and defenses on point-cloud classifiers",
        epilog=cfg.CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, handler):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="INI config file")
        p.set_defaults(handler=handler)
        return p

    p = add("dataset", "generate or load a dataset and print a summary", _cmd_dataset)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--samples-per-class", type=int, default=None)
    p.add_argument("--points-per-cloud", type=int, default=None)
    p.add_argument("--manifest", default=None, help="write a JSON summary here")

    p = add("train", "train a classifier and save a checkpoint", _cmd_train)
    p.add_argument("--out", default="model.ckpt", help="checkpoint path")
    p.add_argument("--log", default=None, help="per-epoch CSV log path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None, help="shuffle seed")
    p.add_argument(
        "--adversarial-epsilon",
        type=float,
        default=None,
        help="enable adversarial training with this step size",
    )

    p = add("attack", "craft one adversarial cloud and export it", _cmd_attack)
    p.add_argument("--model", required=True, help="checkpoint to attack")
    p.add_argument("--index", type=int, default=0, help="test-set cloud index")
    p.add_argument("--method", default="fast_l2_global", help="attack spec, e.g. iter_l2_global+clip_norms")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--target", type=int, default=None, help="target class index")
    p.add_argument("--out-dir", default=None, help="override [report] output_dir")

    p = add("matrix", "full attack x defense evaluation matrix", _cmd_matrix)
    p.add_argument("--model", required=True, help="checkpoint to evaluate")
    p.add_argument(
        "--adv-model",
        default=None,
        help="adversarially trained checkpoint (needed by the adversarial_training defense)",
    )
    p.add_argument("--out-dir", default=None, help="override [report] output_dir")

    p = add("transfer", "craft on model A, re-evaluate successes on model B", _cmd_transfer)
    p.add_argument("--model-a", required=True, help="source checkpoint (crafting)")
    p.add_argument("--model-b", required=True, help="target checkpoint (evaluation)")
    p.add_argument("--method", default="fast_l2_global", help="attack spec")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--out", default=None, help="JSON report path")

    p = add("heatmap", "targeted-attack success rates per (target, true) pair", _cmd_heatmap)
    p.add_argument("--model", required=True, help="checkpoint to attack")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--out-dir", default=None, help="override [report] output_dir")

    return parser


def _load(args):
    config = cfg.load_config(args.config)
    spec = cfg.dataset_spec(config)
    return config, spec


def _dataset(spec) -> datasets.Dataset:
    return datasets.build_dataset(spec)


def _require_class_match(model, spec):
    if model.class_count != len(spec.classes):
        raise ValueError(
            f"checkpoint has {model.class_count} classes but the dataset "
            f"defines {len(spec.classes)}"
        )


def _out_dir(config, override) -> Path:
    options = cfg.report_options(config)
    path = Path(override if override is not None else options["output_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _attack_config(args, config, target=None) -> tuple:
    section = config["attacks"]
    iterations = args.iterations if args.iterations is not None else section.getint("iterations")
    epsilon = args.epsilon
    if epsilon is None:
        raw = section.get("epsilon").strip()
        epsilon = float(raw) if raw else None
    name, attack_config = cfg.parse_attack_spec(
        args.method, epsilon=epsilon, iterations=iterations, target=target
    )
    if attack_config is None:
        raise ValueError("method 'none' is only meaningful inside the matrix command")
    return name, attack_config


def _cmd_dataset(args) -> int:
    config, spec = _load(args)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.samples_per_class is not None:
        spec = replace(spec, samples_per_class=args.samples_per_class)
    if args.points_per_cloud is not None:
        spec = replace(spec, points_per_cloud=args.points_per_cloud)
    dataset = _dataset(spec)
    summary = {
        "source": spec.source,
        "classes": list(dataset.class_names),
        "train_count": len(dataset.train),
        "test_count": len(dataset.test),
        "points_per_cloud": int(dataset.train[0].cloud.points.shape[0]),
        "seed": spec.seed,
    }
    if args.manifest is not None:
        with open(args.manifest, "w") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")
    for key, value in summary.items():
        print(f"{key}: {value}")
    return 0


def _cmd_train(args) -> int:
    config, spec = _load(args)
    train_cfg = cfg.train_config(config)
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "seed": args.seed,
        "adversarial_epsilon": args.adversarial_epsilon,
    }
    fields = {k: v for k, v in overrides.items() if v is not None}
    if fields:
        train_cfg = replace(train_cfg, **fields)

    dataset = _dataset(spec)
    point_widths, head_widths, init_seed = cfg.model_widths(config)
    model = network.init_model(len(spec.classes), point_widths, head_widths, seed=init_seed)
    trained, log = network.train(
        model, dataset.train_clouds, train_cfg, val_clouds=dataset.test_clouds
    )
    network.save_checkpoint(trained, args.out)
    if args.log is not None:
        network.write_training_log(log, args.log)
    last = log[-1]
    mode = "adversarial" if train_cfg.adversarial_epsilon is not None else "plain"
    print(f"trained {mode} model for {len(log)} epochs -> {args.out}")
    print(
        f"final epoch: loss {last.train_loss:.4f}, "
        f"train acc {last.train_acc:.3f}, test acc {last.val_acc:.3f}"
    )
    return 0


def _cmd_attack(args) -> int:
    config, spec = _load(args)
    dataset = _dataset(spec)
    if not 0 <= args.index < len(dataset.test):
        raise ValueError(f"--index {args.index} outside test set of {len(dataset.test)}")
    sample = dataset.test[args.index]
    model = network.load_checkpoint(args.model)
    _require_class_match(model, spec)

    name, attack_config = _attack_config(args, config, target=args.target)
    if attack_config.postprocess == "project_to_mesh" and attack_config.mesh is None:
        attack_config = replace(attack_config, mesh=sample.mesh)
    result = attacks.run_attack(model, sample.cloud, sample.cloud.label, attack_config)

    out = _out_dir(config, args.out_dir)
    experiments.export_cloud_ply(result, out / "adversarial.ply")
    write_ply(out / "clean.ply", result.clean.points)
    summary = {
        "attack": name,
        "class": sample.class_name,
        "label": sample.cloud.label,
        "clean_prediction": list(result.clean_prediction),
        "adv_prediction": list(result.adv_prediction),
        "success": result.success,
        "perceptibility": result.perceptibility,
        "epsilon": attack_config.epsilon,
        "iterations": attack_config.iterations,
        "target": attack_config.target,
    }
    with open(out / "attack.json", "w") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(
        f"{name}: predicted {result.clean_prediction[0]} -> {result.adv_prediction[0]} "
        f"(label {sample.cloud.label}, success={result.success}, "
        f"perceptibility {result.perceptibility:.4f})"
    )
    print(f"wrote {out / 'clean.ply'}, {out / 'adversarial.ply'}, {out / 'attack.json'}")
    return 0


def _cmd_matrix(args) -> int:
    config, spec = _load(args)
    dataset = _dataset(spec)
    model = network.load_checkpoint(args.model)
    _require_class_match(model, spec)
    adv_model = None
    if args.adv_model is not None:
        adv_model = network.load_checkpoint(args.adv_model)
        _require_class_match(adv_model, spec)

    report = experiments.run_matrix(
        model,
        dataset.test,
        cfg.attack_list(config),
        cfg.defense_list(config),
        adv_model=adv_model,
    )

    options = cfg.report_options(config)
    out = _out_dir(config, args.out_dir)
    written = []
    if options["write_csv"]:
        experiments.export_matrix_csv(report, out / "matrix.csv")
        written.append(out / "matrix.csv")
    if options["write_json"]:
        experiments.export_report_json(report, out / "matrix.json")
        written.append(out / "matrix.json")

    print(f"clean accuracy {report.clean_accuracy:.3f} "
          f"({report.eligible_count}/{report.test_count} clouds eligible)")
    width = max(len(a) for a in report.attack_names) + 2
    columns = [max(len(d), 6) for d in report.defense_names]
    print("error rates (rows = attacks, columns = defenses):")
    print(" " * width + "  ".join(f"{d:>{w}}" for d, w in zip(report.defense_names, columns)))
    for a_idx, attack_name in enumerate(report.attack_names):
        cells = "  ".join(f"{report.error_rates[a_idx, d_idx]:>{w}.3f}"
                          for d_idx, w in enumerate(columns))
        print(f"{attack_name:<{width}}{cells}")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_transfer(args) -> int:
    config, spec = _load(args)
    dataset = _dataset(spec)
    model_a = network.load_checkpoint(args.model_a)
    model_b = network.load_checkpoint(args.model_b)
    _require_class_match(model_a, spec)
    _require_class_match(model_b, spec)

    section = config["attacks"]
    iterations = args.iterations if args.iterations is not None else section.getint("iterations")
    epsilon = args.epsilon
    if epsilon is None:
        raw = section.get("epsilon").strip()
        epsilon = float(raw) if raw else None
    name, attack_config = cfg.parse_attack_spec(args.method, epsilon=epsilon, iterations=iterations)
    if attack_config is None:
        raise ValueError("transfer needs a real attack, not 'none'")

    report = experiments.transfer_eval(
        model_a,
        model_b,
        attack_config,
        dataset.test,
        source_id=str(args.model_a),
        target_id=str(args.model_b),
        attack_name=name,
    )
    out_path = args.out
    if out_path is None:
        out_path = _out_dir(config, None) / "transfer.json"
    experiments.export_report_json(report, out_path)
    if report.statistically_empty:
        print(f"{name}: no successes on the source model; transfer rate undefined")
    else:
        print(
            f"{name}: transfer rate {report.transfer_rate:.3f} "
            f"({report.transferred_count}/{report.source_success_count} source successes, "
            f"{report.eligible_count} eligible clouds)"
        )
    print(f"wrote {out_path}")
    return 0


def _cmd_heatmap(args) -> int:
    config, spec = _load(args)
    dataset = _dataset(spec)
    model = network.load_checkpoint(args.model)
    _require_class_match(model, spec)

    section = config["attacks"]
    attack_config = None
    if args.epsilon is not None or args.iterations is not None:
        iterations = args.iterations if args.iterations is not None else section.getint("iterations")
        attack_config = attacks.AttackConfig(
            method="iter_l2_global",
            epsilon=args.epsilon if args.epsilon is not None else 5.0,
            iterations=iterations,
        )

    heatmap = experiments.targeted_heatmap(
        model, dataset.test, attack_config=attack_config, class_names=spec.classes
    )
    options = cfg.report_options(config)
    out = _out_dir(config, args.out_dir)
    written = []
    if options["write_csv"]:
        experiments.export_heatmap_csv(heatmap, out / "heatmap.csv")
        written.append(out / "heatmap.csv")
    if options["write_json"]:
        experiments.export_report_json(heatmap, out / "heatmap.json")
        written.append(out / "heatmap.json")
    confidence = "n/a" if math.isnan(heatmap.mean_confidence) else f"{heatmap.mean_confidence:.3f}"
    print(
        f"targeted success {heatmap.mean_success_rate:.3f} over "
        f"{int(heatmap.attempts.sum())} attempts, mean confidence {confidence}"
    )
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
