"""INI-file configuration shared by every CLI subcommand.

One human-readable file, six sections. Every key has a default, so an empty
(or absent) file is a complete configuration; unknown sections or keys are
rejected rather than silently ignored. CONFIG_HELP below is the authoritative
key reference and is printed as part of the CLI help text.
"""

from __future__ import annotations

import configparser
from typing import Optional

from pcadv.attacks import AttackConfig, METHODS as ATTACK_METHODS, POSTPROCESS_MODES
from pcadv.datasets import DEFAULT_CLASSES, DatasetSpec
from pcadv.defenses import DEFENSE_METHODS, DefenseConfig
from pcadv.network import TrainConfig

DEFAULT_ATTACK_LIST = (
    "none,fast_sign,fast_l2_global,iter_l2_global,fast_l2_point,iter_l2_point,"
    "iter_l2_global+clip_norms,iter_l2_global+project_to_mesh,jsma"
)
DEFAULT_DEFENSE_LIST = "none,remove_outliers,remove_salient,adversarial_training"

DEFAULTS = {
    "dataset": {
        "source": "synthetic",
        "classes": ",".join(DEFAULT_CLASSES),
        "samples_per_class": "50",
        "points_per_cloud": "1024",
        "seed": "0",
        "train_split": "0.8",
        "off_root": "",
    },
    "model": {
        "point_widths": "64,64,128,256",
        "head_widths": "128,64",
        "init_seed": "0",
    },
    "train": {
        "epochs": "40",
        "batch_size": "16",
        "learning_rate": "0.02",
        "seed": "0",
        "adversarial_epsilon": "",
    },
    "attacks": {
        "methods": DEFAULT_ATTACK_LIST,
        "epsilon": "",
        "iterations": "10",
    },
    "defenses": {
        "methods": DEFAULT_DEFENSE_LIST,
        "knn_k": "10",
        "stddev_epsilon": "1.0",
        "salient_count": "",
        "adv_train_epsilon": "1.0",
    },
    "report": {
        "output_dir": "reports",
        "write_csv": "true",
        "write_json": "true",
    },
}

CONFIG_HELP = """\
configuration file keys (INI format; every key optional, defaults shown):

[dataset]
  source            synthetic | off_directory            (synthetic)
  classes           comma list of class names            (sphere,box,cylinder,
                    for synthetic: generator names        cone,torus,pyramid,
                    for off_directory: subdirectories     capsule,grid)
  samples_per_class instances per class                  (50)
  points_per_cloud  points sampled per cloud             (1024)
  seed              dataset generation seed              (0)
  train_split       train fraction, strictly in (0,1)    (0.8)
  off_root          mesh directory for off_directory     (empty)

[model]
  point_widths      per-point MLP widths, comma list     (64,64,128,256)
  head_widths       classifier head hidden widths        (128,64)
  init_seed         weight initialization seed           (0)

[train]
  epochs            SGD epochs                           (40)
  batch_size        minibatch size                       (16)
  learning_rate     SGD step size                        (0.02)
  seed              shuffle seed                         (0)
  adversarial_epsilon  empty = plain training; a number
                    enables adversarial training with
                    that whole-cloud L2 step size        (empty)

[attacks]
  methods           comma list of attack specs, each
                    "none" or "method[+postprocess]";
                    methods: fast_sign iter_sign
                    fast_l2_global iter_l2_global
                    fast_l2_point iter_l2_point jsma;
                    postprocess: clip_norms
                    project_to_mesh                      (none,fast_sign,
                                                          fast_l2_global,...)
  epsilon           override step size for every attack;
                    empty = per-method default (1.0
                    l2_global, 0.05 l2_point, 0.5 jsma,
                    0.05 sign, 5.0 targeted l2_global)   (empty)
  iterations        rounds for iterative methods         (10)

[defenses]
  methods           comma list from: none
                    remove_outliers remove_salient
                    adversarial_training                 (all four)
  knn_k             neighbor count for outlier stats     (10)
  stddev_epsilon    outlier threshold multiplier         (1.0)
  salient_count     points dropped by remove_salient;
                    empty = ceil(N/10)                   (empty)
  adv_train_epsilon step size for adversarial training   (1.0)

[report]
  output_dir        where reports land                   (reports)
  write_csv         emit CSV matrices                    (true)
  write_json        emit JSON reports                    (true)
"""


def default_config() -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULTS)
    return parser


def load_config(path: Optional[str] = None) -> configparser.ConfigParser:
    """Defaults overlaid with the file at `path`; typos are errors."""
    parser = default_config()
    if path is not None:
        probe = configparser.ConfigParser()
        with open(path) as handle:
            probe.read_file(handle)
        for section in probe.sections():
            if section not in DEFAULTS:
                raise ValueError(f"unknown config section [{section}]")
            for key in probe[section]:
                if key not in DEFAULTS[section]:
                    raise ValueError(f"unknown config key {key!r} in [{section}]")
        parser.read_dict({s: dict(probe[s]) for s in probe.sections()})
    return parser


def _csv_list(raw: str):
    return tuple(item.strip() for item in raw.split(",") if item.strip())


def _optional_float(raw: str) -> Optional[float]:
    raw = raw.strip()
    return float(raw) if raw else None


def _optional_int(raw: str) -> Optional[int]:
    raw = raw.strip()
    return int(raw) if raw else None


def dataset_spec(config: configparser.ConfigParser) -> DatasetSpec:
    section = config["dataset"]
    return DatasetSpec(
        source=section.get("source"),
        classes=_csv_list(section.get("classes")),
        samples_per_class=section.getint("samples_per_class"),
        points_per_cloud=section.getint("points_per_cloud"),
        seed=section.getint("seed"),
        train_split=section.getfloat("train_split"),
        off_root=section.get("off_root") or None,
    )


def model_widths(config: configparser.ConfigParser):
    section = config["model"]
    point_widths = tuple(int(w) for w in _csv_list(section.get("point_widths")))
    head_widths = tuple(int(w) for w in _csv_list(section.get("head_widths")))
    if not point_widths:
        raise ValueError("point_widths must name at least one layer width")
    return point_widths, head_widths, section.getint("init_seed")


def train_config(config: configparser.ConfigParser) -> TrainConfig:
    section = config["train"]
    return TrainConfig(
        epochs=section.getint("epochs"),
        batch_size=section.getint("batch_size"),
        learning_rate=section.getfloat("learning_rate"),
        seed=section.getint("seed"),
        adversarial_epsilon=_optional_float(section.get("adversarial_epsilon")),
    )


def parse_attack_spec(
    spec: str,
    epsilon: Optional[float] = None,
    iterations: int = 10,
    target: Optional[int] = None,
) -> tuple:
    """One list entry: "none" or "method[+postprocess]" -> (name, config)."""
    spec = spec.strip()
    if spec == "none":
        return spec, None
    method, _, postprocess = spec.partition("+")
    if method not in ATTACK_METHODS:
        raise ValueError(f"unknown attack method {method!r} in spec {spec!r}")
    if postprocess and postprocess not in POSTPROCESS_MODES:
        raise ValueError(f"unknown postprocess {postprocess!r} in spec {spec!r}")
    return spec, AttackConfig(
        method=method,
        epsilon=epsilon,
        iterations=iterations,
        target=target,
        postprocess=postprocess or "none",
    )


def attack_list(config: configparser.ConfigParser):
    section = config["attacks"]
    epsilon = _optional_float(section.get("epsilon"))
    iterations = section.getint("iterations")
    return [
        parse_attack_spec(spec, epsilon=epsilon, iterations=iterations)
        for spec in _csv_list(section.get("methods"))
    ]


def defense_list(config: configparser.ConfigParser):
    section = config["defenses"]
    defenses = []
    for method in _csv_list(section.get("methods")):
        if method not in DEFENSE_METHODS:
            raise ValueError(f"unknown defense method {method!r}")
        defenses.append(
            (
                method,
                DefenseConfig(
                    method=method,
                    k=section.getint("knn_k"),
                    stddev_epsilon=section.getfloat("stddev_epsilon"),
                    salient_count=_optional_int(section.get("salient_count")),
                    adv_train_epsilon=section.getfloat("adv_train_epsilon"),
                ),
            )
        )
    return defenses


def report_options(config: configparser.ConfigParser):
    section = config["report"]
    return {
        "output_dir": section.get("output_dir"),
        "write_csv": section.getboolean("write_csv"),
        "write_json": section.getboolean("write_json"),
    }
