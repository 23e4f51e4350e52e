"""
Experiment configuration: YAML file merged over defaults, plus CLI overrides
"""

import copy
import logging
from pathlib import Path
from typing import Iterable, Optional

import yaml

from utils.numerics import ConfigurationError

logger = logging.getLogger("config")

NOISE_SITES = ("encoder_weights", "decoder_weights", "user_embedding", "hidden_layer")

DEFAULTS = {
    "seed": 2018,
    "output_dir": "runs/default",
    "logging": {"level": "INFO", "file": None},
    "dataset": {
        "name": None,
        "path": None,
        "url": None,
        "format": None,
        "columns": None,
        "rating_scale": None,
        "threshold": None,
        "mode": None,
        "dedupe": None,
    },
    "split": {"seed": 2018, "n_neg": 200, "validation_seed": 2019, "file": "split.txt"},
    "model": {
        "hidden_dim": 64,
        "encoder_act": "sigmoid",
        "decoder_act": "identity",
        "input_corruption": 0.0,
    },
    "gamma": 1e-4,
    "pretrain": {
        "learning_rate": 0.01,
        "batch_size": 128,
        "max_epochs": 500,
        "init_std": 0.01,
        "eval_every": 1,
        "early_stop_patience": 10,
        "seed": 2018,
    },
    "adversarial": {
        "epsilon": 1.0,
        "lambdas": {"decoder_weights": 1.0},
        "adagrad_base_rate": 0.01,
        "batch_size": 128,
        "max_epochs": 1000,
        "eval_every": 1,
        "early_stop_patience": 10,
        "seed": 2020,
    },
    "evaluation": {"ns": [5, 10], "batch_users": 512},
    "probe": {
        "sites": list(NOISE_SITES),
        "kinds": ["gaussian", "adversarial"],
        "eps_grid": [0, 0.5, 1, 2, 4, 8, 15],
        "trials": 10,
        "seed": 7,
        "reference_epsilon": 8.0,
    },
    "sweep": {"grid": {}, "workers": 1},
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key not in ("lambdas", "grid"):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_override(config: dict, assignment: str):
    """Apply one `section.key=value` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigurationError(f"override '{assignment}' must look like section.key=value")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    node = config
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override '{dotted}' walks into a non-section value")
    node[keys[-1]] = yaml.safe_load(raw)


def validate_config(config: dict):
    pre = config["pretrain"]
    adv = config["adversarial"]
    model = config["model"]
    problems = []
    if not pre["learning_rate"] > 0:
        problems.append("pretrain.learning_rate must be > 0")
    for section, cfg in (("pretrain", pre), ("adversarial", adv)):
        if int(cfg["batch_size"]) < 1:
            problems.append(f"{section}.batch_size must be >= 1")
        if int(cfg["early_stop_patience"]) < 1:
            problems.append(f"{section}.early_stop_patience must be >= 1")
        if int(cfg["eval_every"]) < 1:
            problems.append(f"{section}.eval_every must be >= 1")
        if int(cfg["max_epochs"]) < 0:
            problems.append(f"{section}.max_epochs must be >= 0")
    if not adv["adagrad_base_rate"] > 0:
        problems.append("adversarial.adagrad_base_rate must be > 0")
    if adv["epsilon"] < 0:
        problems.append("adversarial.epsilon must be >= 0")
    for site, lam in (adv.get("lambdas") or {}).items():
        if site not in NOISE_SITES:
            problems.append(f"adversarial.lambdas: unknown site '{site}'")
        elif lam < 0:
            problems.append(f"adversarial.lambdas.{site} must be >= 0")
    for key in ("encoder_act", "decoder_act"):
        if model[key] not in ("sigmoid", "identity"):
            problems.append(f"model.{key} must be sigmoid or identity")
    if int(model["hidden_dim"]) < 1:
        problems.append("model.hidden_dim must be >= 1")
    if not 0 <= float(model["input_corruption"]) < 1:
        problems.append("model.input_corruption must be in [0, 1)")
    if config["gamma"] < 0:
        problems.append("gamma must be >= 0")
    if int(config["split"]["n_neg"]) < 1:
        problems.append("split.n_neg must be >= 1")
    for site in config["probe"]["sites"]:
        if site not in NOISE_SITES:
            problems.append(f"probe.sites: unknown site '{site}'")
    for kind in config["probe"]["kinds"]:
        if kind not in ("gaussian", "adversarial"):
            problems.append(f"probe.kinds: unknown kind '{kind}'")
    if int(config["probe"]["trials"]) < 1:
        problems.append("probe.trials must be >= 1")
    if problems:
        raise ConfigurationError("invalid configuration: " + "; ".join(problems))


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                seed: Optional[int] = None, out_dir: Optional[str] = None) -> dict:
    file_cfg = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                file_cfg = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigurationError(f"cannot read config file {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigurationError(f"config file {path} is not valid YAML: {e}") from e
        if not isinstance(file_cfg, dict):
            raise ConfigurationError(f"config file {path} must hold a mapping at top level")

    config = _deep_merge(DEFAULTS, file_cfg)
    for assignment in overrides or ():
        apply_override(config, assignment)

    # --seed reseeds every stage; per-stage seeds stay distinct
    if seed is not None:
        config["seed"] = int(seed)
        config["split"]["seed"] = int(seed)
        config["split"]["validation_seed"] = int(seed) + 1
        config["pretrain"]["seed"] = int(seed) + 2
        config["adversarial"]["seed"] = int(seed) + 3
        config["probe"]["seed"] = int(seed) + 4
    if out_dir:
        config["output_dir"] = out_dir

    validate_config(config)
    return config


def require_dataset_path(config: dict) -> Path:
    path = config["dataset"].get("path")
    if not path:
        raise ConfigurationError("dataset.path is required (set it in the config file or with --set dataset.path=...)")
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"dataset file not found: {path}")
    return path


def write_resolved_config(config: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "resolved_config.yaml"
    with open(target, "w", encoding="utf-8") as f:
        yaml.safe_dump(config, f, default_flow_style=False, sort_keys=True)
    logger.debug(f"Wrote resolved config to {target}")
    return target
