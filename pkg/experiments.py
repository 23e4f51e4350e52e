"""
Hyper-parameter grid sweeps over a shared pre-trained model
"""

import copy
import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import yaml

from data.interactions import BinaryDataset
from data.splits import SplitSpec
from evaluation import evaluate
from model import ModelParams
from trainer import AdvConfig, PretrainConfig, Trainer, save_checkpoint
from utils.numerics import ConfigurationError
from utils.trace_logger import TrainingTraceLogger

logger = logging.getLogger("experiments")

SWEEP_HEADER = ["param", "value", "hr5", "ndcg5"]

# Keys that only change the adversarial stage: grid points warm-start from one pre-trained model
ADVERSARIAL_KEYS = {
    "epsilon": ("adversarial", "epsilon"),
    "lambda_encoder": ("adversarial", "lambdas", "encoder_weights"),
    "lambda_decoder": ("adversarial", "lambdas", "decoder_weights"),
    "lambda_embedding": ("adversarial", "lambdas", "user_embedding"),
    "lambda_hidden": ("adversarial", "lambdas", "hidden_layer"),
    "adagrad_base_rate": ("adversarial", "adagrad_base_rate"),
}
# Keys that change the pre-trained model itself
PRETRAIN_KEYS = {
    "gamma": ("gamma",),
    "hidden_dim": ("model", "hidden_dim"),
    "encoder_act": ("model", "encoder_act"),
    "decoder_act": ("model", "decoder_act"),
    "learning_rate": ("pretrain", "learning_rate"),
    "input_corruption": ("model", "input_corruption"),
}


def parse_grid(assignments: Sequence[str]) -> Dict[str, list]:
    """`epsilon=0.1,0.5,1` style assignments into {param: [values]}."""
    grid = {}
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigurationError(f"grid entry '{assignment}' must look like param=v1,v2,...")
        name, raw = assignment.split("=", 1)
        grid[name.strip()] = [yaml.safe_load(v) for v in raw.split(",") if v.strip()]
    return grid


def expand_grid(grid: Dict[str, list]) -> List[Dict[str, object]]:
    unknown = set(grid) - set(ADVERSARIAL_KEYS) - set(PRETRAIN_KEYS)
    if unknown:
        raise ConfigurationError(
            f"unknown sweep parameters {sorted(unknown)}; known: {sorted(ADVERSARIAL_KEYS) + sorted(PRETRAIN_KEYS)}"
        )
    if not grid or any(not values for values in grid.values()):
        raise ConfigurationError("sweep grid is empty")
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def point_config(config: dict, point: Dict[str, object]) -> dict:
    cfg = copy.deepcopy(config)
    for name, value in point.items():
        path = ADVERSARIAL_KEYS.get(name) or PRETRAIN_KEYS[name]
        node = cfg
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    return cfg


def needs_pretrain(point: Dict[str, object]) -> bool:
    return any(name in PRETRAIN_KEYS for name in point)


def _run_point(index: int, point: Dict[str, object], config: dict, dataset: BinaryDataset,
               split: SplitSpec, warm_start: Optional[ModelParams], out_dir: str,
               skip_adversarial: bool) -> Tuple[int, float, float]:
    cfg = point_config(config, point)
    point_dir = Path(out_dir) / f"point_{index:03d}"
    point_dir.mkdir(parents=True, exist_ok=True)
    with open(point_dir / "point.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump({k: v for k, v in point.items()}, f, sort_keys=True)

    trace = TrainingTraceLogger(str(point_dir / "trace.csv"))
    trainer = Trainer(dataset, split, cfg["split"]["validation_seed"], cfg["split"]["n_neg"], trace,
                      cfg["evaluation"]["ns"], cfg["evaluation"]["batch_users"])
    params = warm_start
    if params is None or needs_pretrain(point):
        model_cfg = cfg["model"]
        params, _ = trainer.pretrain(PretrainConfig.from_config(cfg), int(model_cfg["hidden_dim"]),
                                     model_cfg["encoder_act"], model_cfg["decoder_act"])
    if not skip_adversarial:
        params, _ = trainer.adversarial_train(params, AdvConfig.from_config(cfg), float(cfg["gamma"]))
    save_checkpoint(params, point_dir / "model.ckpt")

    report = evaluate(params, dataset, split, cfg["evaluation"]["ns"], batch_users=cfg["evaluation"]["batch_users"])
    return index, report.hr(5), report.ndcg(5)


def run_sweep(config: dict, dataset: BinaryDataset, split: SplitSpec, grid: Dict[str, list],
              warm_start: Optional[ModelParams], out_dir, skip_adversarial: bool = False,
              workers: int = 1) -> Path:
    """Train and test one model per grid point; one summary row per point."""
    points = expand_grid(grid)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Sweeping {len(points)} grid points over {', '.join(grid)} with {workers} worker(s)")

    jobs = [(i, p, config, dataset, split, warm_start, str(out_dir), skip_adversarial) for i, p in enumerate(points)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, *zip(*jobs)))
    else:
        results = [_run_point(*job) for job in jobs]

    param_name = "|".join(grid)
    target = out_dir / "sweep.csv"
    with open(target, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for index, hr5, ndcg5 in sorted(results):
            value = "|".join(str(points[index][name]) for name in grid)
            writer.writerow([param_name, value, f"{hr5:.6f}", f"{ndcg5:.6f}"])
            logger.info(f"{param_name}={value}: HR@5={hr5:.4f} NDCG@5={ndcg5:.4f}")
    return target
