import argparse
import csv
import logging
import sys
from pathlib import Path

from clients.dataset_source import DatasetSourceClient
from data.interactions import LogParseError, dataset_stats, load_dataset
from data.splits import SplitFormatError, load_split, save_split, split_leave_one_out
from evaluation import evaluate, itempop, noise_impact_probe, robustness_sweep, write_curves_csv, write_report_csv
from experiments import parse_grid, run_sweep
from trainer import (
    AdvConfig,
    CheckpointError,
    DivergenceError,
    PretrainConfig,
    Trainer,
    check_compatible,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from utils.config import load_config, require_dataset_path, write_resolved_config
from utils.logging_config import configure_logging
from utils.numerics import ConfigurationError, RngStream
from utils.trace_logger import best_row, trailing_average, TrainingTraceLogger

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("run")


def output_dir(config: dict) -> Path:
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def split_path(config: dict) -> Path:
    path = Path(config["split"]["file"])
    return path if path.is_absolute() else Path(config["output_dir"]) / path


def load_data(config: dict, need_split: bool = True):
    require_dataset_path(config)
    log, dataset = load_dataset(config["dataset"])
    if not need_split:
        return log, dataset, None
    path = split_path(config)
    if not path.exists():
        raise ConfigurationError(f"split file {path} not found; run the prepare command first")
    return log, dataset, load_split(path, dataset)


def load_model(path, dataset):
    if not Path(path).exists():
        raise ConfigurationError(f"checkpoint not found: {path}")
    params = load_checkpoint(path)
    check_compatible(params, dataset)
    return params


def cmd_fetch(config: dict, args) -> int:
    if args.name:
        config["dataset"]["name"] = args.name
    dest = Path(args.dest or Path(config["output_dir"]) / "raw")
    ratings = DatasetSourceClient(config).fetch(dest)
    logger.info(f"Ratings file: {ratings} (use --set dataset.path={ratings})")
    return EXIT_OK


def cmd_prepare(config: dict, args) -> int:
    out = output_dir(config)
    log, dataset, _ = load_data(config, need_split=False)
    if log.rejected_lines:
        logger.warning(f"{len(log.rejected_lines)} malformed lines skipped (first at line {log.rejected_lines[0]})")

    split = split_leave_one_out(dataset, RngStream(config["split"]["seed"]), int(config["split"]["n_neg"]))
    save_split(split, split_path(config))

    with open(out / "stats.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["stage", "users", "items", "ratings", "sparsity"])
        for stage, source in (("raw", log), ("binary", dataset)):
            stats = dataset_stats(source)
            writer.writerow([stage] + stats.as_row())
            logger.info(f"{stage}: {stats.users} users, {stats.items} items, {stats.ratings} ratings, "
                        f"sparsity {stats.sparsity:.2f}%")
    return EXIT_OK


def _write_summary(out: Path, trace: TrainingTraceLogger, test_reports: dict):
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["stage", "source", "hr5", "ndcg5", "hr10", "ndcg10"])
        for stage in ("pretrain", "adversarial"):
            rows = trace.stage_rows(stage)
            best = best_row(rows)
            if best is not None:
                writer.writerow([stage, f"best_validation_epoch_{best.epoch}", f"{best.hr5:.6f}",
                                 f"{best.ndcg5:.6f}", f"{best.hr10:.6f}", f"{best.ndcg10:.6f}"])
            tail = trailing_average(rows, 100)
            if tail is not None:
                writer.writerow([stage, f"validation_trailing_{tail['evaluations']}", f"{tail['hr5']:.6f}",
                                 f"{tail['ndcg5']:.6f}", f"{tail['hr10']:.6f}", f"{tail['ndcg10']:.6f}"])
            report = test_reports.get(stage)
            if report is not None:
                writer.writerow([stage, "test", f"{report.hr(5):.6f}", f"{report.ndcg(5):.6f}",
                                 f"{report.hr(10):.6f}", f"{report.ndcg(10):.6f}"])


def cmd_train(config: dict, args) -> int:
    out = output_dir(config)
    _, dataset, split = load_data(config)

    trace = TrainingTraceLogger(str(out / "trace.csv"))
    ev = config["evaluation"]
    trainer = Trainer(dataset, split, config["split"]["validation_seed"], config["split"]["n_neg"], trace,
                      ev["ns"], ev["batch_users"])
    model_cfg = config["model"]
    test_reports = {}

    pretrained = True
    if args.init_checkpoint:
        params = load_model(args.init_checkpoint, dataset)
    elif args.skip_pretrain:
        pre = PretrainConfig.from_config(config)
        params = init_params(dataset.user_count, dataset.item_count, int(model_cfg["hidden_dim"]),
                             model_cfg["encoder_act"], model_cfg["decoder_act"], pre.init_std, RngStream(pre.seed).child(0))
        pretrained = False
    else:
        params, _ = trainer.pretrain(PretrainConfig.from_config(config), int(model_cfg["hidden_dim"]),
                                     model_cfg["encoder_act"], model_cfg["decoder_act"])
        save_checkpoint(params, out / "pre.ckpt")
        test_reports["pretrain"] = evaluate(params, dataset, split, ev["ns"], batch_users=ev["batch_users"])
        write_report_csv(test_reports["pretrain"], out / "eval_pre.csv")

    if not args.skip_adversarial:
        params, _ = trainer.adversarial_train(params, AdvConfig.from_config(config), float(config["gamma"]),
                                              pretrained=pretrained)
        save_checkpoint(params, out / "adv.ckpt")
        test_reports["adversarial"] = evaluate(params, dataset, split, ev["ns"], batch_users=ev["batch_users"])
        write_report_csv(test_reports["adversarial"], out / "eval_adv.csv")

    for stage, report in test_reports.items():
        logger.info(f"✅ Test [{stage}]: HR@5={report.hr(5):.4f} NDCG@5={report.ndcg(5):.4f} "
                    f"HR@10={report.hr(10):.4f} NDCG@10={report.ndcg(10):.4f}")
    _write_summary(out, trace, test_reports)
    return EXIT_OK


def cmd_eval(config: dict, args) -> int:
    out = output_dir(config)
    _, dataset, split = load_data(config)
    params = load_model(args.checkpoint, dataset)
    report = evaluate(params, dataset, split, args.ns or config["evaluation"]["ns"],
                      batch_users=config["evaluation"]["batch_users"])
    write_report_csv(report, out / (args.name or "eval.csv"))
    for n in sorted(report.metrics):
        logger.info(f"HR@{n}={report.hr(n):.4f} NDCG@{n}={report.ndcg(n):.4f} over {report.tested_user_count} users")
    return EXIT_OK


def cmd_itempop(config: dict, args) -> int:
    out = output_dir(config)
    _, dataset, split = load_data(config)
    report = itempop(dataset, split, args.ns or config["evaluation"]["ns"])
    write_report_csv(report, out / "itempop.csv")
    return EXIT_OK


def cmd_robustness(config: dict, args) -> int:
    out = output_dir(config)
    _, dataset, split = load_data(config)
    eps_grid = args.eps or config["probe"]["eps_grid"]
    reference = args.reference_eps if args.reference_eps is not None else config["probe"]["reference_epsilon"]

    drops = []
    for ckpt in args.checkpoint:
        params = load_model(ckpt, dataset)
        curve = robustness_sweep(params, dataset, split, args.site, eps_grid,
                                 config["evaluation"]["ns"], config["evaluation"]["batch_users"])
        name = Path(ckpt).stem
        target = out / ("robustness.csv" if len(args.checkpoint) == 1 else f"robustness_{name}.csv")
        write_curves_csv([curve], target)
        if any(abs(p[0] - reference) < 1e-12 for p in curve.points):
            noisy = curve.at(reference)[1]
            drops.append([name, f"{curve.points[0][1]:.6f}", f"{noisy:.6f}", f"{curve.relative_drop(reference):.6f}"])

    if drops:
        with open(out / "degradation.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["checkpoint", "hr5_clean", "hr5_noisy", "relative_drop"])
            writer.writerows(drops)
        for row in drops:
            logger.info(f"{row[0]}: HR@5 {row[1]} -> {row[2]} at epsilon={reference:g} ({float(row[3]):.2%} drop)")
    return EXIT_OK


def cmd_probe(config: dict, args) -> int:
    out = output_dir(config)
    _, dataset, split = load_data(config)
    params = load_model(args.checkpoint, dataset)
    probe = config["probe"]
    curves = noise_impact_probe(
        params, dataset, split,
        sites=probe["sites"],
        kinds=probe["kinds"],
        eps_grid=args.eps or probe["eps_grid"],
        trials=int(args.trials or probe["trials"]),
        rng=RngStream(probe["seed"]),
        ns=config["evaluation"]["ns"],
        batch_users=config["evaluation"]["batch_users"],
    )
    write_curves_csv(curves, out / "probe.csv")
    return EXIT_OK


def cmd_sweep(config: dict, args) -> int:
    out = output_dir(config)
    _, dataset, split = load_data(config)
    grid = parse_grid(args.grid) if args.grid else dict(config["sweep"]["grid"] or {})

    warm_start = None
    if args.checkpoint:
        warm_start = load_model(args.checkpoint, dataset)
    else:
        ev = config["evaluation"]
        trainer = Trainer(dataset, split, config["split"]["validation_seed"], config["split"]["n_neg"],
                          TrainingTraceLogger(str(out / "sweep" / "pretrain_trace.csv")), ev["ns"], ev["batch_users"])
        model_cfg = config["model"]
        warm_start, _ = trainer.pretrain(PretrainConfig.from_config(config), int(model_cfg["hidden_dim"]),
                                         model_cfg["encoder_act"], model_cfg["decoder_act"])
        save_checkpoint(warm_start, out / "sweep" / "pre.ckpt")

    run_sweep(config, dataset, split, grid, warm_start, out / "sweep", args.skip_adversarial,
              int(args.workers or config["sweep"]["workers"]))
    return EXIT_OK


COMMANDS = {
    "fetch": cmd_fetch,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
    "probe": cmd_probe,
    "itempop": cmd_itempop,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Adversarial collaborative auto-encoder experiments")
    parser.add_argument("--config", default=None, help="YAML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="Reseed every stage")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config value (repeatable)")
    parser.add_argument("--verbose", action="store_true", help="Set log level to DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="Download a public rating archive")
    p.add_argument("name", nargs="?", default=None, help="movielens-1m, filmtrust or ciao")
    p.add_argument("--dest", default=None)

    sub.add_parser("prepare", help="Parse, binarize and split the dataset")

    p = sub.add_parser("train", help="Pre-train then adversarially train")
    p.add_argument("--skip-pretrain", action="store_true")
    p.add_argument("--skip-adversarial", action="store_true")
    p.add_argument("--init-checkpoint", default=None, help="Start the adversarial stage from this checkpoint")

    p = sub.add_parser("eval", help="Leave-one-out HR/NDCG of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ns", type=int, nargs="+", default=None)
    p.add_argument("--name", default=None, help="Report file name")

    p = sub.add_parser("robustness", help="Adversarial noise sweep on one site")
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--site", default="decoder_weights",
                   choices=["encoder_weights", "decoder_weights", "user_embedding", "hidden_layer"])
    p.add_argument("--eps", type=float, nargs="+", default=None)
    p.add_argument("--reference-eps", type=float, default=None)

    p = sub.add_parser("probe", help="Gaussian vs adversarial noise at every site")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eps", type=float, nargs="+", default=None)
    p.add_argument("--trials", type=int, default=None)

    p = sub.add_parser("itempop", help="Item popularity baseline")
    p.add_argument("--ns", type=int, nargs="+", default=None)

    p = sub.add_parser("sweep", help="Grid sweep of hyper-parameters")
    p.add_argument("--grid", action="append", default=[], metavar="PARAM=V1,V2,...")
    p.add_argument("--checkpoint", default=None, help="Pre-trained model shared by all grid points")
    p.add_argument("--skip-adversarial", action="store_true")
    p.add_argument("--workers", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.set, args.seed, args.out)
    except ConfigurationError as e:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s [%(name)s] %(message)s")
        logger.error(str(e))
        return EXIT_USAGE

    # CLI overrides
    if args.verbose:
        config["logging"]["level"] = "DEBUG"
    configure_logging(config, config["output_dir"])
    write_resolved_config(config, config["output_dir"])

    try:
        return COMMANDS[args.command](config, args)
    except (ConfigurationError, SplitFormatError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except DivergenceError as e:
        logger.error(f"❌ Training aborted: {e}")
        return EXIT_RUNTIME
    except (CheckpointError, LogParseError) as e:
        logger.error(str(e))
        return EXIT_RUNTIME
    except Exception:
        logger.exception(f"Fatal error in {args.command}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
