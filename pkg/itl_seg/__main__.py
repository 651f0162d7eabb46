import argparse
import logging
import os
import signal
import sys

from itl_seg import ITL_DIR, __version__
from itl_seg.commands import cmd_evaluate, cmd_report, cmd_synth_data, cmd_train
from itl_seg.config import ExperimentConfig, load_config
from itl_seg.error import ITLError
from itl_seg.util import setup_logging

signal.signal(signal.SIGINT, signal.SIG_DFL)

logger = logging.getLogger("itl_seg")

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="itl-seg", description="Incremental-transfer learning for multi-site segmentation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML or JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="overrides train.seed of the config")
    common.add_argument("--log-level", default="INFO", choices=LOG_LEVELS, type=str.upper)

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth-data", parents=[common], help="write synthetic sites as manifests and slice files")
    sub.add_parser("train", parents=[common], help="train according to the configured scheme")
    evaluate = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on the configured sites")
    evaluate.add_argument("--checkpoint", required=True, help="checkpoint file written by train")
    report = sub.add_parser("report", parents=[common], help="build the report bundle of finished runs")
    report.add_argument("runs", nargs="+", help="run directories")
    return parser


def _config(args, required: bool = True) -> ExperimentConfig:
    if args.config is None:
        if required:
            raise ITLError(f"{args.command} needs --config")
        return ExperimentConfig()
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    os.makedirs(ITL_DIR, exist_ok=True)

    try:
        if args.command == "synth-data":
            config = _config(args)
            out = args.out or config.output_dir
            if out is None:
                raise ITLError("synth-data needs --out or output_dir in the config")
            cmd_synth_data(config, out)
        elif args.command == "train":
            cmd_train(_config(args), args.out)
        elif args.command == "evaluate":
            config = _config(args)
            if args.out is None:
                raise ITLError("evaluate needs --out")
            cmd_evaluate(config, args.checkpoint, args.out)
        elif args.command == "report":
            config = _config(args, required=False)
            if args.out is None:
                raise ITLError("report needs --out")
            cmd_report(args.runs, args.out, config.report.renderer_paths)
    except ITLError as e:
        logger.error("%s", e)
        return 1
    except OSError as e:
        logger.error("I/O error: %s", e)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
