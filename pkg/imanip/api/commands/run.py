import argparse
import logging
import os
from typing import Optional

from ...controller import report_controller, trainer_controller
from ...controller.trainer_controller import ResumePoint
from ...core.errors import ConfigError
from ...model.schemas import RunConfig
from ..schedule import schedule_from_config
from .common import add_run_flags, out_dir, run_config_from_args
from .sample_demo import prepare_data

logger = logging.getLogger(__name__)


def execute_run(
    config: RunConfig, seed: int, root: str, tag: str = "", resume: Optional[ResumePoint] = None
) -> str:
    """Data, protocol and artifacts for one (config, seed); returns the manifest path.

    Progress is written after every step; ``resume`` continues from a recorded step.
    """
    schedule, demos, data_files = prepare_data(config, seed, root)
    run_dir = report_controller.run_directory(root, schedule.notation + tag, config.method, seed)

    def record(step, model, reports, memories):
        report_controller.write_progress(run_dir, config, schedule, config.method, step, model, reports, memories)

    result = trainer_controller.run_protocol(schedule, config.method, config, demos, resume=resume, on_step=record)
    return report_controller.write_run_artifacts(result, config, root, data_files, tag)


def resume_run(run_dir: str) -> str:
    """Continue the run recorded in ``run_dir`` after its last completed step."""
    config, seed, point = report_controller.read_progress(run_dir)
    notation = schedule_from_config(config, seed).notation
    root, name = os.path.split(os.path.abspath(run_dir))
    suffix = f"_{config.method}_seed{seed}"
    if not (name.startswith(notation) and name.endswith(suffix)):
        raise ConfigError(f"{run_dir} does not hold a {notation} {config.method} seed {seed} run")
    tag = name[len(notation) : len(name) - len(suffix)]
    return execute_run(config, seed, root, tag, resume=point)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("run", help="run one Bn-kNm protocol per seed")
    add_run_flags(parser)
    parser.add_argument(
        "--resume",
        metavar="RUN_DIR",
        help="continue an interrupted run from its last completed step; other flags are ignored",
    )
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    if args.resume:
        path = resume_run(args.resume)
        logger.info(f"Manifest: {path}")
        return 0
    config = run_config_from_args(args)
    root = out_dir(config)
    for seed in config.seeds:
        path = execute_run(config, seed, root)
        logger.info(f"Manifest: {path}")
    return 0
