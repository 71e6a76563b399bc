import argparse
import logging
import os
from typing import Dict, List, Tuple

from ...controller import trainer_controller, world_controller
from ...database import demo_store
from ...model.schemas import RunConfig, Schedule
from ...model.world import Demonstration
from ..schedule import schedule_from_config
from .common import add_run_flags, out_dir, run_config_from_args

logger = logging.getLogger(__name__)


def data_directory(root: str, config: RunConfig, seed: int) -> str:
    name = f"data_seed{seed}_g{config.grid_size}_r{config.rot_bins}_n{config.demos_per_skill}"
    return os.path.join(root, name)


def write_demo_set(
    demos: Dict[str, List[Demonstration]], directory: str, with_json: bool = False
) -> List[str]:
    """One IMDEMO1 file per skill (plus the JSON view); returns the binary paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for skill, items in demos.items():
        paths.append(demo_store.save_demos(os.path.join(directory, f"{skill}.imdemo"), items))
        if with_json:
            demo_store.save_demos_json(os.path.join(directory, f"{skill}.json"), items)
    return paths


def prepare_data(config: RunConfig, seed: int, root: str, with_json: bool = False) -> Tuple[Schedule, dict, List[str]]:
    """Generate and store the demonstrations of every scheduled skill, then read them back.

    Training consumes the decoded files, so every method sees the stored bytes.
    """
    schedule = schedule_from_config(config, seed)
    skills = schedule.learned_through(len(schedule.steps))
    directory = data_directory(root, config, seed)
    paths = write_demo_set(trainer_controller.generate_data(schedule, config, skills), directory, with_json)
    demos = {skill: demo_store.load_demos(path) for skill, path in zip(skills, paths)}
    return schedule, demos, paths


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("sample-demo", help="write demonstration files (IMDEMO1 + JSON)")
    add_run_flags(parser)
    parser.add_argument("--skill", action="append", help="restrict to these skills; repeatable")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    config = run_config_from_args(args)
    root = out_dir(config)
    for seed in config.seeds:
        schedule = schedule_from_config(config, seed)
        skills = args.skill or schedule.learned_through(len(schedule.steps))
        for skill in skills:
            world_controller.get_plugin(skill)
        directory = data_directory(root, config, seed)
        paths = write_demo_set(trainer_controller.generate_data(schedule, config, skills), directory, with_json=True)
        logger.info(f"Seed {seed}: wrote {len(paths)} demonstration files to {directory}")
    return 0
