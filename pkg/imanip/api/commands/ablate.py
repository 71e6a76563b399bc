import argparse
import logging
import os
from typing import List

from pydantic import ValidationError

from ...controller import report_controller
from ...core.errors import ConfigError
from ...database import manifest_store
from ...model.schemas import RunConfig
from .common import add_run_flags, out_dir, run_config_from_args
from .run import execute_run

logger = logging.getLogger(__name__)

ABLATION_PARAMS = ("replay_k", "prompt_len", "lambda_dis", "d_new", "strategy", "freeze")
SWEEP_COLUMNS = ["param", "value", "method", "seed", "avg_old", "avg_all", "final_all"]


def sweep_configs(config: RunConfig, param: str, values: List[str]) -> List[RunConfig]:
    if param not in ABLATION_PARAMS:
        raise ConfigError(f"cannot sweep '{param}'; choose one of {', '.join(ABLATION_PARAMS)}")
    if not values:
        raise ConfigError("--values needs at least one value")
    configs = []
    for value in values:
        try:
            configs.append(RunConfig.model_validate({**config.model_dump(), param: value}))
        except ValidationError as e:
            raise ConfigError(f"{param}={value}: {str(e)}") from e
    return configs


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("ablate", help="sweep one hyperparameter, one run per value and seed")
    add_run_flags(parser)
    parser.add_argument("--param", required=True, choices=ABLATION_PARAMS)
    parser.add_argument("--values", required=True, help="comma-separated values")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    config = run_config_from_args(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    root = out_dir(config)
    rows = []
    for value, swept in zip(values, sweep_configs(config, args.param, values)):
        for seed in swept.seeds:
            manifest = manifest_store.read_manifest(execute_run(swept, seed, root, tag=f"_{args.param}-{value}"))
            summary = manifest["summary"]
            rows.append(
                {
                    "param": args.param,
                    "value": value,
                    "method": swept.method,
                    "seed": str(seed),
                    "avg_old": report_controller.fmt_metric(summary["avg_old"]),
                    "avg_all": report_controller.fmt_metric(summary["avg_all"]),
                    "final_all": report_controller.fmt_metric(summary["final_all"]),
                }
            )
    os.makedirs(root, exist_ok=True)
    path = report_controller.write_csv(os.path.join(root, f"ablate_{args.param}.csv"), SWEEP_COLUMNS, rows)
    logger.info(f"Sweep of {args.param} over {values}: {path}")
    return 0
