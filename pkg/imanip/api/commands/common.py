import argparse
from typing import Dict

from ...core import settings
from ...core.errors import ConfigError
from ...model.schemas import METHODS, STRATEGIES, RunConfig
from ..config import build_run_config


def add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value run configuration file")
    parser.add_argument("--schedule", help="Bn-kNm protocol, e.g. B2-3N1")
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--strategy", choices=STRATEGIES)
    parser.add_argument("--seed", help="one seed or a comma-separated list")
    parser.add_argument("--out", help="output directory (IMANIP_OUT takes precedence)")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help=(
            "override any configuration key; repeatable. attention_scale=key scales self-attention by "
            "sqrt(d'), the query width after extension; the default attention_scale=model uses sqrt(d)"
        ),
    )


def _pairs(items) -> Dict[str, str]:
    values = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        values[key.strip()] = value.strip()
    return values


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = _pairs(args.set)
    overrides.update(
        {
            "schedule": args.schedule,
            "method": args.method,
            "strategy": args.strategy,
            "seeds": args.seed,
            "out": args.out,
        }
    )
    return build_run_config(args.config, overrides)


def out_dir(config: RunConfig) -> str:
    return settings.resolve_out_dir(config.out)
