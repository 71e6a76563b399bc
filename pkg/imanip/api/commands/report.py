import argparse
import glob
import logging
import os

from ...controller import report_controller
from ...core import settings
from ...core.errors import ConfigError
from ...database import manifest_store

logger = logging.getLogger(__name__)


def collect_manifests(paths, runs_dir):
    found = list(paths or [])
    if runs_dir:
        if not os.path.isdir(runs_dir):
            raise FileNotFoundError(f"runs directory {runs_dir} does not exist")
        found += sorted(glob.glob(os.path.join(runs_dir, "*", "manifest.json")))
    if not found:
        raise ConfigError("report needs --manifest paths or a --runs directory containing manifests")
    for path in found:
        if not os.path.exists(path):
            raise FileNotFoundError(f"manifest {path} does not exist")
    return found


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("report", help="merge run manifests into a comparison CSV and SVG")
    parser.add_argument("--manifest", action="append", help="manifest.json path; repeatable")
    parser.add_argument("--runs", help="directory whose */manifest.json files are merged")
    parser.add_argument("--out", help="output directory (IMANIP_OUT takes precedence)")
    parser.add_argument("--name", default="comparison", help="base name of the written files")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    paths = collect_manifests(args.manifest, args.runs)
    manifests = [manifest_store.read_manifest(path) for path in paths]
    for path, manifest in zip(paths, manifests):
        stale = manifest_store.verify_files(manifest, os.path.dirname(path))
        if stale:
            logger.warning(f"{path}: files changed since the run: {', '.join(stale)}")
    written = report_controller.write_comparison(settings.resolve_out_dir(args.out), manifests, args.name)
    logger.info(f"Compared {len(manifests)} runs: {', '.join(written)}")
    return 0
