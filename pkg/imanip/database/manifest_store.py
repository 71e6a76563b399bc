import hashlib
import json
import logging
import os
from typing import Any, Dict, List

from ..core.errors import CodecError

logger = logging.getLogger(__name__)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def file_entries(paths: List[str], root: str) -> List[Dict[str, str]]:
    """Relative path plus content hash for every listed file, sorted by path."""
    entries = [
        {"path": os.path.relpath(path, root).replace(os.sep, "/"), "sha256": sha256_file(path)}
        for path in paths
    ]
    return sorted(entries, key=lambda e: e["path"])


def dump_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json(path: str, payload: Any) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dump_json(payload))
    logger.info(f"Wrote {path}")
    return path


def read_manifest(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Error parsing manifest {path}: {str(e)}")
        raise CodecError(f"{path} is not valid JSON: {str(e)}") from e
    if not isinstance(manifest, dict) or "method" not in manifest or "reports" not in manifest:
        raise CodecError(f"{path} is not a run manifest")
    return manifest


def verify_files(manifest: Dict[str, Any], root: str) -> List[str]:
    """Paths whose current hash differs from the one recorded in the manifest."""
    stale = []
    for entry in manifest.get("files", []):
        path = os.path.join(root, entry["path"])
        if not os.path.exists(path) or sha256_file(path) != entry["sha256"]:
            stale.append(entry["path"])
    return stale
