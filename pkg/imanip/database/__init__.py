from .checkpoint_store import load_checkpoint, save_checkpoint
from .demo_store import load_demos, save_demos, save_demos_json
from .manifest_store import read_manifest, sha256_file, write_json
from .memory_store import load_memory, save_memory
