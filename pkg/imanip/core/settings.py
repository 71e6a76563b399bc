import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Configuration
IMANIP_OUT = os.getenv("IMANIP_OUT")
IMANIP_LOG_LEVEL = os.getenv("IMANIP_LOG_LEVEL", "INFO")
DEFAULT_OUT_DIR = "runs"


def resolve_out_dir(configured: str | None = None) -> str:
    """Output directory: IMANIP_OUT wins over the configured value."""
    override = os.getenv("IMANIP_OUT", IMANIP_OUT)
    if override:
        return override
    return configured or DEFAULT_OUT_DIR
