import logging
import sys

from dotenv import load_dotenv

from config.config import LOG_LEVEL
from src.cli import main as cli_main

# Configure logging
logging.basicConfig(
    level=LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv()


def main():
    """Parse the command line, run one experiment and return its exit code."""
    code = cli_main(sys.argv[1:])
    if code:
        logger.error(f"Experiment finished with exit code {code}")
    else:
        logger.info("Experiment complete.")
    return code


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Run stopped by user.")
        sys.exit(130)
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        sys.exit(1)
