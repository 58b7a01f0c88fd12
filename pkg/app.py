"""
Two-Point Gradient Regularization - Command Line Application
Runs Landweber-type regularization experiments on synthetic ill-posed problems.

Usage:
    python app.py init configs/default.json
    python app.py run configs/default.json
    python app.py sweep configs/deconv.json --compare-strategies
    python app.py audit results
"""

import logging
import os

import colorama

from twopoint import __version__
from twopoint.cli import LOG_LEVEL_ENV, main
from twopoint.config import OUTPUT_DIR_ENV

# Configure logging
logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)


if __name__ == "__main__":
    colorama.just_fix_windows_console()

    print("\n" + "=" * 60)
    print(f"TWO-POINT GRADIENT REGULARIZATION  v{__version__}")
    print("=" * 60)
    print(f"Output directory:  {os.environ.get(OUTPUT_DIR_ENV, 'from config')}")
    print(f"Log level:         {os.environ.get(LOG_LEVEL_ENV, 'INFO')}")
    print("=" * 60 + "\n")

    logger.info("Starting experiment runner")
    main(prog_name="twopoint")
