"""Script entry point: pretrain, adapt, evaluate, synthesize, refine or ablate."""

import os
import sys

# Add current directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from cli.main import main


if __name__ == "__main__":
    sys.exit(main())
