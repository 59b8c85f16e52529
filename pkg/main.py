# main.py
# Runs the heatcast command line from a source checkout: python main.py <command> [options]

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from heatcast.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
