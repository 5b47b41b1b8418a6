"""
Launcher for the impakt pipeline
Usage: python impakt.py <command> --config configs/benchmark_call.cfg [--strict] [--out DIR]
"""

import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from pipeline import main  # noqa: E402

if __name__ == '__main__':
    sys.exit(main())
