#!/usr/bin/env python3
"""
Entry script for the CZSL engine
Example: python run_czsl.py --config runs/synth/run.cfg train
"""

import sys
from pathlib import Path

# Add the project root to the Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from czsl_engine.main import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        sys.exit(130)
