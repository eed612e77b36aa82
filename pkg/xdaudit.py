#!/usr/bin/env python3
"""
Launcher for the xdaudit command line (same as ``python src/main.py``).
"""

import sys
from pathlib import Path

# Add src directory to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
