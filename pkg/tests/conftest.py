"""Keeps the tests directory importable (oracles are shared across modules)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
