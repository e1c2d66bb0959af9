"""Physically based shading and reconstruction for 3D Gaussian scenes at night."""

import os

# the system TBB is too old for numba; fall back to its built-in pool quietly
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
