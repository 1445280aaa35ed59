"""Select the compiled kernels when available, the numpy twins otherwise.

Set ``STATECOMPRESS_PURE=1`` to force the pure-Python backend.
"""
import os

from statecompress import _purepy

if os.environ.get("STATECOMPRESS_PURE") == "1":
    kernels = _purepy
    BACKEND = "python"
else:
    try:
        from statecompress import _kernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _purepy
        BACKEND = "python"

sample_path = kernels.sample_path
count_pairs = kernels.count_pairs
nearest_center = kernels.nearest_center
