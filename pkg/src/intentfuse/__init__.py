"""Multimodal author-intent classification with early, intermediate and late fusion."""

import os as _os

# Bit-identical reruns need a fixed summation order in BLAS.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("OMP_NUM_THREADS", "1")

__version__ = "0.1.0"
