"""Desk-scale lab for masked-latent pretraining on multimodal raster imagery."""

import os

# Cap BLAS thread pools before numpy is first imported. OE_LAB_THREADS bounds
# all internal parallelism; kernels themselves are single-threaded.
_threads = os.environ.get("OE_LAB_THREADS")
if _threads is not None:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del _threads

from oelab.backend import BACKEND_NAME, kernels  # noqa: E402,F401

__version__ = "0.1.0"
