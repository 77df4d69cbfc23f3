"""Rendering kernel backend selection.

The compiled Cython extension is used when available; setting
ACTIVESCOUT_PURE_PYTHON=1 forces the numpy reference backend. Both
implement the same math and are cross-checked in the test suite.
"""

import os

from . import numpy_backend
from .numpy_backend import interpolate, sigmoid, softplus  # noqa: F401

BACKEND = "numpy"
render_rays = numpy_backend.render_rays
loss_grad = numpy_backend.loss_grad
adam_sparse = numpy_backend.adam_sparse

if os.environ.get("ACTIVESCOUT_PURE_PYTHON", "") != "1":
    try:
        from . import _ext

        render_rays = _ext.render_rays
        loss_grad = _ext.loss_grad
        adam_sparse = _ext.adam_sparse
        BACKEND = "cython"
    except ImportError:
        pass
