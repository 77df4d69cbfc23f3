"""Build script: compiles the optional Cython rendering kernel.

The package works without the extension (a pure-numpy backend is selected
at import time), so a failed compile degrades gracefully instead of
blocking installation.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/activescout/kernels/_ext.pyx"],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        if sys.platform != "win32":
            ext.extra_compile_args = ["-O3"]
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"activescout: skipping Cython extension ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
