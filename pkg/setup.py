"""Build script for the optional compiled integration core.

The package works without it: ``popdelay._backend`` falls back to the
pure-Python core when ``popdelay._kernels`` cannot be imported.

    pip install -e . --no-build-isolation
    python setup.py build_ext --inplace
"""
import os
import warnings

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("POPDELAY_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "popdelay._kernels",
                ["src/popdelay/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    warnings.warn("Cython not available; installing the pure-Python core only.")

setup(ext_modules=ext_modules)
