"""Build script for the compiled kernel extension.

The package works without the extension (the numpy fallback in
hetermpc.kernels.reference is selected at import time), so a failed
extension build only costs speed, not functionality.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "hetermpc.kernels._core",
                ["src/hetermpc/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
