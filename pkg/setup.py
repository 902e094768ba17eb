"""Build script for the optional compiled kernel core.

The package is pure Python plus numpy; the Cython extension only
accelerates the hot kernels. If Cython or a C compiler is missing the
build falls back to the numpy kernels selected at import time.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "bcaf._kernels",
                ["src/bcaf/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )
else:
    extensions = []

setup(ext_modules=extensions)
