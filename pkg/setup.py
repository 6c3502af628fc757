import os
import warnings

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    warnings.warn("Cython not found; dagcd will use the pure-Python kernels.")
    cythonize = None

extensions = []
if cythonize is not None and not os.environ.get("DAGCD_NO_EXT"):
    extensions = cythonize(
        [
            Extension(
                "dagcd._ckernels",
                ["src/dagcd/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=extensions)
