"""Build script; compiles the optional power-control extension when Cython is available."""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("FAIRBEAM_SKIP_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "fairbeam._fastpc",
                    ["src/fairbeam/_fastpc.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # pure-python fallback in fairbeam.kernels takes over at import time
        ext_modules = []

setup(ext_modules=ext_modules)
