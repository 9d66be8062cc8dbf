import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install; kernels fall back to numpy
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("RGANET_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "rganet.engine._ckernels",
                ["src/rganet/engine/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
