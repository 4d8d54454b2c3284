import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernel core is optional: the package falls back to the numpy
# reference kernels when the extension is absent (PANOLDM_NO_EXT=1 skips the
# build entirely).
ext_modules = []
if not os.environ.get("PANOLDM_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "panoldm.kernels._fastcore",
                    ["src/panoldm/kernels/_fastcore.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
