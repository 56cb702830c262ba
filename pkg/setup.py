"""Build script for the optional compiled kernel extension.

Set DECAYLAB_SKIP_EXT=1 to install without compiling; the package then
falls back to the NumPy kernel backend at import time.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("DECAYLAB_SKIP_EXT"):
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "decaylab.kernels._ckernels",
                ["src/decaylab/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
