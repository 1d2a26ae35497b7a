import os
from ctypes.util import find_library

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None and os.path.exists("src/releaseflow/_fastcore.pyx"):
    # -fopenmp-simd enables the `#pragma omp simd` tanh loop without the
    # OpenMP runtime; libmvec provides the vectorized tanh on glibc >= 2.35.
    libraries = ["m"]
    if find_library("mvec"):
        libraries.insert(0, "mvec")
    extensions = cythonize(
        [
            Extension(
                "releaseflow._fastcore",
                ["src/releaseflow/_fastcore.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-march=native", "-fopenmp-simd"],
                libraries=libraries,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

# Without Cython the package installs pure-Python; releaseflow.backend
# falls back to the NumPy kernels at import time.
setup(ext_modules=extensions)
