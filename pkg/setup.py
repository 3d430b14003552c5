"""Builds the optional compiled GRU kernel; the package works without it."""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # fall back to the numpy implementation
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "scenesound.nn._kernels",
                ["src/scenesound/nn/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
