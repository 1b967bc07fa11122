"""Builds the optional Cython graph kernels; the package works without them."""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ETHTLM_NO_EXT", "") not in ("1", "true"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("ethtlm._kernels._core", ["src/ethtlm/_kernels/_core.pyx"],
                       include_dirs=[np.get_include()],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
