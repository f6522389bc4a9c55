"""Build the optional Cython core.

The compiled module ``marketstates._ccore`` is optional: when Cython or a C
compiler is unavailable the package installs without it and falls back to
``marketstates._pycore`` at import time.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("MARKETSTATES_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "marketstates._ccore",
                    ["src/marketstates/_ccore.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
