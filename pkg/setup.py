import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TKGFUSE_PURE", "") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "tkgfuse._kernels._core",
                    ["src/tkgfuse/_kernels/_core.pyx"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython at build time: install with the pure-Python kernels only.
        ext_modules = []

setup(ext_modules=ext_modules)
