"""Build the optional Cython kernels; the package falls back to NumPy when absent."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("VIRTISAC_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "virtisac._ckernels",
                    ["src/virtisac/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
