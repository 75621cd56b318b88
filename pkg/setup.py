"""Builds the optional Cython simulation kernel.

The package works without it; ``hidden_csma.simulator`` falls back to the
pure-Python kernel when the extension cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("HIDDEN_CSMA_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hidden_csma._ckernel",
                    ["src/hidden_csma/_ckernel.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
