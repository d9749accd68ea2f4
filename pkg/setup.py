"""Build the optional compiled rollout kernel.

The package works without the extension (pure-python fallback is selected at
import time); set EVGRID_NO_EXT=1 to skip the build explicitly.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("EVGRID_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "evgrid._speedups",
                    ["src/evgrid/_speedups.pyx"],
                    # no FMA contraction: the compiled kernel must match the
                    # pure-python reference bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
