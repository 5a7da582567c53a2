"""Build script for the optional compiled kernel extension.

The package is pure Python plus one Cython module with the training-loop
kernels. If Cython or a C compiler is unavailable the build degrades to
the NumPy fallback backend; nothing else changes.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "primed.kernels._core",
                ["src/primed/kernels/_core.pyx"],
                # fp-contract off keeps the adam kernel bitwise-identical to
                # the NumPy backend (no FMA contraction of a*b+c).
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
