"""Build script for the optional compiled scoring kernel.

The package is pure Python except for ``tablink._scoring``, a small Cython
extension for the inner loop of lexical (BM25/BM25F) scoring. If Cython or a
C compiler is unavailable the build silently falls back to the numpy
implementation in ``tablink._scoring_py``; the extension is marked optional
so installation never fails because of it.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tablink._scoring",
                ["src/tablink/_scoring.pyx"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
