"""Build script for the optional compiled BPE kernels.

The package is pure Python except for bgmhan.bpe._kernels, a Cython module
covering the tokenizer's hot loops (pair counting, merge replacement, merge
replay).  The extension is marked optional: if Cython or a C compiler is
missing the install still succeeds and bgmhan.bpe falls back to the
pure-Python kernels at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    ext = Extension(
        "bgmhan.bpe._kernels",
        ["src/bgmhan/bpe/_kernels.pyx"],
        optional=True,
    )
    extensions = cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=extensions)
