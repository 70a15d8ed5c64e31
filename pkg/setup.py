"""Builds the optional compiled kernel core; the package works without it."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("GOPFORGE_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("gopforge._core", ["src/gopforge/_core.pyx"],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
