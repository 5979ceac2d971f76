import os

from setuptools import setup

ext_modules = []
if not os.environ.get("RFPKV_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(["src/rfpkv/_kernels.pyx"], language_level=3, quiet=True)

setup(ext_modules=ext_modules)
