import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "proxsmooth._kernels._fast",
                ["src/proxsmooth/_kernels/_fast.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level=3,
    )
else:
    # pure-NumPy fallback is selected at import time
    ext_modules = []

setup(ext_modules=ext_modules)
