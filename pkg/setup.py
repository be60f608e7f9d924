"""Build the optional compiled metric kernels; the package works without them."""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # no Cython: install the pure-Python package only
    pass
else:
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("cogcap._kernels", ["src/cogcap/_kernels.pyx"], include_dirs=[np.get_include()])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
