"""Build script for the optional compiled kernel extension.

The package works without the extension: kgalign.core falls back to the pure
NumPy kernels when the compiled module is absent, so the Extension is marked
optional and a failed build degrades instead of aborting the install.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "kgalign.core._speedups",
        ["src/kgalign/core/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"})
    if cythonize is not None
    else [],
)
