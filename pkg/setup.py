"""Build script. The compiled kernel extension is optional: if Cython or a C
compiler is missing the package still installs and falls back to the pure
numpy kernels at import time."""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/eegdaq/_native.pyx",
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))
except Exception as exc:  # pragma: no cover - build environment dependent
    import sys

    print("eegdaq: building without compiled kernels (%s)" % exc, file=sys.stderr)
    ext_modules = []

setup(ext_modules=ext_modules)
