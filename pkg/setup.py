"""Build script for the optional compiled convolution kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed build is downgraded to a warning.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/cvnnfp/_convext.pyx",
        compiler_directives={"language_level": 3},
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        ext.extra_compile_args = ["-O3"]
except Exception as exc:  # pragma: no cover - build-env dependent
    warnings.warn(f"compiled kernels disabled: {exc}")

setup(ext_modules=ext_modules)
