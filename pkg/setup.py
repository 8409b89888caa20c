import os

from setuptools import setup

ext_modules = []
if os.environ.get("MGAN_NO_EXT", "") in ("", "0"):
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            "src/mgan/_kernels/_ccl.pyx",
            language_level=3,
            compiler_directives={"boundscheck": False, "wraparound": False},
        )
        for ext in ext_modules:
            ext.include_dirs.append(numpy.get_include())
            ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))

setup(ext_modules=ext_modules)
