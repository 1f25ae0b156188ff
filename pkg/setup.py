"""Build hooks for the optional compiled stencil kernels.

The package is pure Python plus one optional Cython extension holding the hot
multigrid stencil sweeps.  If Cython or a C compiler is unavailable the build
degrades to the numpy fallback kernels; nothing else changes.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "exmass._stencilext",
                ["src/exmass/_stencilext.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - exercised only on crippled toolchains
    print("exmass: building without compiled kernels (%s)" % exc)

setup(ext_modules=ext_modules)
