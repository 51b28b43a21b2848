"""Build script: compiles the optional Cython scoring kernel.

If Cython or a C compiler is unavailable the package still installs;
bgsindy.kernels falls back to the pure-numpy implementation at import.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "bgsindy._gausscore",
                ["src/bgsindy/_gausscore.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
