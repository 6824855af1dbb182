import os

import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

npyrandom_dir = os.path.join(os.path.dirname(numpy.__file__), "random", "lib")

extensions = [
    Extension(
        "qedsim._kernels.core",
        ["src/qedsim/_kernels/core.pyx"],
        include_dirs=[numpy.get_include()],
        library_dirs=[npyrandom_dir],
        libraries=["npyrandom"],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
)
