import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "dualmem._kernels",
        ["src/dualmem/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-march=native"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
