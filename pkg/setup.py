import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext_modules = [
    Extension(
        "gazeband.kernels._conv",
        ["src/gazeband/kernels/_conv.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=[
            "-O3",
            "-march=native",
            "-fassociative-math",
            "-fno-signed-zeros",
            "-fno-trapping-math",
        ],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
