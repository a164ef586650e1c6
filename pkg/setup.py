import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "elastic_nas.kernels._native",
        ["src/elastic_nas/kernels/_native.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-march=native", "-funroll-loops", "-ffast-math"],
        libraries=["mvec", "m"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
