from setuptools import Extension, setup
from Cython.Build import cythonize

setup(
    ext_modules=cythonize(
        [Extension("rcfnet.kernels._fastops",
                   ["src/rcfnet/kernels/_fastops.pyx"],
                   extra_compile_args=["-O3"])],
        language_level="3",
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    ),
)
