import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# No -ffast-math and no FMA contraction: the compiled kernels must agree
# bit-for-bit with the numpy fallback in vqqat._kernels_py.
extensions = [
    Extension(
        "vqqat._kernels",
        ["src/vqqat/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
