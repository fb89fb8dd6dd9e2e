import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off: the compiled kernels must be bit-identical to the pure
# Python fallback, so FMA contraction has to stay disabled.
extensions = [
    Extension(
        "vlnce_bench.kernels._ckern",
        ["src/vlnce_bench/kernels/_ckern.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
