from setuptools import Extension, setup
from Cython.Build import cythonize

# -ffp-contract=off: the compiled kernels must match the pure-Python fallback
# bit for bit, so no FMA contraction and no fast-math reassociation.
extensions = [
    Extension(
        "lnmnet._kernels",
        sources=["src/lnmnet/_kernels.pyx"],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
