import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# -ffp-contract=off keeps the compiled kernel bit-identical to the pure-Python
# fallback (no FMA contraction); the two are compared exactly in the tests.
extensions = [
    Extension(
        "mpbuck._kernel",
        ["src/mpbuck/_kernel.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

if cythonize is not None:
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
else:
    ext_modules = []  # pure-Python fallback is selected at import time

setup(ext_modules=ext_modules)
