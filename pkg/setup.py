import numpy as np
from setuptools import Extension, setup

# The splat kernel compiles when Cython + a C compiler are available; the
# package falls back to the numpy kernel otherwise (optional=True keeps a
# failed compile from breaking the install).
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "viewx.pcrender._splat_cy",
                ["src/viewx/pcrender/_splat_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
