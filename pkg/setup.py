import numpy as np
from setuptools import Extension, setup

# The compiled fast path is optional: without Cython the package installs
# with the pure numpy backend only (selected automatically at import).
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "fedanom.backends._fastpath",
                ["src/fedanom/backends/_fastpath.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # -ffp-contract=off: the kernels must round exactly like the
                # equivalent numpy elementwise expressions (no FMA fusing),
                # which several exactness contracts rely on.
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
