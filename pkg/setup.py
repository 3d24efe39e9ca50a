# Builds the optional compiled kernels; the package falls back to numpy when
# the extension is unavailable.
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "fairgdiff._kernels",
                ["src/fairgdiff/_kernels.pyx"],
                # contraction would make the compiled distances differ from the
                # numpy fallback in the last ulp
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
