from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    # -ffp-contract=off keeps the compiled solver bit-identical to the pure
    # Python fallback (no FMA contraction), which the determinism tests rely on.
    extensions = cythonize(
        [
            Extension(
                "softgen.simulator._core",
                ["src/softgen/simulator/_core.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython available: install pure-Python only, the solver falls back
    # to softgen.simulator._core_py at import time.
    extensions = []

setup(ext_modules=extensions)
