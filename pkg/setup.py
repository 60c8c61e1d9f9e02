import os

from setuptools import Extension, setup

ext_modules = []
# portable by default; DSDUDA_NATIVE=1 tunes the kernels for the build machine
flags = ["-O3", "-ffast-math"] + (["-march=native"] if os.environ.get("DSDUDA_NATIVE") == "1" else [])
if os.environ.get("DSDUDA_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "dsduda._ckernels",
                    ["src/dsduda/_ckernels.pyx"],
                    libraries=["m"],
                    extra_compile_args=flags,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
