from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # fallback kernels are used
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("alertpipe._kernels", ["src/alertpipe/_kernels.pyx"], extra_compile_args=["-O3"], optional=True)],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
