from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "devmf._kernels._wls_cython",
        ["src/devmf/_kernels/_wls_cython.pyx"],
    )
]

setup(ext_modules=cythonize(extensions, language_level="3"))
