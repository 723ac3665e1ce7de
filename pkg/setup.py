from setuptools import Extension, setup

setup(
    ext_modules=[
        Extension(
            "blockprof._native",
            sources=["src/blockprof/_native.c"],
        )
    ]
)
