import setuptools

setuptools.setup(
    version="0.1.0",
    package_data={"botdr": ["py.typed"]},
)
