import setuptools

setuptools.setup(
    name="boxmask",
    packages=setuptools.find_packages(exclude=["tests"]),
    version="0.1.0",
    include_package_data=True,
)
