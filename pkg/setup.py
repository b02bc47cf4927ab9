from setuptools import find_packages, setup

setup(
    name="iontrap-ctrl-sim",
    version="0.1.0",
    description="Simulator of the classical control hardware of a trapped-ion quantum computer.",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["iontrapCtrl_api", "iontrapCtrl_cli"],
    package_data={"src": ["configs/*.yaml", "configs/scenarios/*.yaml"]},
    python_requires=">=3.9",
    install_requires=[
        "numpy",
        "scipy",
        "PyYAML",
        "jsonschema",
    ],
    extras_require={
        "test": ["pytest", "pytest-mock", "hypothesis"],
    },
    entry_points={
        "console_scripts": ["iontrap-ctrl=iontrapCtrl_cli:main"],
    },
)
