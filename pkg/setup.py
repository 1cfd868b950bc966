from setuptools import find_packages, setup

setup(
    name="simfex",
    version="0.1.1",
    packages=find_packages(exclude=["tests"]),
    package_data={"simfex": ["data/*.json"]},
    install_requires=[
        "logzero>=1.5.0",
        "numpy>=1.22",
        "scipy>=1.9",
        "statsmodels>=0.14",
        "pandas>=1.5",
    ],
    extras_require={"test": ["pytest>=7.0"]},
    python_requires=">=3.9",
    license="Apache 2.0",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Natural Language :: English",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    author="The simfex authors",
    description="Simulation-free extrapolation for regression on categorized error-prone covariates",
    entry_points={
        "console_scripts": [
            "simfex=simfex.simfex:main",
        ],
    },
)
