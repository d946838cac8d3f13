from setuptools import setup, find_packages

setup(
    name="lamg",
    version="0.1.0",
    package_dir={"": "."},
    packages=find_packages(where=".", include=["lamg", "lamg.*"]),
    install_requires=[
        "numpy>=1.26.0",
        "scipy>=1.11.0",
        "pandas>=1.3.0",
        "pydantic>=2.0.0",
        "python-dotenv>=0.19.0",
        "plotly>=5.18.0",
        "kaleido>=0.2.1"
    ],
    extras_require={
        "test": [
            "pytest>=7.4.3",
            "pytest-cov>=4.1.0",
            "pytest-mock>=3.12.0",
            "coverage>=7.3.2"
        ]
    },
    entry_points={
        "console_scripts": [
            "lamg=lamg.main:main",
        ]
    },
    python_requires=">=3.9",
    author="Burakhan",
    description="Learned sizing fields for adaptive tetrahedral meshing of Poisson problems",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ]
)
