from setuptools import find_packages, setup

setup(
    name="covshift",
    version="0.1.0",
    description="Kernel mean matching weights and doubly robust estimation under covariate shift",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    python_requires=">=3.8",
    install_requires=[
        "frozendict",
        "numpy",
        "scipy",
        "scikit-learn",
        "pandas",
        "joblib",
        "threadpoolctl",
    ],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["covshift=src.cli:main"]},
)
