from setuptools import setup, find_packages

setup(
    name="distcomp",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    package_data={"distcomp.games": ["data/*.json"]},
    install_requires=[
        "python-dotenv==1.0.0",
        "pydantic==2.5.2",
        "pydantic-settings==2.1.0",
        "pytz==2023.3",
        "prometheus-client==0.19.0",
        "numpy>=1.26",
        "scipy>=1.11",
        "pandas>=2.1",
    ],
    entry_points={
        "console_scripts": [
            "distcomp=distcomp.cli:main",
        ],
    },
    python_requires=">=3.11",
)
